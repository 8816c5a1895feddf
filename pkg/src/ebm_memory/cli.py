"""Command-line entry point: ``ebm-memory <command> SCENARIO [options]``.

SCENARIO is a JSON file or ``@name`` for a shipped preset (``@sellers``,
``@budyko``, ``@inverse``).  Every command writes tidy CSV and JSON into
``--out``.  Exit status is 0 on success, 1 when the model rejects the input
or a check fails, and 2 for usage errors.
"""
from __future__ import annotations

import argparse
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import io
from .budyko import solve_budyko
from .errors import EBMError
from .inverse import (AdmissibleSetSpec, add_noise, observe_localized, reconstruct_q_direct,
                      reconstruct_q_leastsq, stability_sweep, uniqueness_experiment)
from .stepper import simulate
from .verify import SUITES, run_suites


def _float_list(text: str) -> list:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _scenario_arg(text: str) -> str:
    if text.startswith("@"):
        if text[1:] not in io.preset_names():
            raise argparse.ArgumentTypeError(
                f"unknown preset {text!r}; available: {', '.join(io.preset_names())}")
        return text
    if not Path(text).is_file():
        raise argparse.ArgumentTypeError(f"scenario file {text!r} does not exist")
    return text


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _map(fn, items, jobs):
    if jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(it) for it in items]


def _tag(v: float) -> str:
    return format(v, "g").replace("+", "").replace(".", "p")


def cmd_simulate(args) -> int:
    sc = io.load_scenario(args.scenario)
    out = _out(args)
    params = sc.build_params()
    run = sc["run"]
    T = args.T if args.T is not None else run["T"]
    traj = simulate(params, sc.build_u0(), T, run["target_dt"], bound_slack=run["bound_slack"],
                    stride=run["stride"], record_memory=args.memory)
    io.write_json(out / "scenario.json", sc.to_dict())
    io.write_trajectory(traj, out / "trajectory")
    summary = {"T": T, "dt": traj.dt, "sup_norm_seen": traj.sup_norm_seen, "bound_M": traj.bound,
               "margin": None if traj.bound is None else traj.bound - traj.sup_norm_seen,
               "bound_slack": run["bound_slack"], "params_digest": traj.params_digest}
    io.write_json(out / "summary.json", summary)
    if traj.bound is None:
        print(f"sup|u| = {traj.sup_norm_seen:.10g} (no a-priori bound for this emission law)")
    else:
        print(f"sup|u| = {traj.sup_norm_seen:.10g}  M = {traj.bound:.10g}  "
              f"margin = {summary['margin']:.3e}")
    return 0


def cmd_budyko(args) -> int:
    sc = io.load_scenario(args.scenario)
    out = _out(args)
    params = sc.build_params()
    cfg, run = sc["budyko"], sc["run"]
    tol = args.tol if args.tol is not None else cfg["tol"]
    sol = solve_budyko(params, sc.build_u0(), run["T"], run["target_dt"],
                       sc["coalbedo"]["j_schedule"], tol, band_tol=cfg["band_tol"],
                       value_tol=cfg["value_tol"], stop_early=cfg["stop_early"])
    io.write_json(out / "scenario.json", sc.to_dict())
    io.write_trajectory(sol.trajectory, out / "u_inf")
    x = params.grid.centers
    io.write_csv(out / "gamma.csv", ["t", *[f"x_{i}" for i in range(x.size)]],
                 ([t, *row] for t, row in zip(sol.trajectory.times, sol.gamma)))
    gaps = ["", *sol.gaps]
    io.write_csv(out / "cauchy_gaps.csv", ["j", "gap", "sup_norm"],
                 ([str(j), g, s] for j, g, s in zip(sol.j_values, gaps, sol.sup_norms)))
    report = sol.inclusion_report.to_dict()
    report.update(j_final=sol.j_final, cauchy_gap=sol.cauchy_gap, tol=tol)
    io.write_json(out / "inclusion_report.json", report)
    print(f"j_final = {sol.j_final}  Cauchy gap = {sol.cauchy_gap:.4e}  "
          f"violations = {len(sol.inclusion_report.violations)}")
    return 0 if sol.inclusion_report.ok else 1


def _invert_one(job):
    sc, mode, sigma, reg = job
    params = sc.build_params()
    run, inv = sc["run"], sc["inverse"]
    u0 = sc.build_u0()
    traj = simulate(params, u0, run["T"], run["target_dt"], check_bound=False)
    q_true = params.q_values()
    if mode == "direct":
        res = reconstruct_q_direct(add_noise(traj, sigma, run["seed"]), params, inv["t_eval"],
                                   q_true=q_true)
    else:
        obs = observe_localized(traj, params, inv["t0"], inv["T_prime"], inv["a"], inv["b"],
                                sigma, run["seed"], allow_late=inv["allow_late"])
        res = reconstruct_q_leastsq(obs, params, u0, reg, q_true=q_true,
                                    max_iters=inv["max_iters"])
    return sigma, res


def cmd_invert(args) -> int:
    sc = io.load_scenario(args.scenario)
    out = _out(args)
    reg = args.reg if args.reg is not None else sc["inverse"]["reg_weight"]
    jobs = [(sc, args.mode, s, reg) for s in args.noise]
    results = _map(_invert_one, jobs, args.jobs)
    io.write_json(out / "scenario.json", sc.to_dict())
    rows = []
    for sigma, res in results:
        stem = out / f"{args.mode}_noise_{_tag(sigma)}"
        io.write_reconstruction(res, stem, {"mode": args.mode, "noise_level": sigma,
                                            "seed": sc["run"]["seed"]})
        rows.append([sigma, res.rel_l2_error, res.residual_norm, str(res.iterations)])
        print(f"noise = {sigma:g}  rel_l2_error = {res.rel_l2_error:.4e}"
              + ("  (exploratory)" if res.exploratory else ""))
    io.write_csv(out / "noise_sweep.csv", ["noise", "rel_l2_error", "residual_norm", "iterations"],
                 rows)
    pos = [(s, r[1]) for s, r in zip(args.noise, rows) if s > 0 and r[1] > 0]
    if len(pos) >= 2:
        s, e = np.log(np.array(pos)).T
        slope = float(np.polyfit(s, e, 1)[0])
        io.write_json(out / "noise_slope.json", {"loglog_slope": slope})
        print(f"log-log slope of error vs noise = {slope:.3f}")
    return 0


def _bump(sc, height=None):
    b = sc["inverse"]["bump"]
    return AdmissibleSetSpec.bump(b["height"] if height is None else height, b["lo"], b["hi"])


def cmd_uniqueness(args) -> int:
    sc = io.load_scenario(args.scenario)
    out = _out(args)
    params = sc.build_params()
    run, inv = sc["run"], sc["inverse"]
    x0 = args.x0 if args.x0 is not None else inv["x0"]
    q = params.insolation.q
    bump = _bump(sc)
    q_tilde = (lambda x: q(x)) if args.identical else (lambda x: q(x) + bump(x))
    rep = uniqueness_experiment(params, q, q_tilde, sc.build_u0(), x0, run["T"], run["target_dt"])
    io.write_json(out / "scenario.json", sc.to_dict())
    io.write_csv(out / "discrepancy.csv", ["t", "du", "dux"], zip(rep.times, rep.du, rep.dux))
    io.write_json(out / "uniqueness.json", {
        "x0": rep.x0, "x0_requested": rep.x0_requested, "max_discrepancy": rep.max_discrepancy,
        "q_equal": rep.q_equal, "first_sign": rep.first_sign,
        "memory_identical": rep.memory_identical, "verdict": rep.verdict(),
    })
    print(rep.verdict())
    return 0


def cmd_stability(args) -> int:
    sc = io.load_scenario(args.scenario)
    out = _out(args)
    params = sc.build_params()
    run, inv = sc["run"], sc["inverse"]
    amps = args.sweep if args.sweep is not None else inv["amplitudes"]
    reps = stability_sweep(params, params.insolation.q, _bump(sc, 1.0), amps, sc.build_u0(),
                           t0=inv["t0"], T_prime=inv["T_prime"], T=run["T"], a=inv["a"],
                           b=inv["b"], target_dt=run["target_dt"])
    io.write_json(out / "scenario.json", sc.to_dict())
    io.write_csv(out / "stability.csv",
                 ["amplitude", "ratio", "numerator", "snapshot_term", "ut_term", "history_term"],
                 ([a, r.ratio, r.numerator, r.snapshot_term, r.ut_term, r.history_term]
                  for a, r in zip(amps, reps)))
    ratios = np.array([r.ratio for r in reps])
    med = float(np.median(ratios))
    summary = {"max_ratio": float(ratios.max()), "median_ratio": med,
               "bounded": bool(np.all(np.isfinite(ratios)) and ratios.max() <= 10 * med)}
    io.write_json(out / "stability_summary.json", summary)
    for a, r in zip(amps, reps):
        print(f"amplitude = {a:g}  ratio = {r.ratio:.6g}")
    return 0 if summary["bounded"] else 1


def cmd_verify(args) -> int:
    checks = run_suites(args.suite)
    for c in checks:
        print(c.line())
    if args.out:
        io.write_json(_out(args) / "verify.json",
                      [{"name": c.name, "passed": c.passed, "detail": c.detail} for c in checks])
    return 0 if all(c.passed for c in checks) else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ebm-memory", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)

    def scen(sp):
        sp.add_argument("scenario", type=_scenario_arg, help="scenario JSON file or @preset")
        sp.add_argument("--out", default="out", help="output directory (default: out)")

    sp = sub.add_parser("simulate", help="forward run with the sup-norm monitor")
    scen(sp)
    sp.add_argument("--T", type=float, help="override the final time")
    sp.add_argument("--memory", action="store_true", help="also store the history integral H")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("budyko", help="regularized Budyko solve and inclusion report")
    scen(sp)
    sp.add_argument("--tol", type=float, help="Cauchy gap tolerance")
    sp.set_defaults(func=cmd_budyko)

    sp = sub.add_parser("invert", help="reconstruct q from self-generated data")
    scen(sp)
    sp.add_argument("--mode", choices=("direct", "leastsq"), default="direct")
    sp.add_argument("--noise", type=_float_list, default=[0.0],
                    help="noise level or comma-separated sweep (default: 0)")
    sp.add_argument("--reg", type=float, help="Tikhonov weight (least squares only)")
    sp.add_argument("--jobs", type=int, default=1, help="parallel runs for a noise sweep")
    sp.set_defaults(func=cmd_invert)

    sp = sub.add_parser("uniqueness", help="compare runs with q and a bump-perturbed q")
    scen(sp)
    sp.add_argument("--x0", type=float, help="observation point in (-1, 1)")
    sp.add_argument("--identical", action="store_true", help="use q~ = q (control run)")
    sp.set_defaults(func=cmd_uniqueness)

    sp = sub.add_parser("stability", help="stability ratio over perturbation amplitudes")
    scen(sp)
    sp.add_argument("--sweep", type=_float_list, help="comma-separated perturbation amplitudes")
    sp.set_defaults(func=cmd_stability)

    sp = sub.add_parser("verify", help="run the built-in invariant suites")
    sp.add_argument("--suite", choices=(*SUITES, "all"), default="all")
    sp.add_argument("--out", help="optionally write verify.json here")
    sp.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "jobs", 1) < 1:
        parser.error("--jobs must be >= 1")
    try:
        return args.func(args)
    except EBMError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
