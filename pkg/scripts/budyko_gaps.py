"""Cauchy gaps of the regularized Budyko runs versus j, and the inclusion check per j."""
import argparse
from pathlib import Path

from ebm_memory import io
from ebm_memory.budyko import solve_budyko


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="results/budyko")
    ap.add_argument("--jmax", type=int, default=1024)
    args = ap.parse_args()
    sc = io.load_preset("budyko")
    params, run = sc.build_params(), sc["run"]
    schedule = [j for j in (4, 8, 16, 32, 64, 128, 256, 512, 1024) if j <= args.jmax]
    sol = solve_budyko(params, sc.build_u0(), run["T"], run["target_dt"], schedule, tol=1.0,
                       value_tol=1e-4, stop_early=False)
    rows = [[str(j), g, s] for j, g, s in zip(sol.j_values[1:], sol.gaps, sol.sup_norms[1:])]
    for j, g, s in rows:
        print(f"j={j:>5} gap={g:.5e} sup|u|={s:.4f}")
    print(f"violations at j={sol.j_final}: {len(sol.inclusion_report.violations)}")
    io.write_csv(Path(args.out) / "gaps.csv", ["j", "gap", "sup_norm"], rows)
    io.write_json(Path(args.out) / "inclusion_report.json", sol.inclusion_report.to_dict())


if __name__ == "__main__":
    main()
