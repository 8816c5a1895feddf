"""Stability ratio as the perturbation amplitude is halved repeatedly, for a few bump shapes."""
import argparse
from pathlib import Path

from ebm_memory import io
from ebm_memory.inverse import AdmissibleSetSpec, stability_sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="results/stability")
    ap.add_argument("--halvings", type=int, default=8)
    args = ap.parse_args()
    sc = io.load_preset("inverse")
    params, inv = sc.build_params(), sc["inverse"]
    amps = [0.1 / 2**k for k in range(args.halvings)]
    rows = []
    for lo, hi in ((0.2, 0.6), (-0.4, 0.4), (-0.9, -0.5)):
        reps = stability_sweep(params, params.q_values(), AdmissibleSetSpec.bump(1.0, lo, hi),
                               amps, sc.build_u0(), t0=inv["t0"], T_prime=inv["T_prime"],
                               T=sc["run"]["T"], a=inv["a"], b=inv["b"],
                               target_dt=sc["run"]["target_dt"])
        for a, r in zip(amps, reps):
            rows.append([lo, hi, a, r.ratio])
        print(f"bump on [{lo}, {hi}]: " + " ".join(f"{r.ratio:.4f}" for r in reps))
    io.write_csv(Path(args.out) / "halving.csv", ["lo", "hi", "amplitude", "ratio"], rows)


if __name__ == "__main__":
    main()
