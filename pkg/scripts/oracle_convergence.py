"""Error of the IMEX stepper against the dense exponential reference as dt is halved."""
import argparse
from pathlib import Path

from ebm_memory import io
from ebm_memory.verify import oracle_ratio


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="results/oracle")
    ap.add_argument("--steps", type=int, default=5)
    args = ap.parse_args()
    rows = []
    for dt in (0.04, 0.02, 0.01, 0.005, 0.0025):
        e1, e2, ratio = oracle_ratio(dt, args.steps)
        rows.append([dt, e1, e2, ratio])
        print(f"dt={dt:<7g} err={e1:.3e} err(dt/2)={e2:.3e} ratio={ratio:.3f}")
    io.write_csv(Path(args.out) / "oracle_convergence.csv", ["dt", "err", "err_half", "ratio"], rows)


if __name__ == "__main__":
    main()
