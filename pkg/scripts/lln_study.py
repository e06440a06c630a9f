"""Median |theta^n(f) - theta*(f)| against n for the desk model, with growth-bound counts."""

import argparse
from pathlib import Path

from mfldp import io
from mfldp.desk import desk
from mfldp.ldp import lln_experiment


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, nargs="+", default=[64, 256, 1024])
    ap.add_argument("--replicas", type=int, default=32)
    ap.add_argument("--functional", default="tanh_c_T")
    ap.add_argument("--T", type=float, default=1.0)
    ap.add_argument("--dt", type=float, default=1 / 128)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", type=Path, default=Path("out/lln_study"))
    args = ap.parse_args()

    pi, nu, act = desk()
    res = lln_experiment(args.functional, args.n, args.replicas, nu, pi, act, dt=args.dt, seed=args.seed,
                         T=args.T, workers=args.workers)
    print(f"theta*(f) = {res.theta_star:.6f}")
    for r in res.rows:
        print(f"n={r['n']:>6d}  median |err| = {r['median_abs_error']:.5f}  iqr = {r['iqr']:.5f}")
    print(f"growth-bound violations: {res.growth_violations}")
    args.out.mkdir(parents=True, exist_ok=True)
    io.write_csv(args.out / "lln.csv", ["n", "median_abs_error", "iqr"], res.rows)
    io.line_plot(args.out / "lln.svg", [r["n"] for r in res.rows],
                 {"median |error|": [r["median_abs_error"] for r in res.rows]},
                 "n", "median |error|", logx=True, logy=True)
    print(f"wrote {args.out}/lln.csv and lln.svg")


if __name__ == "__main__":
    main()
