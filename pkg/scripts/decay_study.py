"""-(1/n') log p_hat against n for a desk event, compared with the J upper bound."""

import argparse
from pathlib import Path

from mfldp import io
from mfldp.desk import desk
from mfldp.ldp import EventSpec, OptConfig, decay_curve, estimate_J

HEADER = ["n", "n_prime", "p_hat", "ci_halfwidth", "ess", "minus_log_p_over_nprime", "rate_lo", "rate_hi", "flagged"]


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--threshold", type=float, default=0.2)
    ap.add_argument("--n", type=int, nargs="+", default=[32, 64, 128])
    ap.add_argument("--replicas", type=int, default=10_000)
    ap.add_argument("--method", choices=["naive", "tilted"], default="tilted")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", type=Path, default=Path("out/decay_study"))
    args = ap.parse_args()

    pi, nu, act = desk()
    event = EventSpec("tanh_c_T", args.threshold)
    est = estimate_J(event, nu, pi, OptConfig(T=1.0), act)
    print(f"J upper bound: {est.value:.5f} ({est.status})")
    rows = decay_curve(event, args.n, args.method, args.replicas, args.seed, pi, nu, act, 1.0,
                       est if args.method == "tilted" else None, args.workers)
    for r in rows:
        band = "in band" if 0.2 * est.value <= r["minus_log_p_over_nprime"] <= 5 * est.value else "OUT OF BAND"
        print(f"n={r['n']:>4d}  p={r['p_hat']:.3e} +- {r['ci_halfwidth']:.1e}  "
              f"rate={r['minus_log_p_over_nprime']:.4f}  ({band})")
    args.out.mkdir(parents=True, exist_ok=True)
    io.write_csv(args.out / "decay.csv", HEADER, rows)
    io.line_plot(args.out / "decay.svg", [r["n"] for r in rows],
                 {"-(1/n') log p_hat": [r["minus_log_p_over_nprime"] for r in rows],
                  "J upper bound": [est.value] * len(rows)}, "n", "rate")
    print(f"wrote {args.out}/decay.csv and decay.svg")


if __name__ == "__main__":
    main()
