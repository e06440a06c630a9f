"""Run every invariant check on the desk model and print a pass/fail table."""

import argparse
import sys

from mfldp.checks import format_table, run_all
from mfldp.desk import desk


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    pi, nu, act = desk()
    results = run_all(pi, nu, act, args.seed)
    print(format_table(results))
    return 0 if all(r.passed for r in results) else 1


if __name__ == "__main__":
    sys.exit(main())
