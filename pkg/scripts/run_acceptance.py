"""Run the acceptance suite for one or more seeds and print a summary table.

    python3 scripts/run_acceptance.py --seeds 0 1 2 --out runs/acceptance
"""

import argparse
from pathlib import Path

from wviab import acceptance


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--out", type=Path, default=Path("runs/acceptance"))
    ap.add_argument("--determinism", action="store_true", help="also rerun each seed and compare bytes")
    args = ap.parse_args()

    failures = 0
    for seed in args.seeds:
        print(f"seed {seed}")
        out = args.out / f"seed{seed}"
        results = acceptance.run_suite(seed, out, echo=lambda s: print("  " + s))
        if args.determinism:
            det = acceptance.determinism_result(out, seed)
            print("  " + det.line())
            results.append(det)
        failures += sum(not r.passed for r in results)
    print(f"{failures} failing criteria across {len(args.seeds)} seed(s)")
    raise SystemExit(1 if failures else 0)


if __name__ == "__main__":
    main()
