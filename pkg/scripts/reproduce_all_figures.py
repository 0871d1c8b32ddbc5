"""Write the CSV data behind every pinned sample-path figure.

    python scripts/reproduce_all_figures.py --out figures --n-paths 20 --jobs 4
"""

import argparse

from stochavg import figures


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="figures")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--n-paths", type=int, default=figures.DEFAULTS["n_paths"])
    ap.add_argument("--t1", type=float, default=figures.DEFAULTS["t1"])
    ap.add_argument("--only", type=int, nargs="*", default=sorted(figures.MANIFEST))
    args = ap.parse_args()
    for index in args.only:
        print(figures.describe(index, seed=args.seed, n_paths=args.n_paths, t1=args.t1))
        files = figures.reproduce_figure(index, f"{args.out}/fig{index}", seed=args.seed, jobs=args.jobs,
                                         n_paths=args.n_paths, t1=args.t1)
        for f in files:
            print(f"  wrote {f}")


if __name__ == "__main__":
    main()
