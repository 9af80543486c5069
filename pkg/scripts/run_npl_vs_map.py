"""Relative distance between the rho = 0 NPL mean and the MAP image at two exposure times."""
import argparse

from nplet.experiments import npl_vs_map


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--ts", type=float, nargs=2, default=[1.0, 100.0])
    ap.add_argument("--B", type=int, default=512)
    ap.add_argument("--n", type=int, default=64)
    ap.add_argument("--total", type=float, default=None, help="phantom activity (default: library default)")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()

    kw = {} if args.total is None else {"total": args.total}
    res = npl_vs_map(tuple(args.ts), args.B, args.n, seed=args.seed, workers=args.workers, **kw)
    for t, d in zip(res.ts, res.distances):
        print(f"t={t:g}  relative distance {d:.5f}")
    print(f"ratio {res.ratio:.3f} (target range [3.33, 30])  ({res.seconds:.1f} s)")


if __name__ == "__main__":
    main()
