"""Distance of the NPL posterior mean to lambda_opt as the exposure time grows."""
import argparse

from nplet.experiments import consistency_sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--ts", type=float, nargs="+", default=[1e2, 1e4, 1e6])
    ap.add_argument("--rho", type=float, default=0.5)
    ap.add_argument("--B", type=int, default=200)
    ap.add_argument("--n", type=int, default=16)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()

    res = consistency_sweep(args.ts, args.rho, args.B, args.n, seed=args.seed, workers=args.workers)
    for t, d in zip(res.ts, res.distances):
        print(f"t={t:10.3g}  ||mean - lambda_opt|| = {d:.6g}")
    dec = all(a > b for a, b in zip(res.distances, res.distances[1:]))
    print(f"strictly decreasing: {dec}  ({res.seconds:.1f} s)")


if __name__ == "__main__":
    main()
