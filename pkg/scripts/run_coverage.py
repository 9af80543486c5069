"""Coverage of lambda_opt by NPL credible bands for several mixing parameters."""
import argparse
from pathlib import Path

import numpy as np

from nplet import io as nio
from nplet.experiments import coverage_study


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--rhos", type=float, nargs="+", default=[0.0, 1.0])
    ap.add_argument("--B", type=int, default=1000)
    ap.add_argument("--level", type=float, default=0.95)
    ap.add_argument("--n", type=int, default=64)
    ap.add_argument("--total", type=float, default=None)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", type=Path, default=None, help="write band images here")
    args = ap.parse_args()

    kw = {} if args.total is None else {"total": args.total}
    res = coverage_study(tuple(args.rhos), args.B, args.level, args.n, seed=args.seed, workers=args.workers, **kw)
    for rho, f, v in zip(res.rhos, res.fractions, res.variances):
        print(f"rho={rho:<5g} coverage {f:.3f}  mean posterior variance on support {v:.4g}")
    print(f"({res.seconds:.1f} s)")
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        nio.write_image(args.out / "lambda_opt.npli", res.target, args.n, args.n)
        for rho, s in res.summaries.items():
            for stem, img in (("lower", s.lower), ("mean", s.mean), ("upper", s.upper)):
                nio.write_pgm16(args.out / f"rho{rho:g}_{stem}.pgm", np.asarray(img), args.n, args.n)


if __name__ == "__main__":
    main()
