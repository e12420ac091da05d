"""Primitive count and Chamfer error of the chair fixture as the parsimony weight varies."""
import argparse

import numpy as np

from sqdec import synthetic
from sqdec.decomposer import DecomposeConfig, decompose_object
from sqdec.metrics import chamfer


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--values", type=float, nargs="+", default=[0.0, 0.3, 0.6, 1.0])
    ap.add_argument("--fixture", choices=("chair", "two_boxes", "table_and_chairs"), default="chair")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    X, _ = getattr(synthetic, args.fixture)()
    print("lambda_par,n_prim,l1_x100,l2_x100")
    for lp in args.values:
        d = decompose_object(X, DecomposeConfig(lambda_par=lp, seed=args.seed))
        l1 = 100 * chamfer(X, d.superquadrics, 4096, 1)
        l2 = 100 * chamfer(X, d.superquadrics, 4096, 2)
        print(f"{lp:g},{d.n_primitives},{l1:.5f},{l2:.5f}", flush=True)


if __name__ == "__main__":
    main()
