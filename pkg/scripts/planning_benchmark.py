"""Decompose the synthetic room per instance, then compare planning on four scene representations."""
import argparse
import time

from sqdec import synthetic
from sqdec.decomposer import DecomposeConfig, decompose_object
from sqdec.io_scene import split_instances
from sqdec.planner import (
    Bounds,
    OccupancyGrid,
    PlannerSettings,
    RawPoints,
    SuperquadricSet,
    VoxelGrid,
    bench_csv,
    bench_summary,
    benchmark,
    reference_queries,
)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--queries", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--p", type=int, default=16, help="initial primitives per object")
    ap.add_argument("--csv", help="write per-query rows here")
    args = ap.parse_args()

    t0 = time.perf_counter()
    pc = synthetic.room(seed=args.seed)
    sqs = []
    for _, obj in split_instances(pc).objects:
        sqs += decompose_object(obj, DecomposeConfig(P=args.p, seed=args.seed)).superquadrics
    print(f"decomposed into {len(sqs)} primitives in {time.perf_counter() - t0:.1f}s")

    bounds = Bounds.around(pc.positions)
    occ = OccupancyGrid(pc.positions, bounds)
    settings = PlannerSettings(seed=args.seed)
    queries, rejected = reference_queries(occ, args.queries, args.seed, settings=settings)
    print(f"{len(queries)} queries ({rejected} candidates the occupancy planner could not solve)")
    reps = [SuperquadricSet(sqs, bounds), RawPoints(pc.positions, bounds), VoxelGrid(pc.positions, bounds)]
    rows = benchmark(reps, queries, occ, settings)
    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write(bench_csv(rows))
    print(f"{'rep':<14}{'success':>9}{'check ms':>11}{'optimality':>12}{'memory MB':>11}")
    for name, s in bench_summary(rows).items():
        print(f"{name:<14}{100 * s['success']:>8.1f}%{s['check_time_ms']:>11.4f}{s['optimality']:>12.3f}"
              f"{s['memory_bytes'] / 1e6:>11.4f}")


if __name__ == "__main__":
    main()
