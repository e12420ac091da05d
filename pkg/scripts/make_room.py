"""Write the synthetic fixtures used by the tests and benchmarks as point-cloud files.

    python3 scripts/make_room.py out/
"""
import argparse
from pathlib import Path

import numpy as np

from sqdec import synthetic
from sqdec.geometry import PointCloud
from sqdec.io_scene import write_ply


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("outdir", type=Path)
    ap.add_argument("--density", type=float, default=400.0, help="room points per square metre")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--ascii", action="store_true", help="ASCII PLY instead of binary")
    args = ap.parse_args()
    args.outdir.mkdir(parents=True, exist_ok=True)

    room = synthetic.room(args.density, args.seed)
    room = PointCloud(room.positions, instance_ids=room.instance_ids.astype(np.uint32))
    fixtures = {"room": room}
    for name, make in (("two_boxes", synthetic.two_boxes), ("chair", synthetic.chair),
                       ("table_and_chairs", synthetic.table_and_chairs)):
        X, part = make(seed=args.seed)
        fixtures[name] = PointCloud(X, instance_ids=part.astype(np.uint32))
    for name, pc in fixtures.items():
        path = args.outdir / f"{name}.ply"
        write_ply(pc, path, binary=not args.ascii)
        print(f"{path}: {len(pc)} points, {len(np.unique(pc.instance_ids))} ids")


if __name__ == "__main__":
    main()
