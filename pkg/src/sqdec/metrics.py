"""Chamfer distances and primitive counts for evaluating decompositions.

Chamfer convention: the mean of the two directed mean nearest-neighbour
distances (each raised to ``order``). Reports multiply by 100.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .geometry import PointCloud, sample_surface

CSV_HEADER = ["id", "l1_x100", "l2_x100", "n_prim"]
REPORT_NOTE = "chamfer = 0.5 * (mean_pc NN^p + mean_samples NN^p), scaled by 100"


def _positions(pc):
    return pc.positions if isinstance(pc, PointCloud) else np.asarray(pc, dtype=float)


def chamfer_points(a, b, order: int = 1) -> float:
    """Symmetric Chamfer distance between two raw point sets."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("chamfer needs two non-empty point sets")
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    d_ab = cKDTree(b).query(a)[0]
    d_ba = cKDTree(a).query(b)[0]
    return float(0.5 * (np.mean(d_ab**order) + np.mean(d_ba**order)))


def chamfer(pc, sqs, S: int = 4096, order: int = 1) -> float:
    """Chamfer distance between a cloud and ``S`` surface samples per primitive."""
    X = _positions(pc)
    if len(X) == 0:
        raise ValueError("empty point cloud")
    if not sqs:
        raise ValueError("need at least one superquadric")
    samples = np.vstack([sample_surface(sq, S) for sq in sqs])
    return chamfer_points(X, samples, order)


def primitive_count(decomposition) -> int:
    return len(decomposition.superquadrics)


@dataclass
class EvalRow:
    id: str
    l1_x100: float
    l2_x100: float
    n_prim: int

    def as_dict(self):
        return {"id": self.id, "l1_x100": self.l1_x100, "l2_x100": self.l2_x100, "n_prim": self.n_prim}


def evaluate(pc, sqs, S: int = 4096, id="0") -> EvalRow:
    X = _positions(pc)
    samples = np.vstack([sample_surface(sq, S) for sq in sqs])
    return EvalRow(str(id), 100 * chamfer_points(X, samples, 1), 100 * chamfer_points(X, samples, 2), len(sqs))


def eval_report(dataset, S: int = 4096) -> list[EvalRow]:
    """Rows for ``[(id, pc, superquadrics), ...]`` followed by a ``mean`` row."""
    dataset = list(dataset)
    if not dataset:
        raise ValueError("empty dataset")
    rows = [evaluate(pc, sqs, S, id) for id, pc, sqs in dataset]
    rows.append(EvalRow(
        "mean",
        float(np.mean([r.l1_x100 for r in rows])),
        float(np.mean([r.l2_x100 for r in rows])),
        float(np.mean([r.n_prim for r in rows])),
    ))
    return rows


def report_csv(rows) -> str:
    buf = io.StringIO()
    buf.write(f"# {REPORT_NOTE}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow([r.id, repr(float(r.l1_x100)), repr(float(r.l2_x100)), r.n_prim])
    return buf.getvalue()


def report_json(rows) -> str:
    return json.dumps([r.as_dict() for r in rows], indent=2) + "\n"
