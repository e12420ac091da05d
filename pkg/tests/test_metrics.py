import csv
import io
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_sq
from oracles import chamfer_brute
from sqdec.decomposer import Decomposition
from sqdec.geometry import Superquadric, sample_surface
from sqdec.metrics import (
    CSV_HEADER,
    chamfer,
    chamfer_points,
    eval_report,
    primitive_count,
    report_csv,
    report_json,
)

UNIT = Superquadric.sphere(1.0)


def parse_csv(text):
    lines = text.splitlines()
    assert lines[0].startswith("#")
    return list(csv.DictReader(io.StringIO("\n".join(lines[1:]))))


class TestChamfer:
    def test_identical(self):
        s = sample_surface(UNIT, 64)
        assert chamfer(s, [UNIT], 64, 1) == 0 and chamfer(s, [UNIT], 64, 2) == 0

    def test_single_pair(self):
        a, b = np.zeros((1, 3)), np.array([[1.0, 0, 0]])
        assert chamfer_points(a, b, 1) == 1.0 and chamfer_points(a, b, 2) == 1.0

    def test_brute_force(self, rng):
        for _ in range(10):
            a = rng.normal(size=(32, 3))
            b = rng.normal(size=(int(rng.integers(1, 40)), 3))
            for order in (1, 2):
                assert chamfer_points(a, b, order) == pytest.approx(chamfer_brute(a, b, order), abs=1e-10)

    def test_against_samples_brute(self, rng):
        sqs = [random_sq(rng) for _ in range(2)]
        X = rng.normal(size=(32, 3)) * 0.3
        Y = np.vstack([sample_surface(sq, 16) for sq in sqs])
        assert chamfer(X, sqs, 16, 2) == pytest.approx(chamfer_brute(X, Y, 2), abs=1e-10)

    def test_errors(self):
        with pytest.raises(ValueError):
            chamfer(np.zeros((0, 3)), [UNIT])
        with pytest.raises(ValueError):
            chamfer(np.zeros((1, 3)), [])
        with pytest.raises(ValueError):
            chamfer_points(np.zeros((1, 3)), np.zeros((1, 3)), 3)

    def test_symmetric_nonnegative(self, rng):
        a, b = rng.normal(size=(20, 3)), rng.normal(size=(13, 3))
        assert chamfer_points(a, b) == chamfer_points(b, a) >= 0

    def test_order_two_equals_one_for_unit_gaps(self):
        # every NN distance is exactly 0 or 1
        a = np.array([[0.0, 0, 0], [5.0, 0, 0], [10.0, 0, 0]])
        b = np.array([[0.0, 0, 0], [6.0, 0, 0], [10.0, 1.0, 0]])
        assert chamfer_points(a, b, 2) == chamfer_points(a, b, 1) == pytest.approx(2 / 3)

    @given(st.floats(0.1, 10.0))
    def test_scaling(self, c):
        rng = np.random.default_rng(7)
        a, b = rng.normal(size=(30, 3)), rng.normal(size=(25, 3))
        assert chamfer_points(c * a, c * b, 1) == pytest.approx(c * chamfer_points(a, b, 1), rel=1e-12)
        assert chamfer_points(c * a, c * b, 2) == pytest.approx(c * c * chamfer_points(a, b, 2), rel=1e-12)


class TestCount:
    def test_count(self):
        d = Decomposition([UNIT, UNIT], None, np.zeros(3), 1.0)
        assert primitive_count(d) == 2
        assert primitive_count(Decomposition([UNIT], None, np.zeros(3), 1.0, fallback=True)) == 1


class TestReport:
    def fixtures(self):
        box_a = Superquadric([0.2, 0.2, 0.2], [0.1, 0.1], translation=[-0.5, 0, 0])
        box_b = Superquadric([0.1, 0.2, 0.1], [0.1, 0.1], translation=[0.5, 0, 0])
        boxes = np.vstack([sample_surface(box_a, 500), sample_surface(box_b, 500)])
        return [("boxes", boxes, [box_a, box_b]), ("sphere", sample_surface(UNIT, 300), [UNIT])]

    def test_mean_count(self):
        rows = eval_report(self.fixtures(), S=256)
        assert [r.id for r in rows] == ["boxes", "sphere", "mean"]
        assert rows[-1].n_prim == 1.5
        assert rows[-1].l2_x100 == pytest.approx((rows[0].l2_x100 + rows[1].l2_x100) / 2)

    def test_single_object(self):
        rows = eval_report(self.fixtures()[:1], S=256)
        assert rows[0].l1_x100 == rows[1].l1_x100 and rows[0].n_prim == rows[1].n_prim

    def test_duplicates(self):
        f = self.fixtures()[1]
        rows = eval_report([f, f], S=256)
        assert rows[0].as_dict() == rows[1].as_dict()
        assert rows[2].l1_x100 == rows[0].l1_x100

    def test_scaled_by_100(self):
        _, X, sqs = self.fixtures()[0]
        row = eval_report([("x", X, sqs)], S=128)[0]
        assert row.l1_x100 == pytest.approx(100 * chamfer(X, sqs, 128, 1), rel=1e-14)

    def test_csv_json_agree(self):
        rows = eval_report(self.fixtures(), S=256)
        text = report_csv(rows)
        parsed = parse_csv(text)
        assert list(parsed[0].keys()) == CSV_HEADER
        data = json.loads(report_json(rows))
        for c, j in zip(parsed, data):
            assert c["id"] == j["id"]
            assert float(c["l1_x100"]) == j["l1_x100"] and float(c["l2_x100"]) == j["l2_x100"]
            assert float(c["n_prim"]) == j["n_prim"]
        assert report_csv(eval_report(self.fixtures(), S=256)) == text

    def test_empty(self):
        with pytest.raises(ValueError):
            eval_report([])
