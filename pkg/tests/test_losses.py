import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_sq
from oracles import pc_to_sq_brute, sq_to_pc_brute
from sqdec.geometry import Superquadric, sample_surface
from sqdec.losses import (
    LossBreakdown,
    existence_from_assignment,
    loss_existence,
    loss_parsimony,
    loss_pc_to_sq,
    loss_sq_to_pc,
    soft_assign,
    total_objective,
)

UNIT = Superquadric.sphere(1.0)


class TestSoftAssign:
    def test_single(self, rng):
        M = soft_assign(rng.normal(size=(10, 3)), [UNIT], 20.0)
        assert np.all(M == 1.0)

    def test_identical_pair(self, rng):
        M = soft_assign(rng.normal(size=(10, 3)), [UNIT, UNIT], 20.0)
        assert np.allclose(M, 0.5)

    def test_near_hard(self):
        # on A's surface, distance 1 from B
        A = Superquadric.sphere(1.0)
        B = Superquadric.sphere(1.0, center=(3.0, 0, 0))
        M = soft_assign(np.array([[1.0, 0, 0]]), [A, B], 20.0)
        ref = 1.0 / (1.0 + np.exp(-20.0))
        assert M[0, 0] == pytest.approx(ref, rel=1e-14)
        assert M[0, 0] > 1 - 1e-8

    def test_errors(self):
        with pytest.raises(ValueError):
            soft_assign(np.zeros((2, 3)), [], 1.0)
        with pytest.raises(ValueError):
            soft_assign(np.zeros((2, 3)), [UNIT], 0.0)

    def test_permutation_equivariant(self, rng):
        sqs = [random_sq(rng) for _ in range(4)]
        X = rng.normal(size=(50, 3)) * 0.3
        perm = [2, 0, 3, 1]
        assert np.allclose(soft_assign(X, sqs, 20)[:, perm], soft_assign(X, [sqs[i] for i in perm], 20))

    def test_rows_stochastic(self, rng):
        sqs = [random_sq(rng) for _ in range(5)]
        M = soft_assign(rng.normal(size=(100, 3)), sqs, 200.0)
        assert np.all((M >= 0) & (M <= 1))
        assert np.allclose(M.sum(axis=1), 1, atol=1e-12)


class TestChamferTerms:
    def test_pc_subset_of_samples(self, rng):
        sq = random_sq(rng)
        samples = [sample_surface(sq, 64)] * 2
        X = samples[0][rng.choice(64, 10, replace=False)]
        M = rng.dirichlet([1, 1], size=10)
        assert loss_pc_to_sq(X, [sq, sq], M, samples=samples) == 0.0

    def test_single_point(self):
        samples = [np.array([[0.2, 0.0, 0.0]])]
        assert loss_pc_to_sq(np.zeros((1, 3)), [UNIT], np.ones((1, 1)), samples=samples) == pytest.approx(0.2)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            loss_pc_to_sq(np.zeros((3, 3)), [UNIT], np.ones((2, 1)))

    def test_brute_force(self, rng):
        for _ in range(10):
            N, P, S = rng.integers(1, 12), rng.integers(1, 4), rng.integers(8, 20)
            sqs = [random_sq(rng) for _ in range(P)]
            samples = [sample_surface(sq, S) for sq in sqs]
            X = rng.normal(size=(N, 3)) * 0.4
            M = rng.dirichlet(np.ones(P), size=N)
            alpha = rng.uniform(0.1, 1, P)
            assert loss_pc_to_sq(X, sqs, M, samples=samples) == pytest.approx(
                pc_to_sq_brute(X, samples, M), abs=1e-10)
            assert loss_sq_to_pc(X, sqs, alpha, samples=samples) == pytest.approx(
                sq_to_pc_brute(X, samples, alpha), abs=1e-10)

    def test_sq_to_pc_zero(self):
        s = sample_surface(UNIT, 64)
        assert loss_sq_to_pc(s, [UNIT], [1.0], S=64) == 0.0

    def test_sq_to_pc_constant(self):
        s = sample_surface(UNIT, 64)
        X = s + np.array([0, 0, 0.1])
        assert loss_sq_to_pc(X, [UNIT], [1.0], samples=[s]) == pytest.approx(0.1, abs=1e-12)

    def test_zero_weight_elimination(self, rng):
        a, b = random_sq(rng), random_sq(rng)
        X = rng.normal(size=(30, 3)) * 0.3
        assert loss_sq_to_pc(X, [a, b], [1, 0], S=64) == pytest.approx(loss_sq_to_pc(X, [a], [1], S=64))

    def test_no_active(self):
        with pytest.raises(ValueError):
            loss_sq_to_pc(np.zeros((2, 3)), [UNIT], [0.0])
        with pytest.raises(ValueError):
            loss_sq_to_pc(np.zeros((2, 3)), [UNIT], [-1.0])


class TestParsimony:
    def test_uniform_and_one_hot(self):
        N, P = 4096, 16
        assert loss_parsimony(np.full((N, P), 1 / P)) == pytest.approx(1 / 4096, rel=1e-14)
        M = np.zeros((N, P))
        M[:, 0] = 1
        assert loss_parsimony(M) == pytest.approx(1 / 65536, rel=1e-14)

    @pytest.mark.parametrize("P", range(2, 10))
    def test_one_hot_below_uniform(self, P):
        M = np.zeros((P * 3, P))
        M[:, 0] = 1
        assert loss_parsimony(M) < loss_parsimony(np.full((P * 3, P), 1 / P))

    def test_column_permutation(self, rng):
        M = rng.dirichlet(np.ones(6), size=40)
        assert loss_parsimony(M[:, ::-1]) == pytest.approx(loss_parsimony(M), rel=1e-14)

    @given(st.floats(0.0, 0.5), st.floats(0.0, 0.5))
    def test_concentration_lowers(self, q1, q2):
        # P=2 with mass split (q, 1-q): larger imbalance, smaller loss
        def loss(q):
            return loss_parsimony(np.array([[q, 1 - q]]))

        lo, hi = sorted((q1, q2))
        assert loss(lo) <= loss(hi) + 1e-15
        assert loss(0.5) >= loss(lo)


class TestExistence:
    def test_uniform_all_true(self):
        assert existence_from_assignment(np.full((4096, 16), 1 / 16), 24).all()

    def test_zero_and_boundary(self):
        M = np.zeros((48, 3))
        M[:24, 0] = 1
        M[24:, 1] = 1
        assert existence_from_assignment(M, 24).tolist() == [False, False, False]
        assert existence_from_assignment(M, 23).tolist() == [True, True, False]

    def test_bce(self):
        assert loss_existence([1.0, 0.0], [1, 0]) == pytest.approx(-np.log(1 - 1e-7), rel=1e-6)
        assert loss_existence([0.5], [1]) == pytest.approx(np.log(2))
        assert loss_existence([0.9, 0.1], [1, 0]) == pytest.approx(-np.log(0.9))

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            loss_existence([0.5, 0.5], [1])


class TestTotal:
    def test_weights_eliminated(self, rng):
        sq = random_sq(rng)
        X = sample_surface(sq, 200) + rng.normal(scale=0.01, size=(200, 3))
        b = total_objective(X, [sq], np.ones((200, 1)), [1.0], 0.0, 0.0, S=256)
        assert b.total == pytest.approx(b.pc_to_sq + b.sq_to_pc)

    def test_perfect_fit(self):
        # 16 columns, all mass on the first: total = lambda_par * 16**-4 plus clamp-level BCE
        X = sample_surface(UNIT, 256)
        sqs = [UNIT] + [Superquadric.sphere(0.1, (5, 5, 5))] * 15
        M = np.zeros((256, 16))
        M[:, 0] = 1
        alpha = np.r_[1.0, np.zeros(15)]
        b = total_objective(X, sqs, M, alpha, 0.6, 0.01, S=256)
        assert b.pc_to_sq == 0 and b.sq_to_pc == 0
        assert b.total == pytest.approx(0.6 / 65536, abs=1e-8)

    def test_increasing_lambda(self, rng):
        sq = random_sq(rng)
        X = sample_surface(sq, 100)
        M = np.ones((100, 1))
        a = total_objective(X, [sq], M, [1.0], 0.1, S=64).total
        b = total_objective(X, [sq], M, [1.0], 0.2, S=64).total
        assert b > a

    def test_breakdown_dict(self):
        b = LossBreakdown(1, 2, 3, 4, 0.5, 0.25)
        assert b.as_dict()["total"] == 1 + 2 + 1.5 + 1
