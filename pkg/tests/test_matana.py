import json
import math

import numpy as np
import pytest
import scipy.linalg
import scipy.signal
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import random_orthogonal
from koopbound.exceptions import (
    DimensionError,
    InfeasibleClassError,
    KoopboundError,
    RankDeficientWarning,
)
from koopbound.matana import (
    WeightClassSpec,
    class_membership,
    condition_number,
    conv_filter_to_matrix,
    conv_output_shape,
    det_abs,
    gram_det_quarter,
    matrix_from_json,
    matrix_to_json,
    operator_norm,
    project_to_class,
    svd,
)

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)
square = st.integers(1, 5).flatmap(lambda d: arrays(float, (d, d), elements=finite))


def power_iteration_norm(A, iters=2000):
    v = np.ones(A.shape[1]) / math.sqrt(A.shape[1])
    for _ in range(iters):
        w = A.T @ (A @ v)
        nrm = np.linalg.norm(w)
        if nrm == 0:
            return 0.0
        v = w / nrm
    return float(np.linalg.norm(A @ v))


class TestSvd:
    @given(arrays(float, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=finite))
    @settings(max_examples=60, deadline=None)
    def test_reconstruction_and_ordering(self, A):
        res = svd(A)
        s = res.singular_values
        assert np.all(s >= 0)
        assert np.all(np.diff(s) <= 0)
        err = np.linalg.norm(res.reconstruct() - A)
        assert err <= 1e-10 * max(1.0, np.linalg.norm(A))

    def test_rejects_non_finite(self):
        with pytest.raises(KoopboundError):
            svd(np.array([[1.0, np.nan]]))

    def test_rejects_non_matrix(self):
        with pytest.raises(DimensionError):
            svd(np.ones(3))

    def test_non_convergence_names_dimensions(self, monkeypatch):
        def boom(*a, **k):
            raise np.linalg.LinAlgError("nope")
        monkeypatch.setattr(np.linalg, "svd", boom)
        with pytest.raises(KoopboundError, match="3x2"):
            svd(np.ones((3, 2)))


class TestNormsAndDeterminants:
    def test_operator_norm_examples(self):
        assert operator_norm(np.diag([3.0, 1.0])) == 3.0
        assert operator_norm(np.eye(4)) == pytest.approx(1.0, abs=1e-15)
        assert operator_norm(np.zeros((2, 2))) == 0.0

    def test_operator_norm_matches_power_iteration(self, rng):
        for _ in range(10):
            A = rng.standard_normal((5, 4))
            assert operator_norm(A) == pytest.approx(power_iteration_norm(A), rel=1e-9)

    @given(square)
    @settings(max_examples=50, deadline=None)
    def test_operator_norm_is_top_singular_value(self, A):
        assert operator_norm(A) == svd(A).singular_values[0]

    def test_condition_number(self, rng):
        assert condition_number(np.diag([4.0, 2.0])) == 2.0
        assert condition_number(np.diag([1.0, 0.0])) == math.inf
        for d in (1, 3, 8):
            assert condition_number(random_orthogonal(rng, d)) == pytest.approx(1.0, abs=1e-9)

    def test_det_abs_examples_and_lu_oracle(self, rng):
        assert det_abs(np.diag([2.0, -3.0])) == pytest.approx(6.0, rel=1e-15)
        assert det_abs(np.array([[1.0, 2.0], [2.0, 4.0]])) == pytest.approx(0.0, abs=1e-14)
        for _ in range(20):
            A = rng.standard_normal((4, 4))
            P, L, U = scipy.linalg.lu(A)
            assert det_abs(A) == pytest.approx(abs(np.prod(np.diag(U))), rel=1e-10)

    def test_det_abs_is_multiplicative(self, rng):
        for _ in range(30):
            A, B = rng.standard_normal((3, 3)), rng.standard_normal((3, 3))
            assert det_abs(A @ B) == pytest.approx(det_abs(A) * det_abs(B), rel=1e-9)

    def test_det_needs_square(self):
        with pytest.raises(DimensionError):
            det_abs(np.ones((3, 2)))

    def test_gram_det_quarter(self, rng):
        A = rng.standard_normal((3, 3))
        assert gram_det_quarter(A) == pytest.approx(det_abs(A) ** 0.5, rel=1e-12)
        B = rng.standard_normal((5, 2))
        expected = np.linalg.det(B.T @ B) ** 0.25
        assert gram_det_quarter(B) == pytest.approx(expected, rel=1e-10)
        Q, _ = np.linalg.qr(rng.standard_normal((4, 2)))
        assert gram_det_quarter(Q) == pytest.approx(1.0, abs=1e-12)

    def test_gram_det_quarter_wide_and_deficient(self):
        with pytest.raises(DimensionError, match="transpose"):
            gram_det_quarter(np.ones((2, 3)))
        with pytest.warns(RankDeficientWarning):
            assert gram_det_quarter(np.ones((3, 2))) == 0.0


class TestWeightClass:
    def test_feasibility(self):
        assert WeightClassSpec("invertible", 2.0, 4.0).is_feasible(2)
        assert not WeightClassSpec("invertible", 1.0, 2.0).is_feasible(2)
        assert WeightClassSpec("orthogonal", 1.0, 1.0).is_feasible(5)
        assert not WeightClassSpec("orthogonal", 0.5, 1.0).is_feasible(5)
        with pytest.raises(InfeasibleClassError):
            WeightClassSpec("invertible", 1.0, 2.0).check_feasible(2)

    def test_rejects_bad_parameters(self):
        with pytest.raises(KoopboundError):
            WeightClassSpec("unitary", 1.0, 1.0)
        with pytest.raises(KoopboundError):
            WeightClassSpec("invertible", 0.0, 1.0)

    def test_json_round_trip(self):
        spec = WeightClassSpec("injective", 1.5, 0.25)
        assert WeightClassSpec.from_json(json.loads(json.dumps(spec.to_json()))) == spec

    def test_membership_diagnostics(self):
        spec = WeightClassSpec("invertible", 2.0, 1.0)
        assert class_membership(np.eye(2), spec).member
        v = class_membership(np.diag([3.0, 3.0]), spec)
        assert not v.member and "operator norm" in v.violations[0]
        v = class_membership(np.diag([1.0, 0.1]), spec)
        assert not v.member and "|det W|" in v.violations[0]
        ortho = WeightClassSpec("orthogonal", 1.0, 1.0)
        v = class_membership(np.array([[1.0, 0.5], [0.0, 1.0]]), ortho)
        assert not v.member

    def test_injective_orientation(self):
        spec = WeightClassSpec("injective", 1.0, 1.0)
        assert class_membership(np.eye(3)[:, :2], spec).member
        with pytest.raises(DimensionError):
            class_membership(np.eye(3)[:2, :], spec)


class TestProjection:
    def test_member_unchanged(self, rng):
        spec = WeightClassSpec("invertible", 2.0, 0.1)
        A = np.diag([1.5, 0.8]) @ random_orthogonal(rng, 2)
        assert np.allclose(project_to_class(A, spec), A, atol=1e-12)

    def test_clipping(self):
        P = project_to_class(np.diag([3.0, 3.0]), WeightClassSpec("invertible", 2.0, 1.0))
        assert np.allclose(P, np.diag([2.0, 2.0]), atol=1e-12)

    def test_determinant_repair(self):
        spec = WeightClassSpec("invertible", 2.0, 1.0)
        P = project_to_class(np.diag([2.0, 0.1]), spec)
        assert np.allclose(P, np.diag([2.0, 0.5]), atol=1e-12)
        assert class_membership(P, spec).member

    def test_determinant_repair_is_minimal_among_diagonal_repairs(self):
        # grid over diagonal members diag(a, b): the nearest in Frobenius norm
        # and the smallest-operator-norm change both coincide with diag(2, 0.5)
        spec = WeightClassSpec("invertible", 2.0, 1.0)
        P = project_to_class(np.diag([2.0, 0.1]), spec)
        target = np.array([2.0, 0.1])
        grid = np.linspace(0.0, 2.0, 2001)
        a, b = np.meshgrid(grid, grid, indexing="ij")
        ok = a * b >= 1.0 - 1e-12
        dist = np.hypot(a - target[0], b - target[1])
        dist[~ok] = np.inf
        i, j = np.unravel_index(np.argmin(dist), dist.shape)
        assert (grid[i], grid[j]) == pytest.approx((2.0, 0.5), abs=1e-3)
        assert np.linalg.norm(np.diag(P) - target) <= dist[i, j] + 1e-12

    def test_orthogonal_kind_returns_polar_factor(self, rng):
        spec = WeightClassSpec("orthogonal", 1.0, 1.0)
        A = rng.standard_normal((3, 3))
        P = project_to_class(A, spec)
        U, _, Vt = np.linalg.svd(A)
        assert np.allclose(P, U @ Vt, atol=1e-12)
        assert class_membership(P, spec).member

    def test_injective_projection(self, rng):
        spec = WeightClassSpec("injective", 1.5, 0.8)
        P = project_to_class(rng.standard_normal((5, 2)) * 3, spec)
        assert P.shape == (5, 2) and class_membership(P, spec).member

    def test_infeasible_spec(self):
        with pytest.raises(InfeasibleClassError):
            project_to_class(np.eye(2), WeightClassSpec("invertible", 1.0, 2.0))

    @given(square, st.sampled_from([(1.0, 1.0), (2.0, 0.5), (1.2, 1.3), (3.0, 0.01)]),
           st.sampled_from(["invertible", "orthogonal", "injective"]))
    @settings(max_examples=120, deadline=None)
    def test_output_is_member_and_idempotent(self, A, CD, kind):
        C, D = CD
        spec = WeightClassSpec(kind, C, D)
        if not spec.is_feasible(A.shape[1]):
            return
        P = project_to_class(A, spec)
        assert class_membership(P, spec).member
        assert np.allclose(project_to_class(P, spec), P, atol=1e-10)


class TestConvolution:
    def test_identity_and_scaling(self):
        assert np.array_equal(conv_filter_to_matrix(np.ones((1, 1)), (3, 4)), np.eye(12))
        assert np.array_equal(conv_filter_to_matrix(np.full((1, 1), 2.5), (2, 2)), 2.5 * np.eye(4))

    def test_shape(self):
        assert conv_output_shape((2, 3), (4, 5)) == (5, 7)
        assert conv_filter_to_matrix(np.ones((2, 3)), (4, 5)).shape == (35, 20)

    @staticmethod
    def direct_convolution(F, X):
        p, q = F.shape
        H, W = X.shape
        Y = np.zeros((H + p - 1, W + q - 1))
        for k in range(Y.shape[0]):
            for l in range(Y.shape[1]):
                acc = 0.0
                for i in range(H):
                    for j in range(W):
                        if 0 <= k - i < p and 0 <= l - j < q:
                            acc += F[k - i, l - j] * X[i, j]
                Y[k, l] = acc
        return Y

    def test_matches_double_loop_oracle_exactly(self, rng):
        F = rng.integers(-5, 6, size=(2, 2)).astype(float)
        A = conv_filter_to_matrix(F, (3, 3))
        for _ in range(100):
            X = rng.integers(-9, 10, size=(3, 3)).astype(float)
            assert np.array_equal(A @ X.ravel(), self.direct_convolution(F, X).ravel())

    def test_matches_scipy_full_convolution(self, rng):
        F = rng.standard_normal((3, 2))
        X = rng.standard_normal((4, 5))
        A = conv_filter_to_matrix(F, X.shape)
        expected = scipy.signal.convolve2d(X, F, mode="full")
        assert np.allclose(A @ X.ravel(), expected.ravel(), atol=1e-12)

    def test_linearity_exact(self, rng):
        F = rng.integers(-3, 4, size=(2, 3)).astype(float)
        A = conv_filter_to_matrix(F, (4, 4))
        x = rng.integers(-8, 9, size=16).astype(float)
        y = rng.integers(-8, 9, size=16).astype(float)
        assert np.array_equal(A @ (x + y), A @ x + A @ y)

    def test_bad_shape(self):
        with pytest.raises(DimensionError):
            conv_filter_to_matrix(np.ones((2, 2)), (0, 3))


def test_matrix_json_round_trip(rng):
    A = rng.standard_normal((3, 2))
    obj = matrix_to_json(A)
    assert obj["rows"] == 3 and obj["cols"] == 2 and len(obj["data"]) == 6
    assert np.array_equal(matrix_from_json(json.loads(json.dumps(obj))), A)
    with pytest.raises(DimensionError):
        matrix_from_json({"rows": 2, "cols": 2, "data": [1.0]})
