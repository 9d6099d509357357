"""Dense matrix analysis.

SVD-derived quantities used by the bound factors, membership tests and
projections for the constrained weight classes, and the construction that
turns a 2-D convolution filter into an ordinary matrix.

Every determinant-flavoured quantity is taken from singular values so that
``|det W|**0.5`` and ``det(W^T W)**0.25`` share one numerical path.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .exceptions import (
    ConvergenceError,
    DimensionError,
    InfeasibleClassError,
    KoopboundError,
    RankDeficientWarning,
)

RANK_TOL = 1e-14
MEMBERSHIP_SLACK = 1e-9
SINGULAR_FLOOR = 1e-6

CLASS_KINDS = ("invertible", "injective", "orthogonal")


def as_matrix(W) -> np.ndarray:
    """Coerce ``W`` to a finite 2-D float array (copying nothing if possible)."""
    A = np.asarray(W, dtype=float)
    if A.ndim != 2 or A.shape[0] < 1 or A.shape[1] < 1:
        raise DimensionError(f"expected a non-empty 2-D matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise KoopboundError(f"matrix of shape {A.shape} has non-finite entries")
    return A


def matrix_to_json(W) -> dict:
    A = as_matrix(W)
    return {"rows": int(A.shape[0]), "cols": int(A.shape[1]), "data": [float(v) for v in A.ravel()]}


def matrix_from_json(obj: dict) -> np.ndarray:
    rows, cols, data = int(obj["rows"]), int(obj["cols"]), obj["data"]
    if len(data) != rows * cols:
        raise DimensionError(f"matrix payload has {len(data)} entries, expected {rows}x{cols}")
    return as_matrix(np.array(data, dtype=float).reshape(rows, cols))


@dataclass(frozen=True)
class SvdResult:
    """Thin SVD ``W = U diag(s) V^T`` with ``s`` sorted nonincreasing."""

    singular_values: np.ndarray
    left_vectors: np.ndarray
    right_vectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.left_vectors * self.singular_values) @ self.right_vectors.T


def svd(W) -> SvdResult:
    A = as_matrix(W)
    try:
        U, s, Vt = np.linalg.svd(A, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceError(f"SVD did not converge for {A.shape[0]}x{A.shape[1]} matrix") from exc
    return SvdResult(singular_values=s, left_vectors=U, right_vectors=Vt.T)


def singular_values(W) -> np.ndarray:
    return svd(W).singular_values


def operator_norm(W) -> float:
    """Spectral norm, i.e. the largest singular value."""
    return float(svd(W).singular_values[0])


def _require_square(A: np.ndarray, what: str) -> None:
    if A.shape[0] != A.shape[1]:
        raise DimensionError(f"{what} requires a square matrix, got {A.shape[0]}x{A.shape[1]}")


def _rank_deficient(s: np.ndarray) -> bool:
    return s[0] == 0.0 or s[-1] < RANK_TOL * s[0]


def condition_number(W) -> float:
    """``sigma_max / sigma_min``; ``math.inf`` for numerically singular input."""
    A = as_matrix(W)
    _require_square(A, "condition_number")
    s = svd(A).singular_values
    if _rank_deficient(s):
        return math.inf
    return float(s[0] / s[-1])


def det_abs(W) -> float:
    """``|det W|`` as the product of singular values."""
    A = as_matrix(W)
    _require_square(A, "det_abs")
    return float(np.prod(svd(A).singular_values))


def gram_det_quarter(W) -> float:
    """``det(W^T W)**(1/4)`` for a tall (injective-orientation) matrix.

    Returns 0 and emits :class:`RankDeficientWarning` when ``W`` is numerically
    rank deficient.
    """
    A = as_matrix(W)
    if A.shape[0] < A.shape[1]:
        raise DimensionError(
            f"gram_det_quarter needs rows >= cols, got {A.shape[0]}x{A.shape[1]}; "
            "pass the transpose for the injective orientation"
        )
    s = svd(A).singular_values
    if _rank_deficient(s):
        warnings.warn(f"{A.shape[0]}x{A.shape[1]} matrix is rank deficient; det(W^T W) = 0",
                      RankDeficientWarning, stacklevel=2)
        return 0.0
    return float(np.sqrt(np.prod(s)))


@dataclass(frozen=True)
class WeightClassSpec:
    """Constraint set ``{W : ||W|| <= C, det-term >= D}``.

    For ``invertible`` the det-term is ``|det W|``; for ``injective`` it is
    ``det(W^T W)**0.5``; ``orthogonal`` additionally requires ``W^T W = I``.
    """

    kind: str
    C: float
    D: float

    def __post_init__(self):
        if self.kind not in CLASS_KINDS:
            raise KoopboundError(f"unknown weight class kind {self.kind!r}; expected one of {CLASS_KINDS}")
        if not (self.C > 0 and self.D > 0):
            raise KoopboundError(f"weight class needs C > 0 and D > 0, got C={self.C}, D={self.D}")

    def is_feasible(self, d: int) -> bool:
        if self.kind == "orthogonal":
            return self.C >= 1.0 - MEMBERSHIP_SLACK and self.D <= 1.0 + MEMBERSHIP_SLACK
        return d * math.log(self.C) >= math.log(self.D) - 1e-15

    def check_feasible(self, d: int) -> None:
        if not self.is_feasible(d):
            if self.kind == "orthogonal":
                raise InfeasibleClassError(
                    f"orthogonal class needs C >= 1 and D <= 1, got C={self.C}, D={self.D}")
            raise InfeasibleClassError(
                f"weight class is empty: C^d = {self.C}^{d} < D = {self.D}")

    def to_json(self) -> dict:
        return {"kind": self.kind, "C": float(self.C), "D": float(self.D)}

    @classmethod
    def from_json(cls, obj: dict) -> "WeightClassSpec":
        return cls(kind=obj["kind"], C=float(obj["C"]), D=float(obj["D"]))


@dataclass(frozen=True)
class Membership:
    member: bool
    operator_norm: float
    det_term: float
    orthogonality_defect: float
    violations: list[str] = field(default_factory=list)

    def __bool__(self) -> bool:
        return self.member


def _det_term(s: np.ndarray) -> float:
    return float(np.prod(s))


def class_membership(W, spec: WeightClassSpec) -> Membership:
    """Check ``W`` against ``spec`` with a ``1e-9`` absolute slack."""
    A = as_matrix(W)
    if spec.kind in ("invertible", "orthogonal"):
        _require_square(A, f"{spec.kind} class membership")
    elif A.shape[0] < A.shape[1]:
        raise DimensionError(f"injective class needs rows >= cols, got {A.shape[0]}x{A.shape[1]}")

    s = svd(A).singular_values
    norm = float(s[0])
    det_term = _det_term(s)
    defect = float(np.linalg.norm(A.T @ A - np.eye(A.shape[1])))

    violations = []
    if norm > spec.C + MEMBERSHIP_SLACK:
        violations.append(f"operator norm {norm:.6g} > C = {spec.C:.6g}")
    if det_term < spec.D - MEMBERSHIP_SLACK:
        label = "|det W|" if spec.kind != "injective" else "det(W^T W)^(1/2)"
        violations.append(f"{label} = {det_term:.6g} < D = {spec.D:.6g}")
    if spec.kind == "orthogonal" and defect > MEMBERSHIP_SLACK:
        violations.append(f"orthogonality defect ||W^T W - I||_F = {defect:.3g}")
    return Membership(not violations, norm, det_term, defect, violations)


def _repair_singular_values(s: np.ndarray, C: float, D: float) -> np.ndarray:
    s = np.clip(s, min(SINGULAR_FLOOR, C), C)
    if np.prod(s) >= D:
        return s
    # raise the smallest values first, each capped at C
    for idx in np.argsort(s, kind="stable"):
        others = np.prod(np.delete(s, idx))
        need = D / others * (1.0 + 4.0 * np.finfo(float).eps)
        if need <= C:
            s[idx] = max(s[idx], need)
            break
        s[idx] = C
    return s


def project_to_class(W, spec: WeightClassSpec) -> np.ndarray:
    """Map ``W`` to a member of ``spec`` by editing its singular values.

    Members are returned unchanged. Otherwise singular values are clipped to
    ``[1e-6, C]`` and, if the determinant floor is still missed, the smallest
    ones are raised (each at most to ``C``) until it is met. The orthogonal
    kind returns the polar factor ``U V^T``. This is a feasibility map, not
    an exact Euclidean projection.
    """
    A = as_matrix(W)
    spec.check_feasible(A.shape[1])
    if spec.kind in ("invertible", "orthogonal"):
        _require_square(A, f"{spec.kind} projection")
    elif A.shape[0] < A.shape[1]:
        raise DimensionError(f"injective class needs rows >= cols, got {A.shape[0]}x{A.shape[1]}")
    res = svd(A)
    s = res.singular_values
    if s[0] <= spec.C + MEMBERSHIP_SLACK and _det_term(s) >= spec.D - MEMBERSHIP_SLACK:
        if spec.kind != "orthogonal" or class_membership(A, spec).member:
            return A.copy()
    if spec.kind == "orthogonal":
        return res.left_vectors @ res.right_vectors.T
    s = _repair_singular_values(s.copy(), spec.C, spec.D)
    return (res.left_vectors * s) @ res.right_vectors.T


def conv_output_shape(filter_shape: tuple[int, int], input_shape: tuple[int, int]) -> tuple[int, int]:
    """Spatial shape of the full (zero-padded) convolution output."""
    p, q = filter_shape
    H, W = input_shape
    return H + p - 1, W + q - 1


def conv_filter_to_matrix(filt, input_shape: tuple[int, int]) -> np.ndarray:
    """Matrix ``A`` with ``A @ x.ravel() == y.ravel()`` where
    ``y[k, l] = sum_{i,j} filt[k - i, l - j] * x[i, j]``.

    Filter indices outside the filter are treated as zero and the output
    covers every ``(k, l)`` that receives at least one term (full
    convolution), so ``A`` has shape ``((H+p-1)*(W+q-1), H*W)``. Both
    vectorisations are row-major.
    """
    F = as_matrix(filt)
    H, Wd = (int(v) for v in input_shape)
    if H < 1 or Wd < 1:
        raise DimensionError(f"input shape must be positive, got {input_shape}")
    p, q = F.shape
    out_h, out_w = conv_output_shape((p, q), (H, Wd))
    A = np.zeros((out_h * out_w, H * Wd))
    for i in range(H):
        for j in range(Wd):
            col = i * Wd + j
            for a in range(p):
                for b in range(q):
                    A[(i + a) * out_w + (j + b), col] = F[a, b]
    return A
