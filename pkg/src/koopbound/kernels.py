"""Sobolev (Matérn-family) kernels and the multi-task kernel quantities.

A scalar kernel of Sobolev order ``s`` on ``R^d`` is realised as the Matérn
kernel with smoothness ``nu = s - d/2``; only ``nu in {1/2, 3/2, 5/2}`` is
supported so every evaluation is a closed form.

Fourier convention used for all absolute norms::

    f_hat(w) = integral f(x) exp(-i <x, w>) dx
    ||f||_{H^s}^2 = integral (1 + ||w||^2)^s |f_hat(w)|^2 dw

Absolute norm values depend on this convention; ratios between bounds do not.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConvergenceError, DimensionError, KoopboundError
from .matana import as_matrix, matrix_from_json, matrix_to_json

SUPPORTED_NU = (0.5, 1.5, 2.5)
_NU_TOL = 1e-12

FOURIER_CONVENTION = (
    "f_hat(w) = int f(x) exp(-i<x,w>) dx; ||f||_{H^s}^2 = int (1+|w|^2)^s |f_hat(w)|^2 dw; "
    "absolute norms are convention dependent, ratios between bounds are not"
)


def _snap_nu(nu: float) -> float | None:
    for cand in SUPPORTED_NU:
        if abs(nu - cand) <= _NU_TOL:
            return cand
    return None


@dataclass(frozen=True)
class ScalarKernelSpec:
    """Matérn kernel standing in for the reproducing kernel of ``H^s(R^d)``.

    ``amplitude`` scales the kernel (and hence ``Phi(0)``); it defaults to 1,
    the normalised family.
    """

    sobolev_order: float
    input_dim: int
    length_scale: float = 1.0
    amplitude: float = 1.0

    def __post_init__(self):
        if self.input_dim < 1:
            raise KoopboundError(f"input_dim must be positive, got {self.input_dim}")
        if not self.sobolev_order > self.input_dim / 2:
            raise KoopboundError(
                f"Sobolev order must satisfy s_l > d_l/2; got s = {self.sobolev_order}, "
                f"d = {self.input_dim}")
        if self.length_scale <= 0 or self.amplitude <= 0:
            raise KoopboundError("length_scale and amplitude must be positive")
        if _snap_nu(self.nu_raw) is None:
            raise KoopboundError(
                f"Matérn smoothness nu = s - d/2 = {self.nu_raw:g} is not one of {SUPPORTED_NU}")

    @property
    def nu_raw(self) -> float:
        return self.sobolev_order - self.input_dim / 2

    @property
    def nu(self) -> float:
        return _snap_nu(self.nu_raw)

    @classmethod
    def from_nu(cls, nu: float, input_dim: int, **kw) -> "ScalarKernelSpec":
        return cls(sobolev_order=input_dim / 2 + nu, input_dim=input_dim, **kw)

    def profile(self, rho):
        """Radial profile ``phi(rho)`` at scaled distance ``rho = ||x - y|| / length_scale``."""
        rho = np.asarray(rho, dtype=float)
        nu = self.nu
        if nu == 0.5:
            val = np.exp(-rho)
        elif nu == 1.5:
            a = math.sqrt(3.0) * rho
            val = (1.0 + a) * np.exp(-a)
        else:
            a = math.sqrt(5.0) * rho
            val = (1.0 + a + a * a / 3.0) * np.exp(-a)
        return self.amplitude * val

    def to_json(self) -> dict:
        return {"sobolev_order": self.sobolev_order, "input_dim": self.input_dim,
                "length_scale": self.length_scale, "amplitude": self.amplitude}

    @classmethod
    def from_json(cls, obj: dict) -> "ScalarKernelSpec":
        return cls(sobolev_order=float(obj["sobolev_order"]), input_dim=int(obj["input_dim"]),
                   length_scale=float(obj.get("length_scale", 1.0)),
                   amplitude=float(obj.get("amplitude", 1.0)))


def kernel_eval(spec: ScalarKernelSpec, x, y) -> float:
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.size != spec.input_dim or y.size != spec.input_dim:
        raise DimensionError(f"kernel expects vectors of length {spec.input_dim}, "
                             f"got {x.size} and {y.size}")
    rho = math.sqrt(float(np.sum((x - y) ** 2))) / spec.length_scale
    return float(spec.profile(rho))


def kappa_bound(spec: ScalarKernelSpec) -> float:
    """Tight bound ``sup_x k(x, x) = Phi(0)`` for the translation-invariant kernel."""
    return float(spec.profile(0.0))


def gram_matrix(spec: ScalarKernelSpec, points) -> np.ndarray:
    X = np.atleast_2d(np.asarray(points, dtype=float))
    if X.shape[1] != spec.input_dim:
        raise DimensionError(f"points have dimension {X.shape[1]}, kernel expects {spec.input_dim}")
    diff = X[:, None, :] - X[None, :, :]
    rho = np.sqrt(np.sum(diff * diff, axis=-1)) / spec.length_scale
    return spec.profile(rho)


def check_output_matrix(M, *, diagonal: bool = False, definite: bool = False, name: str = "M") -> np.ndarray:
    """Validate an output matrix: symmetric, p.s.d. (or p.d.), optionally diagonal."""
    A = as_matrix(M)
    if A.shape[0] != A.shape[1]:
        raise DimensionError(f"{name} must be square, got {A.shape}")
    if np.max(np.abs(A - A.T)) > 1e-12:
        raise KoopboundError(f"{name} is not symmetric")
    if diagonal and np.max(np.abs(A - np.diag(np.diag(A)))) > 1e-12:
        raise KoopboundError(f"{name} must be diagonal for the multi-task direct sum")
    lam = np.linalg.eigvalsh(A).min()
    if definite and lam <= 0:
        raise KoopboundError(f"{name} must be positive definite (min eigenvalue {lam:.3g})")
    if lam < -1e-10:
        raise KoopboundError(f"{name} is not positive semi-definite (min eigenvalue {lam:.3g})")
    return A


@dataclass(frozen=True)
class MultiTaskKernelConfig:
    """Per-task scalar kernel paired with a diagonal output matrix.

    ``kappa_override`` replaces the tight ``Phi(0)`` constant when a looser,
    user-supplied kernel-diagonal bound is wanted.
    """

    tasks: tuple
    kappa_override: float | None = None

    def __post_init__(self):
        tasks = tuple((spec, check_output_matrix(M, diagonal=True, name=f"M_{t + 1}"))
                      for t, (spec, M) in enumerate(self.tasks))
        if not tasks:
            raise KoopboundError("multi-task kernel needs at least one task")
        dims = {spec.input_dim for spec, _ in tasks}
        outs = {M.shape[0] for _, M in tasks}
        if len(dims) != 1 or len(outs) != 1:
            raise DimensionError(f"tasks disagree on input dim {dims} or output dim {outs}")
        if self.kappa_override is not None and self.kappa_override <= 0:
            raise KoopboundError("kappa_override must be positive")
        object.__setattr__(self, "tasks", tasks)

    @property
    def T(self) -> int:
        return len(self.tasks)

    @property
    def input_dim(self) -> int:
        return self.tasks[0][0].input_dim

    @property
    def m(self) -> int:
        return self.tasks[0][1].shape[0]

    def kappa(self) -> float:
        if self.kappa_override is not None:
            return float(self.kappa_override)
        return max(kappa_bound(spec) for spec, _ in self.tasks)

    def to_json(self) -> dict:
        return {"tasks": [{"kernel": spec.to_json(), "M": matrix_to_json(M)} for spec, M in self.tasks],
                "kappa_override": self.kappa_override}

    @classmethod
    def from_json(cls, obj: dict) -> "MultiTaskKernelConfig":
        tasks = [(ScalarKernelSpec.from_json(t["kernel"]), matrix_from_json(t["M"])) for t in obj["tasks"]]
        return cls(tasks=tuple(tasks), kappa_override=obj.get("kappa_override"))


def mvk_gram_trace(k_gram, M) -> float:
    """``Tr(k_gram ⊗ M)`` without forming the Kronecker product."""
    K = as_matrix(k_gram)
    if K.shape[0] != K.shape[1]:
        raise DimensionError(f"scalar Gram matrix must be square, got {K.shape}")
    return float(np.trace(K) * np.trace(as_matrix(M)))


def u0(config: MultiTaskKernelConfig) -> float:
    """Multi-task prefactor ``sum_t sqrt(Tr M_t)``."""
    total = 0.0
    for t, (_, M) in enumerate(config.tasks):
        tr = float(np.trace(M))
        if tr < 0:
            raise KoopboundError(f"task {t + 1}: output matrix has negative trace {tr}")
        total += math.sqrt(tr)
    return total


def _log_integrand(u, r, s, d):
    with np.errstate(divide="ignore"):
        return -u * u + s * np.log1p(2.0 * r * u * u) + (d - 1) * np.log(u)


def _truncation_radius(r: float, s: float, d: int) -> float:
    # integrand decays like exp(-u^2); stop once it is e^-60 below its peak
    u = np.linspace(1e-3, 10.0 + math.sqrt(s + d), 4001)
    L = _log_integrand(u, r, s, d)
    peak = int(np.argmax(L))
    u_max = float(u[peak])
    step = 0.25
    while _log_integrand(u_max, r, s, d) > L[peak] - 60.0:
        u_max += step
    return u_max


def gaussian_bump_quadrature(r: float, s: float, d: int, intervals: int) -> float:
    """Composite Simpson estimate of ``||exp(-r||x||^2)||_{H^s(R^d)}^2`` on a fixed grid.

    After substituting ``rho = sqrt(2r) u`` the radial integral is
    ``A_d (pi/r)^d (2r)^{d/2} int_0^inf (1 + 2 r u^2)^s exp(-u^2) u^{d-1} du``.
    """
    if intervals < 2 or intervals % 2:
        raise KoopboundError("Simpson quadrature needs an even number of intervals")
    u_max = _truncation_radius(r, s, d)
    u = np.linspace(0.0, u_max, intervals + 1)
    f = (1.0 + 2.0 * r * u * u) ** s * np.exp(-u * u) * u ** (d - 1)
    h = u_max / intervals
    integral = h / 3.0 * (f[0] + f[-1] + 4.0 * f[1:-1:2].sum() + 2.0 * f[2:-1:2].sum())
    surface = 2.0 * math.pi ** (d / 2) / math.gamma(d / 2)
    return surface * (math.pi / r) ** d * (2.0 * r) ** (d / 2) * integral


@functools.lru_cache(maxsize=256)
def sobolev_norm_gaussian_bump(r: float, s: float, d: int, rtol: float = 1e-8,
                               max_doublings: int = 20) -> float:
    """Squared Sobolev norm ``int (1+||w||^2)^s |phi_hat(w)|^2 dw`` of ``phi = exp(-r||x||^2)``.

    Uses ``phi_hat(w) = (pi/r)^{d/2} exp(-||w||^2 / (4r))`` and doubles the
    Simpson grid until two successive values agree to ``rtol``.
    """
    if r <= 0 or s < 0 or d < 1:
        raise KoopboundError(f"need r > 0, s >= 0, d >= 1; got r={r}, s={s}, d={d}")
    intervals = 64
    prev = gaussian_bump_quadrature(r, s, d, intervals)
    for _ in range(max_doublings):
        intervals *= 2
        cur = gaussian_bump_quadrature(r, s, d, intervals)
        if abs(cur - prev) < rtol * abs(cur):
            return cur
        prev = cur
    raise ConvergenceError(
        f"radial quadrature did not converge after {max_doublings} doublings "
        f"(last iterates {prev!r}, {cur!r})")


@dataclass(frozen=True)
class FinalMapTerm:
    rate: int
    M: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        if self.rate < 1 or int(self.rate) != self.rate:
            raise KoopboundError(f"final-map rate must be a positive integer, got {self.rate}")
        M = check_output_matrix(self.M, diagonal=True)
        c = np.asarray(self.c, dtype=float).ravel()
        if c.size != M.shape[0]:
            raise DimensionError(f"coefficient vector has length {c.size}, M is {M.shape}")
        object.__setattr__(self, "rate", int(self.rate))
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "c", c)

    @property
    def direction(self) -> np.ndarray:
        """Output direction ``M c`` multiplied by the Gaussian bump."""
        return self.M @ self.c


@dataclass(frozen=True)
class FinalMapSpec:
    """``g(x) = sum_t exp(-r_t ||x||^2) M_t c_t`` on ``R^{d_L}``."""

    terms: tuple
    input_dim: int
    sobolev_order: float

    def __post_init__(self):
        terms = tuple(t if isinstance(t, FinalMapTerm) else FinalMapTerm(*t) for t in self.terms)
        if not terms:
            raise KoopboundError("final map needs at least one term")
        if len({t.M.shape[0] for t in terms}) != 1:
            raise DimensionError("final-map terms disagree on output dimension")
        object.__setattr__(self, "terms", terms)

    @property
    def T(self) -> int:
        return len(self.terms)

    @property
    def m(self) -> int:
        return self.terms[0].M.shape[0]

    def to_json(self) -> dict:
        return {"terms": [{"r": t.rate, "M": matrix_to_json(t.M), "c": [float(v) for v in t.c]}
                          for t in self.terms],
                "input_dim": self.input_dim, "sobolev_order": self.sobolev_order}

    @classmethod
    def from_json(cls, obj: dict) -> "FinalMapSpec":
        terms = [FinalMapTerm(int(t["r"]), matrix_from_json(t["M"]), np.array(t["c"], dtype=float))
                 for t in obj["terms"]]
        return cls(terms=tuple(terms), input_dim=int(obj["input_dim"]),
                   sobolev_order=float(obj["sobolev_order"]))


def g_norm(spec: FinalMapSpec) -> float:
    """Direct-sum Sobolev norm of the final map.

    Each task term ``phi_t * (M_t c_t)`` lies in the separable space with
    kernel ``k M_t``, where ``||phi v||^2 = ||phi||^2 v^T M_t^{-1} v``; with
    ``v = M_t c_t`` this is ``||phi_t||^2 c_t^T M_t c_t``. Tasks add in
    squares (orthogonal decomposition).
    """
    total = 0.0
    for t, term in enumerate(spec.terms):
        if np.linalg.eigvalsh(term.M).min() <= 0:
            raise KoopboundError(f"task {t + 1}: output matrix M_t is singular; the norm needs M_t > 0")
        phi_sq = sobolev_norm_gaussian_bump(float(term.rate), float(spec.sobolev_order), int(spec.input_dim))
        total += phi_sq * float(term.c @ term.M @ term.c)
    return math.sqrt(total)
