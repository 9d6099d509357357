"""Empirical vector-valued Rademacher complexity.

``R_hat(F) = E_sigma sup_{f in F} (1/n) |sum_i <sigma_i, f(x_i)>|``

:func:`estimate_sup` samples sign arrays and, for each, approximates the
supremum from inside the class by projected gradient ascent, so the result is
a Monte-Carlo estimate of a lower bound. :func:`brute_force_oracle` computes
the exact value for a finite class by enumerating all sign arrays.
"""

from __future__ import annotations

import itertools
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .exceptions import DimensionError, KoopboundError
from .kernels import sobolev_norm_gaussian_bump
from .matana import WeightClassSpec, project_to_class
from .network import NetworkSpec, forward

GRADIENT_MODES = ("analytic", "central_difference")


def fixed_function_rademacher(values, sigma) -> float:
    """``(1/n) |sum_ij sigma_ij f_j(x_i)|`` for one fixed function."""
    F = np.atleast_2d(np.asarray(values, dtype=float))
    S = np.atleast_2d(np.asarray(sigma, dtype=float))
    if F.shape != S.shape:
        raise DimensionError(f"values {F.shape} and signs {S.shape} differ in shape")
    return abs(float(np.sum(S * F))) / F.shape[0]


def draw_sigma(seed: int, sample_index: int, n: int, m: int) -> np.ndarray:
    """Sign array for one Monte-Carlo sample; a pure function of its arguments."""
    rng = np.random.default_rng([seed, 0, sample_index])
    return rng.choice(np.array([-1.0, 1.0]), size=(n, m))


class ParamLayout:
    """Flat parameter vector ``[W_1, b_1, ..., W_L, b_L, (c_1, ..., c_T)]``."""

    def __init__(self, template: NetworkSpec, include_g: bool = False):
        self.template = template
        self.include_g = include_g
        self.slices = []
        pos = 0
        for layer in template.layers:
            w = slice(pos, pos + layer.W.size)
            pos += layer.W.size
            b = slice(pos, pos + layer.b.size)
            pos += layer.b.size
            self.slices.append((w, b, layer.W.shape))
        self.c_slices = []
        if include_g:
            for term in template.final_map.terms:
                self.c_slices.append(slice(pos, pos + term.c.size))
                pos += term.c.size
        self.size = pos
        fm = template.final_map
        self.rates = np.array([t.rate for t in fm.terms], dtype=float)
        self.Ms = [t.M for t in fm.terms]
        self.acts = [layer.activation for layer in template.layers]

    def pack(self, net: NetworkSpec | None = None) -> np.ndarray:
        net = net or self.template
        parts = []
        for layer in net.layers:
            parts += [layer.W.ravel(), layer.b]
        if self.include_g:
            parts += [t.c for t in net.final_map.terms]
        return np.concatenate(parts).astype(float)

    def weights(self, theta):
        return [(theta[w].reshape(shape), theta[b]) for w, b, shape in self.slices]

    def directions(self, theta) -> np.ndarray:
        if self.include_g:
            return np.stack([M @ theta[s] for M, s in zip(self.Ms, self.c_slices)])
        return np.stack([t.direction for t in self.template.final_map.terms])

    def weight_mask(self) -> np.ndarray:
        mask = np.zeros(self.size, dtype=bool)
        for w, _, _ in self.slices:
            mask[w] = True
        return mask

    def bias_mask(self) -> np.ndarray:
        mask = np.zeros(self.size, dtype=bool)
        for _, b, _ in self.slices:
            mask[b] = True
        return mask

    def coef_mask(self) -> np.ndarray:
        mask = np.zeros(self.size, dtype=bool)
        for s in self.c_slices:
            mask[s] = True
        return mask


def _forward_cache(layout: ParamLayout, theta, X):
    pre, post = [], [X]
    H = X
    for (W, b), act in zip(layout.weights(theta), layout.acts):
        Z = H @ W.T + b
        pre.append(Z)
        H = act(Z) if act is not None else Z
        post.append(H)
    E = np.exp(-np.sum(H * H, axis=1)[:, None] * layout.rates[None, :])   # (n, T)
    V = layout.directions(theta)                                           # (T, m)
    return pre, post, E, V, E @ V


def objective(layout: ParamLayout, theta, sigma, X) -> float:
    """Signed objective ``(1/n) sum_i <sigma_i, f_theta(x_i)>``."""
    *_, F = _forward_cache(layout, theta, X)
    return float(np.sum(sigma * F)) / X.shape[0]


def _analytic_gradient(layout: ParamLayout, theta, sigma, X) -> np.ndarray:
    n = X.shape[0]
    pre, post, E, V, _ = _forward_cache(layout, theta, X)
    grad = np.zeros_like(theta)
    proj = sigma @ V.T                                  # (n, T): <sigma_i, v_t>
    H = post[-1]
    # d/dh exp(-r ||h||^2) = -2 r h exp(-r ||h||^2)
    coef = np.sum(proj * E * (-2.0 * layout.rates[None, :]), axis=1) / n
    delta = coef[:, None] * H
    weights = layout.weights(theta)
    for l in range(len(weights) - 1, -1, -1):
        w_sl, b_sl, shape = layout.slices[l]
        grad[w_sl] = (delta.T @ post[l]).ravel()
        grad[b_sl] = delta.sum(axis=0)
        if l > 0:
            back = delta @ weights[l][0]
            delta = back * layout.acts[l - 1].derivative(pre[l - 1])
    if layout.include_g:
        for t, (M, s) in enumerate(zip(layout.Ms, layout.c_slices)):
            grad[s] = M.T @ (E[:, t] @ sigma) / n
    return grad


def _central_difference(layout: ParamLayout, theta, sigma, X) -> np.ndarray:
    grad = np.zeros_like(theta)
    for k in range(theta.size):
        h = 1e-5 * (1.0 + abs(theta[k]))
        tp, tm = theta.copy(), theta.copy()
        tp[k] += h
        tm[k] -= h
        grad[k] = (objective(layout, tp, sigma, X) - objective(layout, tm, sigma, X)) / (2.0 * h)
    return grad


def gradient_of_objective(template: NetworkSpec, theta, sigma, data, mode: str = "analytic",
                          include_g: bool = False, layout: ParamLayout | None = None) -> np.ndarray:
    """Gradient of :func:`objective` with respect to the flat parameter vector."""
    if mode not in GRADIENT_MODES:
        raise KoopboundError(f"gradient mode must be one of {GRADIENT_MODES}, got {mode!r}")
    layout = layout or ParamLayout(template, include_g)
    theta = np.asarray(theta, dtype=float)
    X = np.atleast_2d(np.asarray(data, dtype=float))
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    if theta.size != layout.size:
        raise DimensionError(f"parameter vector has {theta.size} entries, layout expects {layout.size}")
    if mode == "analytic":
        return _analytic_gradient(layout, theta, sigma, X)
    return _central_difference(layout, theta, sigma, X)


class WeightClassProjector:
    """Feasibility map onto the weight class; biases are unconstrained.

    When the final-map coefficients are optimised they are rescaled into the
    ellipsoid ``||g|| <= ||g_template||``.
    """

    def __init__(self, layout: ParamLayout, wclass: WeightClassSpec):
        self.layout = layout
        self.wclass = wclass
        for l, (_, _, shape) in enumerate(layout.slices, start=1):
            wclass.check_feasible(shape[1])
        self.count = 0
        if layout.include_g:
            fm = layout.template.final_map
            self.phi_sq = [sobolev_norm_gaussian_bump(float(t.rate), fm.sobolev_order, fm.input_dim)
                           for t in fm.terms]
            self.g_cap = self._g_sq(layout.pack())

    def _g_sq(self, theta) -> float:
        return sum(p * float(theta[s] @ M @ theta[s])
                   for p, M, s in zip(self.phi_sq, self.layout.Ms, self.layout.c_slices))

    def __call__(self, theta) -> np.ndarray:
        theta = theta.copy()
        for w_sl, _, shape in self.layout.slices:
            theta[w_sl] = project_to_class(theta[w_sl].reshape(shape), self.wclass).ravel()
        if self.layout.include_g:
            g_sq = self._g_sq(theta)
            if g_sq > self.g_cap:
                scale = math.sqrt(self.g_cap / g_sq)
                for s in self.layout.c_slices:
                    theta[s] *= scale
        self.count += 1
        return theta

    def initial(self, rng: np.random.Generator, restart: int, config: "EstimatorConfig") -> np.ndarray:
        theta = self.layout.pack()
        if restart > 0:
            noise = config.init_scale * rng.standard_normal(theta.size)
            mask = self.layout.weight_mask()
            if config.optimize_biases:
                mask |= self.layout.bias_mask()
            theta = theta + np.where(mask, noise, 0.0)
        return self(theta)


class GridProjector:
    """Restricts the parameters to an explicit finite list of networks (nearest point)."""

    def __init__(self, layout: ParamLayout, grid):
        self.layout = layout
        self.points = np.stack([layout.pack(net) for net in grid])
        self.count = 0

    def __call__(self, theta) -> np.ndarray:
        self.count += 1
        idx = int(np.argmin(np.sum((self.points - theta) ** 2, axis=1)))
        return self.points[idx].copy()

    def initial(self, rng, restart: int, config) -> np.ndarray:
        self.count += 1
        return self.points[restart % len(self.points)].copy()


@dataclass(frozen=True)
class EstimatorConfig:
    num_sigma: int = 64
    restarts: int = 8
    steps: int = 300
    step_size: float = 0.05
    decay: float = 0.99
    seed: int = 0
    gradient_mode: str = "analytic"
    optimize_biases: bool = True
    include_g: bool = False
    init_scale: float = 0.5

    def __post_init__(self):
        if self.num_sigma < 2 or self.restarts < 1 or self.steps < 0:
            raise KoopboundError("need num_sigma >= 2, restarts >= 1, steps >= 0")
        if self.gradient_mode not in GRADIENT_MODES:
            raise KoopboundError(f"gradient mode must be one of {GRADIENT_MODES}")

    @classmethod
    def from_json(cls, obj: dict) -> "EstimatorConfig":
        known = cls.__dataclass_fields__
        unknown = set(obj) - set(known)
        if unknown:
            raise KoopboundError(f"unknown estimator keys {sorted(unknown)}")
        return cls(**obj)


@dataclass
class RademacherEstimate:
    mean: float
    stderr: float
    num_sigma_samples: int
    restarts_per_sample: int
    best_objective_per_sample: list
    diagnostics: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class OracleResult:
    exact_value: float
    class_size: int
    sigma_space_size: int


def _run_restart(layout, projector, X, sigma, config, s_idx, r_idx):
    rng = np.random.default_rng([config.seed, 1, s_idx, r_idx])
    theta0 = projector.initial(rng, r_idx, config)
    mask = layout.weight_mask()
    if config.optimize_biases:
        mask |= layout.bias_mask()
    if layout.include_g:
        mask |= layout.coef_mask()
    best = -math.inf
    iters = 0
    for sign in (1.0, -1.0):
        theta = theta0
        val = objective(layout, theta, sigma, X)
        if not math.isfinite(val):
            return None, iters
        best = max(best, abs(val))
        eta = config.step_size
        for _ in range(config.steps):
            g = gradient_of_objective(layout.template, theta, sigma, X, config.gradient_mode,
                                      layout=layout)
            theta = projector(theta + sign * eta * np.where(mask, g, 0.0))
            val = objective(layout, theta, sigma, X)
            iters += 1
            if not math.isfinite(val):
                return None, iters
            best = max(best, abs(val))
            eta *= config.decay
    return best, iters


def _run_task(args):
    layout, projector, X, config, s_idx, r_idx = args
    sigma = draw_sigma(config.seed, s_idx, X.shape[0], layout.template.m)
    projector.count = 0
    with np.errstate(over="ignore", invalid="ignore"):
        best, iters = _run_restart(layout, projector, X, sigma, config, s_idx, r_idx)
    return s_idx, r_idx, best, iters, projector.count


def estimate_sup(template: NetworkSpec, wclass: WeightClassSpec | None, data,
                 config: EstimatorConfig = EstimatorConfig(), grid=None,
                 jobs: int = 1) -> RademacherEstimate:
    """Monte-Carlo lower-bound estimate of the empirical Rademacher complexity.

    For each of ``config.num_sigma`` sign arrays, ``config.restarts`` projected
    gradient ascents (on the signed objective and its negation) search the
    class; the best feasible value per sign array is kept. With ``grid`` the
    class is the given finite list of networks and projection snaps to the
    nearest member; restarts then start from successive grid members.
    ``jobs > 1`` distributes (sign array, restart) tasks over processes; every
    task seeds its own generator, so results do not depend on ``jobs``.
    """
    X = np.atleast_2d(np.asarray(data, dtype=float))
    if X.shape[1] != template.widths[0]:
        raise DimensionError(f"data dimension {X.shape[1]} != network input {template.widths[0]}")
    layout = ParamLayout(template, config.include_g)
    if grid is not None:
        projector = GridProjector(layout, grid)
    elif wclass is not None:
        projector = WeightClassProjector(layout, wclass)
    else:
        raise KoopboundError("estimate_sup needs a weight class or an explicit grid")

    tasks = [(layout, projector, X, config, s, r)
             for s in range(config.num_sigma) for r in range(config.restarts)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_task, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    else:
        results = [_run_task(t) for t in tasks]

    per_sample = [-math.inf] * config.num_sigma
    iterations = projections = discarded = 0
    for s_idx, _, best, iters, proj in results:
        iterations += iters
        projections += proj
        if best is None:
            discarded += 1
            continue
        per_sample[s_idx] = max(per_sample[s_idx], best)
    dead = [s for s, v in enumerate(per_sample) if v == -math.inf]
    if dead:
        raise KoopboundError(f"all restarts produced non-finite objectives for sign samples {dead}")
    vals = np.array(per_sample)
    return RademacherEstimate(
        mean=float(vals.mean()),
        stderr=float(vals.std(ddof=1) / math.sqrt(vals.size)),
        num_sigma_samples=config.num_sigma,
        restarts_per_sample=config.restarts,
        best_objective_per_sample=[float(v) for v in vals],
        diagnostics={"iterations": iterations, "projections": projections,
                     "discarded_restarts": discarded,
                     "mode": "grid" if grid is not None else "weight_class",
                     "final_map": "optimized (c_t only)" if config.include_g else "fixed",
                     "config": asdict(config)},
    )


def _values(f, X):
    if isinstance(f, NetworkSpec):
        return forward(f, X)
    return np.atleast_2d(np.asarray([np.atleast_1d(f(x)) for x in X], dtype=float))


def brute_force_oracle(grid, data, m: int | None = None) -> OracleResult:
    """Exact empirical Rademacher complexity of a finite class.

    ``grid`` holds networks (or callables ``x -> R^m``). All ``2^{n m}`` sign
    arrays are enumerated, which is limited to ``n * m <= 16``.
    """
    X = np.atleast_2d(np.asarray(data, dtype=float))
    values = [_values(f, X) for f in grid]
    if not values:
        raise KoopboundError("oracle needs a non-empty class")
    n = X.shape[0]
    m = values[0].shape[1] if m is None else m
    if any(v.shape != (n, m) for v in values):
        raise DimensionError(f"every function must return an ({n}, {m}) array of values")
    nm = n * m
    if nm > 16:
        raise KoopboundError(f"n*m = {nm} > 16 sign coordinates; use Monte-Carlo estimate_sup instead")
    # correctly rounded sums (fsum), so the result does not depend on summation order
    rows = [v.ravel().tolist() for v in values]
    best = []
    for signs in itertools.product((-1.0, 1.0), repeat=nm):
        best.append(max(abs(math.fsum(s * f for s, f in zip(signs, row))) for row in rows) / n)
    return OracleResult(math.fsum(best) / len(best), len(values), len(best))


def default_jobs() -> int:
    return os.cpu_count() or 1
