"""Feedforward networks ``g ∘ b_L ∘ W_L ∘ σ_{L-1} ∘ b_{L-1} ∘ W_{L-1} ∘ ... ∘ σ_1 ∘ b_1 ∘ W_1``.

Layers carry a weight matrix, a bias and (except the last) an elementwise
activation; ``g`` is the Gaussian-bump final map from :mod:`koopbound.kernels`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import DimensionError, KoopboundError
from .kernels import FinalMapSpec, FinalMapTerm, MultiTaskKernelConfig, ScalarKernelSpec
from .matana import as_matrix, matrix_from_json, matrix_to_json

ACTIVATION_KINDS = ("smoothed_leaky_relu", "identity", "tanh")
WEIGHT_RECIPES = ("orthogonal", "scaled_orthogonal", "conditioned")


@dataclass(frozen=True)
class ActivationSpec:
    """Elementwise activation.

    ``smoothed_leaky_relu`` is ``alpha*x + (1-alpha) * (x + sqrt(x^2 + beta^2)) / 2``:
    smooth, with derivative strictly between ``alpha`` and 1.
    """

    kind: str = "smoothed_leaky_relu"
    alpha: float = 0.5
    beta: float = 1.0

    def __post_init__(self):
        if self.kind not in ACTIVATION_KINDS:
            raise KoopboundError(f"unknown activation {self.kind!r}; expected one of {ACTIVATION_KINDS}")
        if self.kind == "smoothed_leaky_relu":
            if not 0.0 < self.alpha < 1.0:
                raise KoopboundError(f"smoothed leaky ReLU needs 0 < alpha < 1, got {self.alpha}")
            if self.beta <= 0:
                raise KoopboundError(f"smoothed leaky ReLU needs beta > 0, got {self.beta}")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "identity":
            return x.copy()
        if self.kind == "tanh":
            return np.tanh(x)
        a = self.alpha
        return a * x + (1.0 - a) * 0.5 * (x + np.sqrt(x * x + self.beta ** 2))

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "identity":
            return np.ones_like(x)
        if self.kind == "tanh":
            return 1.0 - np.tanh(x) ** 2
        a = self.alpha
        return a + (1.0 - a) * 0.5 * (1.0 + x / np.sqrt(x * x + self.beta ** 2))

    def inverse(self, y, tol: float = 1e-13, max_iter: int = 200):
        """Inverse by bisection (closed form for identity/tanh)."""
        y = np.asarray(y, dtype=float)
        if self.kind == "identity":
            return y.copy()
        if self.kind == "tanh":
            return np.arctanh(y)
        # slopes lie in [alpha, 1], so the root is within these brackets
        y0 = float(self(0.0))
        shift = y - y0
        lo = np.minimum(shift, shift / self.alpha)
        hi = np.maximum(shift, shift / self.alpha)
        for _ in range(max_iter):
            mid = 0.5 * (lo + hi)
            above = self(mid) > y
            hi = np.where(above, mid, hi)
            lo = np.where(above, lo, mid)
            if np.all(hi - lo <= tol * (1.0 + np.abs(mid))):
                break
        return 0.5 * (lo + hi)

    def to_json(self) -> dict:
        return {"kind": self.kind, "alpha": self.alpha, "beta": self.beta}

    @classmethod
    def from_json(cls, obj: dict | None) -> "ActivationSpec | None":
        if obj is None:
            return None
        return cls(kind=obj["kind"], alpha=float(obj.get("alpha", 0.5)), beta=float(obj.get("beta", 1.0)))


def activation_derivative_bounds(act: ActivationSpec, require_bilipschitz: bool = True) -> tuple[float, float]:
    """Return ``(sup σ', inf σ')`` over the real line."""
    if act.kind == "identity":
        return 1.0, 1.0
    if act.kind == "smoothed_leaky_relu":
        return 1.0, float(act.alpha)
    if require_bilipschitz:
        raise KoopboundError("tanh is not bi-Lipschitz on R (inf of its derivative is 0)")
    return 1.0, 0.0


def koopman_activation_norm_bound(act: ActivationSpec, d: int) -> float:
    """``||det J_{σ^{-1}}||_inf * max_i ||∂_i σ||_inf`` for an elementwise σ on ``R^d``.

    For elementwise σ the inverse Jacobian determinant is
    ``prod_i 1/σ'(σ^{-1}(y_i)) <= (1/inf σ')^d``.
    """
    sup_d, inf_d = activation_derivative_bounds(act, require_bilipschitz=False)
    if inf_d <= 0:
        raise KoopboundError(f"{act.kind}: inverse Jacobian is unbounded (inf σ' = {inf_d})")
    return (1.0 / inf_d) ** d * sup_d


@dataclass(frozen=True)
class LayerSpec:
    """One affine layer ``x -> activation(W x + b)``.

    ``activation_norm_override`` replaces the derivative-based bound on the
    activation's Koopman norm.
    """

    W: np.ndarray
    b: np.ndarray
    activation: ActivationSpec | None = None
    activation_norm_override: float | None = None

    def __post_init__(self):
        W = as_matrix(self.W)
        b = np.asarray(self.b, dtype=float).ravel()
        if b.size != W.shape[0]:
            raise DimensionError(f"bias has length {b.size}, weight matrix has {W.shape[0]} rows")
        if self.activation_norm_override is not None and self.activation_norm_override <= 0:
            raise KoopboundError("activation_norm_override must be positive")
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "b", b)

    @property
    def d_in(self) -> int:
        return self.W.shape[1]

    @property
    def d_out(self) -> int:
        return self.W.shape[0]

    def activation_norm(self) -> float:
        if self.activation is None:
            return 1.0
        if self.activation_norm_override is not None:
            return float(self.activation_norm_override)
        return koopman_activation_norm_bound(self.activation, self.d_out)

    def to_json(self) -> dict:
        out = {"W": matrix_to_json(self.W), "b": [float(v) for v in self.b],
               "activation": None if self.activation is None else self.activation.to_json()}
        if self.activation_norm_override is not None:
            out["activation_norm_override"] = self.activation_norm_override
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "LayerSpec":
        return cls(W=matrix_from_json(obj["W"]), b=np.array(obj["b"], dtype=float),
                   activation=ActivationSpec.from_json(obj.get("activation")),
                   activation_norm_override=obj.get("activation_norm_override"))


@dataclass(frozen=True)
class NetworkSpec:
    layers: tuple
    final_map: FinalMapSpec
    sobolev_orders: tuple
    T: int
    m: int

    def __post_init__(self):
        layers = tuple(self.layers)
        orders = tuple(float(s) for s in self.sobolev_orders)
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "sobolev_orders", orders)
        if not layers:
            raise KoopboundError("network needs at least one layer")
        for l in range(1, len(layers)):
            if layers[l].d_in != layers[l - 1].d_out:
                raise DimensionError(
                    f"layer {l + 1} expects input width {layers[l].d_in}, "
                    f"layer {l} produces {layers[l - 1].d_out}")
        for l, layer in enumerate(layers[:-1]):
            if layer.activation is None:
                raise KoopboundError(f"hidden layer {l + 1} needs an activation (use kind='identity')")
        if layers[-1].activation is not None:
            raise KoopboundError("the final layer carries no activation; g follows b_L ∘ W_L directly")
        widths = self.widths
        if len(orders) != len(widths):
            raise DimensionError(f"need {len(widths)} Sobolev orders s_0..s_L, got {len(orders)}")
        for l, (s, d) in enumerate(zip(orders, widths)):
            if not s > d / 2:
                raise KoopboundError(f"Sobolev order s_{l} = {s} violates s_l > d_l/2 (d_{l} = {d})")
        fm = self.final_map
        if fm.input_dim != widths[-1]:
            raise DimensionError(f"final map expects input dim {fm.input_dim}, last layer gives {widths[-1]}")
        if fm.sobolev_order != orders[-1]:
            raise KoopboundError(f"final map order {fm.sobolev_order} differs from s_L = {orders[-1]}")
        if fm.T != self.T or fm.m != self.m:
            raise DimensionError(f"final map has T={fm.T}, m={fm.m}; network declares T={self.T}, m={self.m}")

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def widths(self) -> tuple:
        return (self.layers[0].d_in,) + tuple(layer.d_out for layer in self.layers)

    def to_json(self) -> dict:
        return {"layers": [layer.to_json() for layer in self.layers],
                "final_map": self.final_map.to_json(),
                "sobolev_orders": list(self.sobolev_orders), "T": self.T, "m": self.m}

    @classmethod
    def from_json(cls, obj: dict) -> "NetworkSpec":
        return cls(layers=tuple(LayerSpec.from_json(o) for o in obj["layers"]),
                   final_map=FinalMapSpec.from_json(obj["final_map"]),
                   sobolev_orders=tuple(obj["sobolev_orders"]), T=int(obj["T"]), m=int(obj["m"]))


def final_map_eval(spec: FinalMapSpec, x) -> np.ndarray:
    """Evaluate ``g``; ``x`` may be one point or an ``(n, d_L)`` batch."""
    X = np.asarray(x, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != spec.input_dim:
        raise DimensionError(f"final map expects dimension {spec.input_dim}, got {X.shape[1]}")
    sq = np.sum(X * X, axis=1)
    out = np.zeros((X.shape[0], spec.m))
    for term in spec.terms:
        out += np.exp(-term.rate * sq)[:, None] * term.direction[None, :]
    return out[0] if single else out


def hidden_forward(net: NetworkSpec, X: np.ndarray) -> np.ndarray:
    """Output of ``b_L ∘ W_L ∘ ... ∘ b_1 ∘ W_1`` (everything before ``g``)."""
    H = X
    for layer in net.layers:
        H = H @ layer.W.T + layer.b
        if layer.activation is not None:
            H = layer.activation(H)
    return H


def forward(net: NetworkSpec, x) -> np.ndarray:
    """Network output in ``R^m``; accepts one point or an ``(n, d_0)`` batch."""
    X = np.asarray(x, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != net.widths[0]:
        raise DimensionError(f"layer 1 expects input dimension {net.widths[0]}, got {X.shape[1]}")
    out = final_map_eval(net.final_map, hidden_forward(net, X))
    return out[0] if single else out


def default_kernel_config(net: NetworkSpec, length_scale: float = 1.0,
                          kappa_override: float | None = None) -> MultiTaskKernelConfig:
    """Input-layer kernel of order ``s_0`` paired with the final map's ``M_t``."""
    spec = ScalarKernelSpec(net.sobolev_orders[0], net.widths[0], length_scale=length_scale)
    return MultiTaskKernelConfig(tasks=tuple((spec, term.M) for term in net.final_map.terms),
                                 kappa_override=kappa_override)


def _haar_columns(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    Q, R = np.linalg.qr(rng.standard_normal((rows, cols)))
    return Q * np.where(np.diag(R) < 0, -1.0, 1.0)


def _weight(rng, rows, cols, recipe, gamma, kappa_target):
    if recipe == "orthogonal":
        return _haar_columns(rng, rows, cols)
    if recipe == "scaled_orthogonal":
        return gamma * _haar_columns(rng, rows, cols)
    U = _haar_columns(rng, rows, cols)
    V = _haar_columns(rng, cols, cols)
    if cols == 1:
        s = np.array([1.0])
    else:
        # unit geometric mean, so |det| (or det(W^T W)^{1/2}) stays at gamma^cols
        s = kappa_target ** (0.5 - np.arange(cols) / (cols - 1))
    return gamma * (U * s) @ V.T


def generate_network(width: int = 2, depth: int = 2, T: int = 1, m: int = 1,
                     recipe: str = "orthogonal", *, widths=None, gamma: float = 1.0,
                     kappa_target: float | None = None, activation: ActivationSpec | None = None,
                     nu: float = 1.5, sobolev_orders=None, bias_scale: float = 0.1,
                     coef_scale: float = 1.0, seed: int = 0) -> NetworkSpec:
    """Draw a synthetic network; identical seeds give identical networks.

    ``widths`` (``d_0 .. d_L``) overrides the uniform ``width``. Sobolev orders
    default to ``s_l = d_l/2 + nu``. Non-square layers must be tall
    (``d_l >= d_{l-1}``).
    """
    if recipe not in WEIGHT_RECIPES:
        raise KoopboundError(f"unknown weight recipe {recipe!r}; expected one of {WEIGHT_RECIPES}")
    widths = [width] * (depth + 1) if widths is None else [int(w) for w in widths]
    depth = len(widths) - 1
    if depth < 1 or min(widths) < 1 or T < 1 or m < 1:
        raise KoopboundError(f"invalid generator sizes widths={widths}, T={T}, m={m}")
    for l in range(1, depth + 1):
        if widths[l] < widths[l - 1]:
            raise KoopboundError(f"layer {l} would be wide ({widths[l]}x{widths[l - 1]}); "
                                 "only square or tall layers are supported")
    if recipe == "conditioned":
        if kappa_target is None or kappa_target < 1:
            raise KoopboundError("conditioned recipe needs kappa_target >= 1")
        if min(widths[:-1]) == 1 and kappa_target != 1:
            raise KoopboundError("a layer with one input column cannot have condition number != 1")
    if gamma <= 0:
        raise KoopboundError("gamma must be positive")
    activation = activation or ActivationSpec()

    rng = np.random.default_rng(seed)
    layers = []
    for l in range(1, depth + 1):
        W = _weight(rng, widths[l], widths[l - 1], recipe, gamma, kappa_target)
        b = bias_scale * rng.standard_normal(widths[l])
        layers.append(LayerSpec(W, b, activation if l < depth else None))

    orders = (tuple(float(s) for s in sobolev_orders) if sobolev_orders is not None
              else tuple(d / 2 + nu for d in widths))
    terms = []
    for _ in range(T):
        rate = int(rng.integers(1, 3))
        M = np.diag(rng.uniform(0.5, 1.5, size=m))
        c = coef_scale * rng.standard_normal(m) / math.sqrt(m)
        terms.append(FinalMapTerm(rate, M, c))
    final_map = FinalMapSpec(tuple(terms), widths[-1], orders[-1])
    return NetworkSpec(tuple(layers), final_map, orders, T, m)
