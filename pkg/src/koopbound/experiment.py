"""Experiment configuration, validation and sweep execution.

An experiment is one JSON file::

    {
      "seed": 0,
      "network": {"generator": {"width": 2, "depth": 2, "T": 1, "m": 1,
                                "recipe": "orthogonal"}},      # or {"file": "net.json"}
      "weight_class": {"kind": "invertible", "C": 1.0, "D": 1.0},
      "kernel": {"length_scale": 1.0},                        # or {"file": "kernel.json"}
      "dataset": {"n": 16, "distribution": "unit_sphere"},
      "bounds": ["theorem_inv", "corollary"],
      "estimator": {"num_sigma": 16, "restarts": 2, "steps": 50},   # or null
      "sweep": {"width": [2, 4, 8]},
      "output": {"dir": "out"}
    }

Sweep axes: ``width``, ``depth``, ``condition_number`` (switches the recipe
to ``conditioned``), ``T`` and ``n``. Cells are the Cartesian product in the
order the axes are listed.
"""

from __future__ import annotations

import copy
import csv
import io
import itertools
import json
import math
import os
import re
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .bounds import (
    baseline_bounds,
    corollary_bound,
    hashimoto_alt_bound,
    remark_brownian_bound,
    theorem_inj_bound,
    theorem_inv_bound,
)
from .exceptions import KoopboundError
from .kernels import FOURIER_CONVENTION, MultiTaskKernelConfig
from .matana import WeightClassSpec
from .network import ActivationSpec, NetworkSpec, default_kernel_config, generate_network
from .rademacher import EstimatorConfig, estimate_sup
from .svgplot import emit_plot

SWEEP_AXES = ("width", "depth", "condition_number", "T", "n")
DISTRIBUTIONS = ("unit_sphere", "gaussian", "grid")
VARIANTS = ("theorem_inv", "theorem_inv_class_sup", "corollary", "theorem_inj",
            "theorem_inj_class_sup", "remark_brownian", "hashimoto_alt", "baselines")
DEFAULT_VARIANTS = ("theorem_inv", "corollary", "theorem_inj")
GENERATOR_KEYS = ("width", "widths", "depth", "T", "m", "recipe", "gamma", "kappa_target",
                  "activation", "nu", "sobolev_orders", "bias_scale", "coef_scale", "seed")
TOP_KEYS = ("seed", "network", "weight_class", "kernel", "dataset", "bounds", "estimator",
            "sweep", "output")
OUTPUT_ENV = "KOOPBOUND_OUT"

CSV_COLUMNS = ("cell", "width", "depth", "condition_number", "T", "n", "widths", "variant",
               "prefactor", "total", "alternate_prefactor_total", "layer_contributions",
               "layer_ratio_sup", "layer_det_factor", "layer_activation_norm", "g_norm",
               "kappa", "U0", "estimate_mean", "estimate_stderr", "note", "error")


class ConfigError(KoopboundError):
    """Invalid experiment configuration (carries line-anchored messages)."""

    def __init__(self, messages):
        self.messages = list(messages)
        super().__init__("; ".join(self.messages))


def _line_of(text: str, key: str) -> int | None:
    m = re.search(r'"' + re.escape(key) + r'"\s*:', text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _anchor(text: str, key: str, msg: str) -> str:
    line = _line_of(text, key) if text else None
    return f"line {line}: {msg}" if line else msg


def load_config(path) -> tuple[dict, str]:
    path = Path(path)
    text = path.read_text()
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"JSON parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}"])
    if not isinstance(cfg, dict):
        raise ConfigError(["line 1: top level must be a JSON object"])
    cfg["_base_dir"] = str(path.parent.resolve())
    return cfg, text


def _resolve(cfg: dict, ref: str) -> Path:
    p = Path(ref)
    return p if p.is_absolute() else Path(cfg.get("_base_dir", ".")) / p


def sweep_cells(cfg: dict) -> list[dict]:
    sweep = cfg.get("sweep") or {}
    axes = [a for a in sweep]
    combos = itertools.product(*(sweep[a] for a in axes)) if axes else [()]
    return [dict(zip(axes, combo)) for combo in combos]


def _activation(obj) -> ActivationSpec:
    return ActivationSpec() if obj is None else ActivationSpec.from_json(obj)


def build_network(cfg: dict, axes: dict) -> NetworkSpec:
    net_cfg = cfg["network"]
    if "file" in net_cfg:
        return NetworkSpec.from_json(json.loads(_resolve(cfg, net_cfg["file"]).read_text()))
    gen = dict(net_cfg["generator"])
    if "width" in axes:
        gen["width"] = int(axes["width"])
        gen.pop("widths", None)
    if "depth" in axes:
        gen["depth"] = int(axes["depth"])
    if "T" in axes:
        gen["T"] = int(axes["T"])
    if "condition_number" in axes:
        gen["recipe"] = "conditioned"
        gen["kappa_target"] = float(axes["condition_number"])
    gen["activation"] = _activation(gen.get("activation"))
    gen.setdefault("seed", cfg.get("seed", 0))
    return generate_network(**gen)


def build_kernel(cfg: dict, net: NetworkSpec) -> MultiTaskKernelConfig:
    kcfg = cfg.get("kernel") or {}
    if "file" in kcfg:
        return MultiTaskKernelConfig.from_json(json.loads(_resolve(cfg, kcfg["file"]).read_text()))
    return default_kernel_config(net, length_scale=float(kcfg.get("length_scale", 1.0)),
                                 kappa_override=kcfg.get("kappa_override"))


def make_dataset(n: int, d: int, distribution: str = "unit_sphere", seed: int = 0) -> np.ndarray:
    """Deterministic synthetic inputs in ``R^d``."""
    if distribution not in DISTRIBUTIONS:
        raise KoopboundError(f"unknown distribution {distribution!r}; expected one of {DISTRIBUTIONS}")
    if n < 1 or d < 1:
        raise KoopboundError(f"dataset needs n >= 1 and d >= 1, got n={n}, d={d}")
    if distribution == "grid":
        k = math.ceil(n ** (1.0 / d) - 1e-12)
        axis = np.linspace(-1.0, 1.0, k) if k > 1 else np.zeros(1)
        pts = np.array(list(itertools.product(axis, repeat=d)))
        return pts[:n]
    rng = np.random.default_rng([seed, 7])
    X = rng.standard_normal((n, d))
    if distribution == "unit_sphere":
        X /= np.linalg.norm(X, axis=1, keepdims=True)
    return X


def build_dataset(cfg: dict, net: NetworkSpec, axes: dict) -> np.ndarray:
    dcfg = cfg["dataset"]
    n = int(axes.get("n", dcfg.get("n", 16)))
    return make_dataset(n, net.widths[0], dcfg.get("distribution", "unit_sphere"),
                        int(dcfg.get("seed", cfg.get("seed", 0))))


def validate_config(cfg: dict, text: str = "") -> list[str]:
    """Structural and semantic checks; returns a list of problems (empty if valid)."""
    errs = []

    def bad(key, msg):
        errs.append(_anchor(text, key, msg))

    for key in cfg:
        if key not in TOP_KEYS and not key.startswith("_"):
            bad(key, f"unknown top-level key {key!r}")
    missing = [k for k in ("network", "weight_class", "dataset") if k not in cfg]
    if missing:
        return errs + [f"missing required section {k!r}" for k in missing]

    # unknown top-level keys do not block the semantic checks below
    n_structural = len(errs)
    net_cfg = cfg["network"]
    if not isinstance(net_cfg, dict) or ("file" in net_cfg) == ("generator" in net_cfg):
        bad("network", "network needs exactly one of 'file' or 'generator'")
        return errs
    if "file" in net_cfg and not _resolve(cfg, net_cfg["file"]).is_file():
        bad("file", f"network file {net_cfg['file']!r} does not exist")
    if "generator" in net_cfg:
        for key in net_cfg["generator"]:
            if key not in GENERATOR_KEYS:
                bad(key, f"unknown generator key {key!r}")
    kcfg = cfg.get("kernel") or {}
    if "file" in kcfg and not _resolve(cfg, kcfg["file"]).is_file():
        bad("kernel", f"kernel file {kcfg['file']!r} does not exist")

    try:
        wclass = WeightClassSpec.from_json(cfg["weight_class"])
    except (KoopboundError, KeyError, TypeError, ValueError) as exc:
        bad("weight_class", f"weight_class: {exc}")
        wclass = None

    dcfg = cfg["dataset"]
    if dcfg.get("distribution", "unit_sphere") not in DISTRIBUTIONS:
        bad("distribution", f"distribution must be one of {DISTRIBUTIONS}")
    if int(dcfg.get("n", 16)) < 1:
        bad("n", "dataset n must be positive")

    for v in cfg.get("bounds", DEFAULT_VARIANTS):
        if v not in VARIANTS:
            bad("bounds", f"unknown bound variant {v!r}; expected one of {VARIANTS}")
    if cfg.get("estimator") is not None:
        try:
            EstimatorConfig.from_json(cfg["estimator"])
        except (KoopboundError, TypeError) as exc:
            bad("estimator", f"estimator: {exc}")

    sweep = cfg.get("sweep") or {}
    for axis, values in sweep.items():
        if axis not in SWEEP_AXES:
            bad(axis, f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")
        elif not isinstance(values, list) or not values:
            bad(axis, f"sweep axis {axis!r} needs a non-empty list of values")
        elif "file" in net_cfg and axis != "n":
            bad(axis, f"sweep axis {axis!r} needs a network generator, not a network file")
    if len(errs) > n_structural:
        return errs

    seen = set()

    def once(key, msg):
        if msg not in seen:
            seen.add(msg)
            bad(key, msg)

    for axes in sweep_cells(cfg):
        label = f"cell {axes or '{}'}"
        widths = _configured_widths(cfg, axes)
        try:
            net = build_network(cfg, axes)
            widths = list(net.widths)
            kernel = build_kernel(cfg, net)
            build_dataset(cfg, net, axes)
        except (KoopboundError, TypeError, ValueError, KeyError, OSError) as exc:
            msg = str(exc)
            key = ("sobolev_orders" if "s_l > d_l/2" in msg else
                   "kappa_target" if "kappa" in msg else "network")
            once(key, f"{label}: {msg}")
            kernel = None
        if kernel is not None and (kernel.T != net.T or kernel.m != net.m
                                   or kernel.input_dim != net.widths[0]):
            once("kernel", f"{label}: kernel does not match network T/m/d0")
        if wclass is not None and widths:
            for l, d in enumerate(widths[:-1], start=1):
                if not wclass.is_feasible(d):
                    once("weight_class", f"weight class is empty for layer {l}: "
                                         f"C^d = {wclass.C}^{d} < D = {wclass.D}")
    return errs


def _configured_widths(cfg: dict, axes: dict) -> list | None:
    """Layer widths implied by a generator config, without building the network."""
    gen = cfg["network"].get("generator")
    if gen is None:
        return None
    if "widths" in gen and "width" not in axes:
        return [int(w) for w in gen["widths"]]
    width = int(axes.get("width", gen.get("width", 2)))
    depth = int(axes.get("depth", gen.get("depth", 2)))
    return [width] * (depth + 1)


def _compute_variant(name, net, wclass, kernel, n):
    if name == "theorem_inv":
        return [theorem_inv_bound(net, wclass, kernel, n)]
    if name == "theorem_inv_class_sup":
        return [theorem_inv_bound(net, wclass, kernel, n, class_sup=True)]
    if name == "corollary":
        return [corollary_bound(net, wclass, kernel, n)]
    if name == "theorem_inj":
        return [theorem_inj_bound(net, wclass, kernel, n)]
    if name == "theorem_inj_class_sup":
        return [theorem_inj_bound(net, wclass, kernel, n, class_sup=True)]
    if name == "remark_brownian":
        return [remark_brownian_bound(net)]
    if name == "hashimoto_alt":
        return [hashimoto_alt_bound(net)]
    if name == "baselines":
        return baseline_bounds(net, n)
    raise KoopboundError(f"unknown variant {name!r}")


def run_cell(cfg: dict, index: int, axes: dict, with_bounds: bool = True) -> dict:
    """Compute every requested bound (and the estimate) for one sweep cell."""
    cell = {"index": index, "axes": axes, "bounds": [], "estimate": None, "errors": []}
    try:
        net = build_network(cfg, axes)
        kernel = build_kernel(cfg, net)
        X = build_dataset(cfg, net, axes)
        wclass = WeightClassSpec.from_json(cfg["weight_class"])
    except (KoopboundError, OSError, KeyError, TypeError, ValueError) as exc:
        cell["errors"].append({"stage": "setup", "message": str(exc)})
        return cell
    cell["widths"] = list(net.widths)
    cell["n"] = int(X.shape[0])
    if with_bounds:
        for name in cfg.get("bounds", DEFAULT_VARIANTS):
            try:
                cell["bounds"].extend(r.to_json() for r in _compute_variant(name, net, wclass, kernel, X.shape[0]))
            except KoopboundError as exc:
                cell["errors"].append({"stage": name, "message": str(exc)})
    if cfg.get("estimator") is not None:
        est_cfg = dict(cfg["estimator"])
        est_cfg.setdefault("seed", cfg.get("seed", 0))
        try:
            cell["estimate"] = estimate_sup(net, wclass, X, EstimatorConfig(**est_cfg)).to_json()
        except KoopboundError as exc:
            cell["errors"].append({"stage": "estimator", "message": str(exc)})
    return cell


def _run_cell_args(args):
    return run_cell(*args)


def _num(v) -> str:
    if v is None:
        return ""
    return repr(float(v))


def _joined(values) -> str:
    return ";".join(repr(float(v)) for v in values)


def csv_rows(cells: list[dict]) -> list[dict]:
    rows = []
    for cell in cells:
        axes = cell["axes"]
        est = cell.get("estimate") or {}
        base = {"cell": cell["index"], "width": axes.get("width", ""), "depth": axes.get("depth", ""),
                "condition_number": axes.get("condition_number", ""), "T": axes.get("T", ""),
                "n": cell.get("n", axes.get("n", "")),
                "widths": "-".join(str(w) for w in cell.get("widths", [])),
                "estimate_mean": _num(est.get("mean")), "estimate_stderr": _num(est.get("stderr"))}
        for rep in cell["bounds"]:
            inputs = rep.get("extras", {}).get("inputs", {})
            rows.append({**base, "variant": rep["variant"], "prefactor": _num(rep["prefactor"]),
                         "total": _num(rep["total"]),
                         "alternate_prefactor_total": _num(rep["alternate_prefactor_total"]),
                         "layer_contributions": _joined(l["contribution"] for l in rep["layers"]),
                         "layer_ratio_sup": _joined(l["ratio_sup"] for l in rep["layers"]),
                         "layer_det_factor": _joined(l["det_factor"] for l in rep["layers"]),
                         "layer_activation_norm": _joined(l["activation_norm_bound"] for l in rep["layers"]),
                         "g_norm": _num(inputs.get("g_norm")), "kappa": _num(inputs.get("kappa")),
                         "U0": _num(inputs.get("U0")), "error": ""})
        if cell.get("combined"):
            rows.append({**base, "variant": "combined", "total": _num(cell["combined"]["total"]),
                         "note": f"min over {';'.join(cell['combined']['of'])} "
                                 f"attained by {cell['combined']['variant']}"})
        for err in cell["errors"]:
            rows.append({**base, "variant": err["stage"], "error": err["message"]})
    return [{c: row.get(c, "") for c in CSV_COLUMNS} for row in rows]


def write_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def plot_series(cfg: dict, cells: list[dict]) -> dict:
    """``{axis: {series_name: [(x, y), ...]}}`` along each swept axis.

    For each axis the other axes are held at their first listed value.
    Non-positive values are dropped (log axis).
    """
    sweep = cfg.get("sweep") or {}
    out = {}
    for axis, values in sweep.items():
        if len(set(values)) < 2:
            continue
        others = {a: v[0] for a, v in sweep.items() if a != axis}
        series = {}
        for cell in cells:
            if any(cell["axes"].get(a) != v for a, v in others.items()):
                continue
            x = float(cell["axes"][axis])
            for rep in cell["bounds"]:
                y = rep["total"]
                if y is not None and math.isfinite(y) and y > 0:
                    series.setdefault(rep["variant"], []).append((x, y))
            est = cell.get("estimate")
            if est and est["mean"] > 0:
                series.setdefault("estimate", []).append((x, est["mean"]))
        series = {k: v for k, v in series.items() if len({p[0] for p in v}) >= 2}
        if series:
            out[axis] = series
    return out


@dataclass
class RunResult:
    report: dict
    csv_text: str
    plots: dict = field(default_factory=dict)

    @property
    def failed(self) -> bool:
        return any(cell["errors"] for cell in self.report["cells"])


def run_experiment(cfg: dict, jobs: int = 1, seed: int | None = None, with_bounds: bool = True) -> RunResult:
    """Execute the sweep; cells may run in parallel, assembly is in index order."""
    cfg = copy.deepcopy(cfg)
    if seed is not None:
        cfg["seed"] = int(seed)
    cfg.setdefault("seed", 0)
    cells_axes = sweep_cells(cfg)
    t0 = time.time()
    args = [(cfg, i, axes, with_bounds) for i, axes in enumerate(cells_axes)]
    if jobs > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            cells = list(pool.map(_run_cell_args, args))
    else:
        cells = [_run_cell_args(a) for a in args]
    for cell in cells:
        if len(cell["bounds"]) >= 2:
            best = min(cell["bounds"], key=lambda b: b["total"])
            cell["combined"] = {"variant": best["variant"], "total": best["total"],
                                "of": [b["variant"] for b in cell["bounds"]]}
    echo = {k: v for k, v in cfg.items() if not k.startswith("_")}
    report = {"tool": "koopbound", "version": __version__, "master_seed": cfg["seed"],
              "conventions": FOURIER_CONVENTION,
              "notes": ["'combined' is the minimum total over the computed variants in a cell; "
                        "unit-constant variants are not on the same absolute scale"],
              "config": echo, "cells": cells,
              "wall_clock": {"started": t0, "seconds": time.time() - t0, "jobs": jobs}}
    rows = csv_rows(cells)
    plots = {axis: emit_plot(series, axis, title=f"bounds vs {axis}")
             for axis, series in plot_series(cfg, cells).items()}
    return RunResult(report, write_csv(rows), plots)


def write_outputs(result: RunResult, out_dir) -> Path:
    out = Path(out_dir)
    (out / "plots").mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(result.report, indent=2) + "\n")
    (out / "bounds.csv").write_text(result.csv_text)
    for axis, svg in result.plots.items():
        (out / "plots" / f"{axis}.svg").write_text(svg)
    return out


def default_output_dir(cfg: dict) -> str:
    return (cfg.get("output") or {}).get("dir") or os.environ.get(OUTPUT_ENV, "koopbound_out")
