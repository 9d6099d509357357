"""Command-line entry point: ``koopbound <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .bounds import theorem_inj_bound, theorem_inv_bound
from .exceptions import KoopboundError
from .experiment import (
    ConfigError,
    default_output_dir,
    load_config,
    run_experiment,
    validate_config,
    write_outputs,
)
from .kernels import MultiTaskKernelConfig
from .matana import WeightClassSpec
from .network import ActivationSpec, NetworkSpec, generate_network
from .rademacher import default_jobs

EXIT_OK, EXIT_FAILED, EXIT_INVALID = 0, 1, 2


def _load_valid(path):
    """Parse and validate; return ``(cfg, None)`` or ``(None, messages)``."""
    try:
        cfg, text = load_config(path)
    except ConfigError as exc:
        return None, exc.messages
    except OSError as exc:
        return None, [f"{path}: {exc.strerror}"]
    errs = validate_config(cfg, text)
    return (None, errs) if errs else (cfg, None)


def _report_invalid(path, errs) -> int:
    for e in errs:
        print(f"{path}: {e}", file=sys.stderr)
    return EXIT_INVALID


def cmd_validate(args) -> int:
    cfg, errs = _load_valid(args.config)
    if errs:
        return _report_invalid(args.config, errs)
    print(f"{args.config}: valid")
    return EXIT_OK


def cmd_run(args, with_bounds: bool = True) -> int:
    cfg, errs = _load_valid(args.config)
    if errs:
        return _report_invalid(args.config, errs)
    result = run_experiment(cfg, jobs=args.jobs, seed=args.seed, with_bounds=with_bounds)
    out = write_outputs(result, args.out or default_output_dir(cfg))
    n_cells = len(result.report["cells"])
    n_failed = sum(bool(c["errors"]) for c in result.report["cells"])
    print(f"wrote {out}/report.json, {out}/bounds.csv and {len(result.plots)} plot(s); "
          f"{n_cells} cell(s), {n_failed} with errors")
    for cell in result.report["cells"]:
        for err in cell["errors"]:
            print(f"cell {cell['index']} {cell['axes']}: {err['stage']}: {err['message']}", file=sys.stderr)
    return EXIT_FAILED if result.failed else EXIT_OK


def cmd_estimate(args) -> int:
    return cmd_run(args, with_bounds=False)


def _read_json(path):
    return json.loads(Path(path).read_text())


def cmd_bound(args) -> int:
    try:
        net = NetworkSpec.from_json(_read_json(args.network))
        wclass = WeightClassSpec.from_json(_read_json(args.weight_class))
        kernel = MultiTaskKernelConfig.from_json(_read_json(args.kernel))
        fn = theorem_inj_bound if wclass.kind == "injective" else theorem_inv_bound
        report = fn(net, wclass, kernel, args.n)
    except (KoopboundError, OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILED
    print(json.dumps(report.to_json(), indent=2))
    return EXIT_OK


def cmd_gen_network(args) -> int:
    act = ActivationSpec(kind=args.activation, alpha=args.alpha, beta=args.beta)
    widths = [int(w) for w in args.widths.split(",")] if args.widths else None
    try:
        net = generate_network(args.width, args.depth, args.T, args.m, args.recipe, widths=widths,
                               gamma=args.gamma, kappa_target=args.kappa_target, activation=act,
                               nu=args.nu, seed=args.seed)
    except KoopboundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    Path(args.output).write_text(json.dumps(net.to_json(), indent=2) + "\n")
    print(f"wrote {args.output} (widths {list(net.widths)})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="koopbound", description="Koopman-based generalization bounds")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="check an experiment config")
    v.add_argument("config")
    v.set_defaults(func=cmd_validate)

    for name, func, help_ in (("run", cmd_run, "run an experiment sweep"),
                              ("estimate", cmd_estimate, "run only the Rademacher estimator")):
        r = sub.add_parser(name, help=help_)
        r.add_argument("config")
        r.add_argument("--jobs", type=int, default=default_jobs(), help="worker processes over sweep cells")
        r.add_argument("--seed", type=int, default=None, help="override the master seed")
        r.add_argument("--out", default=None, help="output directory (default: config, then $KOOPBOUND_OUT)")
        r.set_defaults(func=func)

    b = sub.add_parser("bound", help="theorem bound for one network")
    b.add_argument("network")
    b.add_argument("weight_class")
    b.add_argument("kernel")
    b.add_argument("--n", type=int, required=True)
    b.set_defaults(func=cmd_bound)

    g = sub.add_parser("gen-network", help="write a synthetic network JSON")
    g.add_argument("--width", type=int, default=2)
    g.add_argument("--widths", default=None, help="comma-separated d_0,...,d_L")
    g.add_argument("--depth", type=int, default=2)
    g.add_argument("--T", type=int, default=1)
    g.add_argument("--m", type=int, default=1)
    g.add_argument("--recipe", default="orthogonal",
                   choices=("orthogonal", "scaled_orthogonal", "conditioned"))
    g.add_argument("--gamma", type=float, default=1.0)
    g.add_argument("--kappa-target", type=float, default=None)
    g.add_argument("--activation", default="smoothed_leaky_relu",
                   choices=("smoothed_leaky_relu", "identity", "tanh"))
    g.add_argument("--alpha", type=float, default=0.5)
    g.add_argument("--beta", type=float, default=1.0)
    g.add_argument("--nu", type=float, default=1.5)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("-o", "--output", required=True)
    g.set_defaults(func=cmd_gen_network)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
