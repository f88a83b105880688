"""Command-line entry point: ``sgdgeom <subcommand> [options]``.

Exit status is 0 when every embedded check passes, 1 when a check fails, 2 for
usage or configuration errors and 3 when the output directory is unusable.
"""

from __future__ import annotations

import argparse
import sys

from .config import ConfigError, load_config

SUBCOMMANDS = {
    "tensors": "tensors",
    "identity1": "identity1",
    "simulate": "dynamics",
    "stability": "stability",
    "stationary-variance": "stationary-variance",
    "curvature": "curvature",
    "complexity-action": "complexity-action",
}


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",")]


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",")]


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--basis", help='basis spec, e.g. "1,x,x^2" or "fourier:2"')
    p.add_argument("--N", "-n", dest="N", type=int, help="sample count")
    p.add_argument("--sigma", type=float, help="label noise standard deviation")
    p.add_argument("--alpha-bar", dest="alpha_bar", type=_floats)
    p.add_argument("--delta-alpha", dest="delta_alpha", type=_floats)
    p.add_argument("--epsilon", type=float, help="metric scale")
    p.add_argument("--eta", type=float, help="learning rate")
    p.add_argument("--batch", type=int, help="mini-batch size")
    p.add_argument("--epochs", type=int, help="number of SGD steps")
    p.add_argument("--burn-in", dest="burn_in", type=float, help="discarded fraction of steps")
    p.add_argument("--eta-grid", dest="eta_grid", type=_floats)
    p.add_argument("--batch-grid", dest="batch_grid", type=_ints)
    p.add_argument("--t-final", dest="t_final", type=float)
    p.add_argument("--dt", type=float, help="flow integration step")
    p.add_argument("--h", dest="fd_step", type=float, help="finite-difference step")
    p.add_argument("--rate-convention", dest="rate_convention", choices=("paper", "flow"))
    p.add_argument("--quiet", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sgdgeom", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        _common(sub.add_parser(name))
    p = sub.add_parser("reproduce-all", help="run the full acceptance suite")
    p.add_argument("--out", default="results")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--criteria", type=_ints, help="subset, e.g. 1,2,5")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "reproduce-all":
        from .acceptance import reproduce_all

        summary, status = reproduce_all(args.out, args.seed, args.criteria)
        if "criteria" in summary:
            for c in summary["criteria"]:
                state = "PASS" if c["passed"] else "FAIL"
                print(f"criterion {c['criterion']:2d} [{state}] {c['title']}")
        if "error" in summary:
            print(f"error: {summary['error']}", file=sys.stderr)
        return status

    from .experiments import run_experiment

    overrides = {k: v for k, v in vars(args).items()
                 if k not in ("command", "config", "quiet")}
    overrides["kind"] = SUBCOMMANDS[args.command]
    try:
        cfg = load_config(args.config, overrides)
    except ConfigError as exc:
        print(f"sgdgeom: invalid config: {exc}", file=sys.stderr)
        return 2
    try:
        report = run_experiment(cfg, write=True)
    except OSError as exc:
        print(f"sgdgeom: cannot write to {cfg.out}: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"sgdgeom: {exc}", file=sys.stderr)
        return 2
    if not args.quiet:
        for c in report.checks:
            print(c.line())
        print(f"report: {cfg.out}/{cfg.kind}_report.json  payload={report.payload_hash[:16]}")
    return 0 if report.passed else 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
