"""Command-line entry point: sweeps, custom runs and the HTTP server."""
import argparse
import json
import os
import socket
import stat
import sys
from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Tuple

import uvicorn
from loguru import logger
from pydantic import ValidationError as PydanticValidationError

from kraus_feedback.channels import validate_cptp
from kraus_feedback.config import settings
from kraus_feedback.errors import KrausFeedbackError
from kraus_feedback.experiments import (
    CustomStrategy,
    Experiment,
    ExperimentConfig,
    OutputFormat,
    run_experiment,
)
from kraus_feedback.fidelity import Method
from kraus_feedback.optimizer import OptimizerConfig
from kraus_feedback.specs import load_channel_spec

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_IO = 3

_SUBCOMMANDS = {
    "prop1": Experiment.PROP1,
    "conjecture": Experiment.CONJECTURE,
    "dephasing": Experiment.DEPHASING,
    "ad-advantage": Experiment.AD_ADVANTAGE,
    "custom": Experiment.CUSTOM,
}


def listen_url_to_config(listen: str) -> Dict:
    """Convert listen url string into uvicorn keyword arguments."""
    input_val = listen or ""
    schema: str = input_val[:4]
    listen_value: str = input_val[7:]

    if schema == "unix":  # noqa: R505
        try:
            sock = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
            if os.path.exists(listen_value):
                os.remove(listen_value)
            sock.bind(listen_value)
            os.chmod(listen_value, stat.S_IRWXU | stat.S_IRWXG | stat.S_IRWXO)
        except socket.error as msg:
            raise RuntimeError(f"Failed to create socket: {msg}") from msg

        return {"fd": sock.fileno()}
    elif schema == "http":
        host, _, port = listen_value.partition(":")
        return {"host": host or "0.0.0.0", "port": int(port or 8080)}
    return {"host": "0.0.0.0", "port": 8080}


def configure_logging(verbose: bool = False) -> None:
    """Send log records to stderr, keeping stdout for result tables."""
    logger.remove()
    logger.add(sys.stderr, level="DEBUG" if verbose else settings.KF_LOG_LEVEL)


def _shard(value: str) -> Tuple[int, int]:
    index, sep, count = value.partition("/")
    if not sep:
        raise argparse.ArgumentTypeError("expected INDEX/COUNT")
    try:
        return int(index), int(count)
    except ValueError as exc:
        raise argparse.ArgumentTypeError("expected INDEX/COUNT") from exc


def _add_run_options(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--seed", type=int, default=None)
    sub.add_argument("--budget", type=int, default=None, help="Haar samples")
    sub.add_argument("--n-max", type=int, default=None, dest="n_max")
    sub.add_argument("--grid-step", type=float, default=None)
    sub.add_argument(
        "--format",
        choices=[f.value for f in OutputFormat],
        default=OutputFormat.CSV.value,
    )
    sub.add_argument("--out", type=Path, default=None)
    sub.add_argument("--no-timestamp", action="store_true")
    sub.add_argument(
        "--force", action="store_true", help="override the overflow guard"
    )
    sub.add_argument(
        "--workers",
        type=int,
        default=None,
        help="worker threads (default KF_WORKERS)",
    )
    sub.add_argument("--refine", action="store_true", default=None)


def build_parser() -> argparse.ArgumentParser:
    """Argument parser with one subcommand per experiment."""
    parser = argparse.ArgumentParser(
        prog="kraus-feedback",
        description="Markovian and Bayesian feedback on quantum channels.",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    subs = parser.add_subparsers(dest="command", required=True)

    for name in ("prop1", "dephasing"):
        _add_run_options(subs.add_parser(name))

    damping = subs.add_parser("ad-advantage")
    _add_run_options(damping)
    damping.add_argument(
        "--per-step",
        action="store_true",
        help="also search the step-two measurement at n=2",
    )

    conjecture = subs.add_parser("conjecture")
    _add_run_options(conjecture)
    conjecture.add_argument(
        "--full", action="store_true", help="fine grid, use with --shard"
    )
    conjecture.add_argument("--shard", type=_shard, default=None)
    conjecture.add_argument("--max-points", type=int, default=256)

    custom = subs.add_parser("custom")
    _add_run_options(custom)
    custom.add_argument("spec", type=Path)
    custom.add_argument("-n", "--steps", type=int, default=1)
    custom.add_argument(
        "--strategy",
        choices=[s.value for s in CustomStrategy],
        default=CustomStrategy.BOTH.value,
    )
    custom.add_argument("--optimize", action="store_true")
    custom.add_argument(
        "--method",
        choices=[m.value for m in Method],
        default=Method.BRUTE.value,
    )

    validate = subs.add_parser("validate")
    validate.add_argument("spec", type=Path)

    subs.add_parser("serve")
    return parser


def _optimizer(
    args: argparse.Namespace, base: OptimizerConfig
) -> OptimizerConfig:
    update: Dict[str, Any] = {}
    if args.seed is not None:
        update["seed"] = args.seed
    if args.budget is not None:
        update["sample_budget"] = args.budget
    if args.refine is not None:
        update["refine"] = args.refine
    if args.workers is not None:
        update["workers"] = args.workers
    return OptimizerConfig(**{**base.dict(), **update})


def experiment_config(args: argparse.Namespace) -> ExperimentConfig:
    """Translate parsed arguments into a validated sweep config."""
    experiment = _SUBCOMMANDS[args.command]
    values: Dict[str, Any] = {
        "experiment": experiment,
        "grid_step": args.grid_step,
        "n_max": args.n_max,
        "output_path": args.out,
        "format": args.format,
        "timestamp": not args.no_timestamp,
        "force": args.force,
    }
    if args.workers is not None:
        values["workers"] = args.workers
    if experiment is Experiment.CONJECTURE:
        values.update(
            full=args.full, shard=args.shard, max_points=args.max_points
        )
    if experiment is Experiment.AD_ADVANTAGE:
        values["per_step"] = args.per_step
    if experiment is Experiment.CUSTOM:
        values.update(
            channel_spec=args.spec,
            n_max=args.n_max or args.steps,
            strategy=args.strategy,
            optimize=args.optimize,
            method=args.method,
        )
    defaults = ExperimentConfig(experiment=experiment).optimizer
    values["optimizer"] = _optimizer(args, defaults)
    return ExperimentConfig(**values)


def validate_spec(path: Path) -> Dict[str, Any]:
    """Summary of a channel-spec file; raises on CPTP violation."""
    family = load_channel_spec(path)
    kraus = family.build()
    report = validate_cptp(kraus)
    return {
        "family": family.name,
        "dim": kraus.dim,
        "operators": kraus.size,
        "deviation": report.deviation,
        "valid": report.valid,
    }


def serve() -> None:
    """Run the HTTP API under uvicorn."""
    params = listen_url_to_config(settings.KF_LISTEN)
    params["reload"] = settings.KF_ENVIRONMENT in ("dev", "test")
    uvicorn.run("kraus_feedback.app:application", **params)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Launch kraus-feedback."""
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose)
    try:
        if args.command == "serve":
            serve()
        elif args.command == "validate":
            print(json.dumps(validate_spec(args.spec)))
        else:
            run_experiment(experiment_config(args), stream=sys.stdout)
    except KrausFeedbackError as exc:
        logger.error(exc)
        return exc.exit_code
    except PydanticValidationError as exc:
        logger.error(exc)
        return EXIT_VALIDATION
    except OSError as exc:
        logger.error(exc)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
