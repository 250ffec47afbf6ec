"""Command-line front end: `polycouple <subcommand> CONFIG [flags]`.

stdout carries machine-readable results only; every error is a single JSON
line on stderr.
"""

from polycouple.couplers import CycleStats
from polycouple.harness import ConfigError
from polycouple.harness import ExperimentConfig
from polycouple.harness import initial_state
from polycouple.harness import OracleSpec
from polycouple.harness import phc_verdict
from polycouple.harness import resolve_coupler
from polycouple.harness import run_experiment
from polycouple.harness import run_oracle
from polycouple.harness import with_overrides
from polycouple.polyfield import BivariatePolyVec
from polycouple.polyfield import PHCFailure
from polycouple.polyfield import reduce_to_monomials
from polycouple.sdecore import NoiseStream
from polycouple.sdecore import NumericalFault

import argparse
import json
import sys
import typing as t

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PHC = 3
EXIT_COUPLING = 4


class CliError(Exception):
    """Error that ends the invocation with a given exit code."""

    def __init__(self, code: int, error: str, message: str):
        super().__init__(message)
        self.code = code
        self.error = error
        self.message = message


class UsageErrorParser(argparse.ArgumentParser):
    """Reports usage errors as a CliError instead of exiting."""

    def error(self, message: str) -> t.NoReturn:
        raise CliError(EXIT_CONFIG, "UsageError", message)


def _emit(payload: t.Mapping[str, t.Any], stream: t.TextIO) -> None:
    stream.write(json.dumps(payload, sort_keys=True) + "\n")
    stream.flush()


def _load(args: argparse.Namespace) -> t.Dict[str, t.Any]:
    path = args.config_option or args.config
    if not path:
        raise CliError(EXIT_CONFIG, "ConfigError", "A configuration file is required")
    try:
        with open(path, encoding="utf-8") as f:
            return json.load(f)
    except OSError as exc:
        raise CliError(EXIT_CONFIG, exc.__class__.__name__, f"Cannot read {path}: {exc.strerror}")
    except json.JSONDecodeError as exc:
        raise CliError(EXIT_CONFIG, "JSONDecodeError", f"Cannot parse {path}: {exc}")


def _experiment(args: argparse.Namespace) -> ExperimentConfig:
    cfg = ExperimentConfig.from_dict(_load(args))
    return with_overrides(
        cfg,
        master_seed=getattr(args, "seed", None),
        replicas=getattr(args, "replicas", None),
        output_path=getattr(args, "out", None),
        R=getattr(args, "R", None),
        dt=getattr(args, "dt", None),
    )


def cmd_check_phc(args: argparse.Namespace) -> int:
    document = _load(args)
    verdict = phc_verdict(document.get("system", document))
    _emit(verdict, sys.stdout)
    return EXIT_OK if verdict["holds"] else EXIT_PHC


def cmd_reduce(args: argparse.Namespace) -> int:
    document = _load(args)
    try:
        sigma1 = BivariatePolyVec.from_literal(document["sigma1"])
        sigma2 = BivariatePolyVec.from_literal(document["sigma2"])
        start = document["start"]
        start_tilde = document["start_tilde"]
        n = int(document.get("n", max(sigma1.max_degree, sigma2.max_degree)))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"Invalid reduction input: {exc}")
    reduction = reduce_to_monomials(sigma1, sigma2, start, start_tilde, n)
    _emit(
        {
            "phi": reduction.phi.to_literal(),
            "psi1": reduction.psi1.to_literal(),
            "z3": reduction.z3.tolist(),
            "z3_tilde": reduction.z3_tilde.tolist(),
        },
        sys.stdout,
    )
    return EXIT_OK


def cmd_couple(args: argparse.Namespace) -> int:
    cfg = _experiment(args)
    if cfg.scenario not in ("heisenberg", "monomial", "full"):
        raise ConfigError(f"Scenario {cfg.scenario} is not a coupling", "scenario")

    def trace(stats: CycleStats) -> None:
        _emit(stats.to_dict(), sys.stderr)

    coupler = resolve_coupler(cfg, trace if args.trace else None)
    outcome = coupler.couple(initial_state(cfg), NoiseStream(cfg.master_seed, cfg.first_replica))
    _emit(
        {
            "replica_id": cfg.first_replica,
            "scenario": cfg.label,
            "success": outcome.success,
            "coupling_time_physical": outcome.coupling_time_physical,
            "cycles": len(outcome.cycles),
            "active_time": outcome.active_time,
            "sup_delta_w1": outcome.sup_delta_w1,
            "failure": outcome.failure,
            "failed_level": str(outcome.failed_level) if outcome.failed_level else None,
        },
        sys.stdout,
    )
    if args.strict and not outcome.success:
        return EXIT_COUPLING
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = _experiment(args)
    records = run_experiment(cfg)
    _emit(
        {
            "output_path": cfg.output_path,
            "replicas": len(records),
            "successes": sum(record.success for record in records),
        },
        sys.stdout,
    )
    return EXIT_OK


def cmd_oracle(args: argparse.Namespace) -> int:
    document = _load(args)
    try:
        if "scenario" in document:
            cfg = ExperimentConfig.from_dict(document)
            if cfg.oracle is None:
                raise ConfigError("Configuration has no oracle", "oracle")
            spec = cfg.oracle
        else:
            spec = OracleSpec(**document)
        if args.seed is not None:
            spec = OracleSpec(**{**spec.__dict__, "seed": args.seed})
    except TypeError as exc:
        raise ConfigError(f"Invalid oracle: {exc}", "oracle")
    report = run_oracle(spec)
    _emit(report, sys.stdout)
    return EXIT_OK


def _add_config(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("config", nargs="?", help="Path to the JSON configuration file.")
    parser.add_argument(
        "--config", dest="config_option", help="Path to the JSON configuration file."
    )


def _add_run_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, help="Override master_seed.")
    parser.add_argument("--R", type=float, help="Override the coupler's R.")
    parser.add_argument("--dt", type=float, help="Override the coupler's dt.")


def build_parser() -> argparse.ArgumentParser:
    parser = UsageErrorParser(
        prog="polycouple",
        description="Markovian couplings of Brownian motion with its monomial integrals.",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    check = commands.add_parser(
        "check-phc",
        help="Decide the rank test for a pair of polynomial fields.",
        description="Print {holds, rank, cols}; exit 3 if the rank test fails.",
    )
    _add_config(check)
    check.set_defaults(handler=cmd_check_phc)

    reduce = commands.add_parser(
        "reduce",
        help="Reduce polynomial fields to monomial integral coordinates.",
        description="Print phi, psi1 and the minimum-norm z3 for both starting points.",
    )
    _add_config(reduce)
    reduce.set_defaults(handler=cmd_reduce)

    couple = commands.add_parser(
        "couple",
        help="Run one coupling replica.",
        description="Run the replica first_replica of the configured scenario.",
    )
    _add_config(couple)
    _add_run_flags(couple)
    couple.add_argument(
        "--trace", action="store_true", help="Stream per-cycle statistics to stderr."
    )
    couple.add_argument(
        "--strict", action="store_true", help="Exit 4 when the replica does not couple."
    )
    couple.set_defaults(handler=cmd_couple)

    sweep = commands.add_parser(
        "sweep",
        help="Run all replicas and write the CSV and metadata files.",
        description="Run the configured experiment.",
    )
    _add_config(sweep)
    _add_run_flags(sweep)
    sweep.add_argument("--replicas", type=int, help="Override the number of replicas.")
    sweep.add_argument("--out", help="Override output_path.")
    sweep.set_defaults(handler=cmd_sweep)

    oracle = commands.add_parser(
        "oracle",
        help="Run a Monte Carlo oracle.",
        description="Run I10_var, I20_var, levy_var or levy_identity and print the report.",
    )
    _add_config(oracle)
    oracle.add_argument("--seed", type=int, help="Override the oracle seed.")
    oracle.set_defaults(handler=cmd_oracle)
    return parser


def main(argv: t.Optional[t.Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.handler(args)
    except CliError as exc:
        _emit({"error": exc.error, "message": exc.message}, sys.stderr)
        return exc.code
    except PHCFailure as exc:
        _emit({"error": exc.__class__.__name__, "message": str(exc)}, sys.stderr)
        return EXIT_PHC
    except NumericalFault as exc:
        _emit({"error": exc.__class__.__name__, "message": str(exc)}, sys.stderr)
        return EXIT_COUPLING
    except (ValueError, OSError) as exc:
        # ConfigError and the polynomial input errors are ValueErrors.
        _emit({"error": exc.__class__.__name__, "message": str(exc)}, sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
