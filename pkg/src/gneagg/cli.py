"""Command-line harness: ``gne-agg run|compare|verify|oracle``.

Exit codes: 0 success, 1 configuration error, 2 numerical failure,
3 verification violations.
"""

from __future__ import annotations

import argparse
import logging
import sys
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any

from . import __version__
from .algorithms import run_algorithm1, run_algorithm2, run_algorithm3
from .config import ALGORITHMS, PRESETS, ExperimentConfig, load_config, preset, with_overrides
from .diagnostics import (
    bound_inputs,
    error_bound_check,
    summability_report,
    tracking_bound_check,
)
from .errors import (
    AssumptionViolated,
    ConfigError,
    DimensionMismatch,
    InfeasibleInstance,
    InstanceMismatch,
    InvalidGamma,
    InvalidParams,
    MaxIterExceeded,
    NoConvergence,
    NonFiniteIterate,
    NotStrictlyFeasible,
    NotSupported,
    PDCheckFailed,
    ProjectionFailure,
    ScheduleExhausted,
)
from .export import (
    COMPARE_FILE,
    CONFIG_ECHO_FILE,
    DIAGNOSTICS_FILE,
    INSTANCE_FILE,
    REFERENCE_FILE,
    SCHEDULE_FILE,
    VERIFY_TEMPLATE,
    write_compare,
    write_document,
    write_trace,
)
from .game import GameConstants, GameInstance, constants, game_to_dict, instance_hash
from .network import GraphSchedule, certify_decay, generate_schedule
from .oracle import ReferenceSolution, cached_reference, dual_bound, gne_spot_check, solve_reference, vi_spot_check
from .projection import StackedProjector
from .steps import StepPlan, make_step_plan
from .store import ResultStore
from .trace import RunTrace
from .verify import SUITES, bounds_suite, network_suite, operator_suite, tracking_suite

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERICAL = 2
EXIT_VIOLATION = 3

CONFIG_ERRORS = (
    ConfigError,
    InvalidGamma,
    InvalidParams,
    InfeasibleInstance,
    InstanceMismatch,
    DimensionMismatch,
    NotSupported,
    OSError,
)
NUMERICAL_ERRORS = (
    NonFiniteIterate,
    NoConvergence,
    ProjectionFailure,
    PDCheckFailed,
    ScheduleExhausted,
    MaxIterExceeded,
)


@dataclass
class Experiment:
    """A game, its step plan and its graph schedule built from one configuration."""

    config: ExperimentConfig
    game: GameInstance
    game_constants: GameConstants
    plan: StepPlan
    projector: StackedProjector = field(repr=False)

    @classmethod
    def prepare(cls, config: ExperimentConfig) -> Experiment:
        game = config.instance.build()
        gc = constants(game)
        steps = config.steps
        plan = make_step_plan(gc, steps.tau_margin, steps.gamma, alpha_scale=steps.alpha_scale)
        logger.info(
            "prepared instance %s: N=%d n=%d m=%d tau=%.6g nu=%.6g",
            instance_hash(game)[:12],
            game.n_agents,
            game.decision_dim,
            game.coupling_dim,
            plan.tau,
            plan.nu,
        )
        return cls(config, game, gc, plan, StackedProjector(game.local_sets))

    @cached_property
    def instance_hash(self) -> str:
        return instance_hash(self.game)

    @cached_property
    def schedule(self) -> GraphSchedule:
        net = self.config.network
        return generate_schedule(net.kind, self.game.n_agents, net.horizon, net.seed, net.cycle)

    def reference(self) -> ReferenceSolution:
        """The reference solution, read from or written to the cache when one is configured."""
        run = self.config.run
        options: dict[str, Any] = {"tol": run.reference_tol, "max_iter": run.reference_max_iter}
        cache = self.config.output.cache
        if cache is None:
            return solve_reference(self.game, projector=self.projector, **options)
        with ResultStore(cache) as store:
            return cached_reference(self.game, store, **options)

    def run(self, algorithm: str, reference: ReferenceSolution | None = None) -> RunTrace:
        run = self.config.run
        common: dict[str, Any] = {
            "dual_cap": run.dual_cap,
            "reference_x": None if reference is None else reference.x_star,
            "snapshot_every": run.snapshot_every,
            "projector": self.projector,
        }
        if algorithm == "1":
            return run_algorithm1(self.game, self.plan, None, run.max_iter, run.kkt_tol, **common)
        if algorithm == "2":
            return run_algorithm2(self.game, self.plan, None, run.max_iter, run.fix_tol, **common)
        if algorithm == "3":
            return run_algorithm3(
                self.game,
                self.plan,
                self.schedule,
                self.config.network.variant,
                None,
                run.max_iter,
                y_tracking=run.y_tracking,
                unsafe_gamma=self.config.steps.unsafe_gamma,
                **common,
            )
        raise ConfigError(f"unknown algorithm {algorithm!r}; choose from {ALGORITHMS}")

    def diagnostics(self, traces: dict[str, RunTrace], reference: ReferenceSolution) -> dict[str, Any]:
        """Run summaries, bound reports and summability evidence for ``diagnostics.json``."""
        series = self.config.output.series
        doc: dict[str, Any] = {
            "instance_hash": self.instance_hash,
            "game_constants": self.game_constants.to_dict(),
            "step_plan": self.plan.to_dict(),
            "reference": {"kkt_certificate": reference.kkt_certificate, "agreement": reference.agreement},
            "runs": {},
        }
        for algorithm, trace in traces.items():
            entry: dict[str, Any] = {"summary": trace.summary()}
            if algorithm == "2":
                entry["summability"] = summability_report(trace, self.plan.nu).to_dict(series)
            if algorithm == "3":
                entry["summability"] = summability_report(trace).to_dict(series)
                if self.config.output.bounds:
                    entry.update(self._bound_reports(trace, series))
            doc["runs"][algorithm] = entry
        return doc

    def _bound_reports(self, trace: RunTrace, series: bool) -> dict[str, Any]:
        reports: dict[str, Any] = {
            "error_bound": error_bound_check(trace, self.plan, self.game_constants).to_dict(series),
        }
        try:
            certificate = certify_decay(self.schedule, self.config.network.variant, seed=self.config.network.seed)
        except AssumptionViolated as exc:
            logger.warning("tracking bounds skipped: %s", exc)
            reports["tracking_bound"] = {"guaranteed": False, "reason": str(exc)}
            return reports
        inputs = bound_inputs(self.game, self.plan, trace, certificate, self.game_constants)
        reports["decay_certificate"] = certificate.to_dict()
        reports["bound_inputs"] = inputs.to_dict()
        reports["tracking_bound"] = tracking_bound_check(trace, inputs).to_dict(series)
        return reports

    def write_inputs(self, directory: Path, with_schedule: bool) -> None:
        write_document(directory / CONFIG_ECHO_FILE, self.config.to_dict())
        write_document(directory / INSTANCE_FILE, game_to_dict(self.game))
        if with_schedule:
            write_document(directory / SCHEDULE_FILE, self.schedule.to_dict())


def _resolve_config(args: argparse.Namespace, path: str | None) -> ExperimentConfig:
    if path is not None:
        config = load_config(path)
    else:
        config = preset(args.preset or "cournot-benchmark")
    return with_overrides(
        config,
        algorithms=tuple(args.algo) if getattr(args, "algo", None) else None,
        gamma=getattr(args, "gamma", None),
        seed=args.seed,
        out=args.out,
        dual_cap=getattr(args, "dual_cap", None),
        unsafe_gamma=True if getattr(args, "unsafe_gamma", False) else None,
        max_iter=getattr(args, "max_iter", None),
        alpha_scale=getattr(args, "alpha_scale", None),
    )


def cmd_run(args: argparse.Namespace) -> int:
    """Runs the configured algorithms and writes traces and diagnostics."""
    config = _resolve_config(args, args.config)
    experiment = Experiment.prepare(config)
    reference = experiment.reference()
    traces = {algorithm: experiment.run(algorithm, reference) for algorithm in config.run.algorithms}

    out = config.output.directory
    out.mkdir(parents=True, exist_ok=True)
    for trace in traces.values():
        write_trace(out, trace)
    write_document(out / REFERENCE_FILE, reference.to_dict())
    write_document(out / DIAGNOSTICS_FILE, experiment.diagnostics(traces, reference))
    experiment.write_inputs(out, "3" in traces)
    logger.info("wrote %d trace(s) to %s", len(traces), out)
    return EXIT_OK


def _compare_labels(configs: Sequence[ExperimentConfig], paths: Sequence[str | None]) -> list[str]:
    labels = []
    for index, (config, path) in enumerate(zip(configs, paths)):
        label = config.label or (Path(path).stem if path else f"config{index}")
        labels.append(label if label not in labels else f"{label}-{index}")
    return labels


def cmd_compare(args: argparse.Namespace) -> int:
    """Runs several configurations on one shared instance and merges their residual columns."""
    paths: list[str | None] = list(args.config) if args.config else [None]
    configs = [_resolve_config(args, path) for path in paths]
    experiments = [Experiment.prepare(config) for config in configs]
    hashes = {e.instance_hash for e in experiments}
    if len(hashes) > 1:
        raise InstanceMismatch(f"compared configurations describe {len(hashes)} different instances")

    reference = experiments[0].reference()
    for experiment in experiments:
        if "3" in experiment.config.run.algorithms:
            experiment.schedule  # materialize before the worker threads share it
    jobs = [
        (f"{label}:{algorithm}", experiment, algorithm)
        for label, experiment in zip(_compare_labels(configs, paths), experiments)
        for algorithm in experiment.config.run.algorithms
    ]
    with ThreadPoolExecutor(max_workers=args.workers) as pool:
        futures = [pool.submit(experiment.run, algorithm, reference) for _, experiment, algorithm in jobs]
        traces = {label: future.result() for (label, _, _), future in zip(jobs, futures)}

    out = configs[0].output.directory
    write_compare(out / COMPARE_FILE, traces, args.column)
    write_document(out / REFERENCE_FILE, reference.to_dict())
    logger.info("compared %d run(s) into %s", len(traces), out / COMPARE_FILE)
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    """Runs one property suite and writes ``verify_<suite>.json``."""
    config = _resolve_config(args, args.config)
    experiment = Experiment.prepare(config)
    network = config.network
    if args.suite == "network":
        report = network_suite(experiment.schedule, network.variant, seed=network.seed)
    elif args.suite == "operators":
        report = operator_suite(
            experiment.game, experiment.plan, experiment.game_constants, args.samples, config.instance.seed
        )
    else:
        trace = experiment.run("3")
        if args.suite == "tracking":
            report = tracking_suite(trace)
        else:
            report = bounds_suite(
                experiment.game,
                experiment.plan,
                experiment.game_constants,
                trace,
                experiment.schedule,
                network.variant,
                seed=network.seed,
            )
    path = write_document(config.output.directory / VERIFY_TEMPLATE.format(args.suite), report.to_dict())
    logger.info("verification report written to %s", path)
    return EXIT_OK if report.passed else EXIT_VIOLATION


def cmd_oracle(args: argparse.Namespace) -> int:
    """Solves the instance to high accuracy and spot-checks the solution."""
    config = _resolve_config(args, args.config)
    experiment = Experiment.prepare(config)
    game = experiment.game
    reference = experiment.reference()
    checks = [
        gne_spot_check(game, reference, args.samples, config.instance.seed, projector=experiment.projector),
        vi_spot_check(game, reference, args.samples, config.instance.seed, projector=experiment.projector),
    ]
    doc: dict[str, Any] = {
        "instance_hash": experiment.instance_hash,
        "kkt_certificate": reference.kkt_certificate,
        "agreement": reference.agreement,
        "unique": reference.unique,
        "checks": {c.name: c.to_dict() for c in checks},
    }
    try:
        doc["dual_bound"] = dual_bound(game)
    except (NotStrictlyFeasible, NotSupported) as exc:
        doc["dual_bound"] = None
        logger.warning("dual bound unavailable: %s", exc)

    out = config.output.directory
    write_document(out / REFERENCE_FILE, reference.to_dict())
    write_document(out / VERIFY_TEMPLATE.format("oracle"), doc)
    experiment.write_inputs(out, with_schedule=False)
    passed = all(c.passed for c in checks)
    if not passed:
        logger.warning("oracle spot checks failed: %s", {c.name: c.violations for c in checks})
    return EXIT_OK if passed else EXIT_VIOLATION


def _add_common(parser: argparse.ArgumentParser, multiple_configs: bool = False) -> None:
    if multiple_configs:
        parser.add_argument("--config", action="append", metavar="PATH", help="configuration file (repeatable)")
    else:
        parser.add_argument("--config", metavar="PATH", help="configuration file")
    parser.add_argument("--preset", choices=sorted(PRESETS), help="built-in configuration used without --config")
    parser.add_argument("--seed", type=int, help="reseed the instance and the network")
    parser.add_argument("--out", metavar="DIR", help="output directory")
    parser.add_argument("--max-iter", type=int, help="iteration budget")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    parser.add_argument("-q", "--quiet", action="store_true", help="warnings and errors only")


def _add_steps(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--algo", action="append", choices=ALGORITHMS, help="algorithm to run (repeatable)")
    parser.add_argument("--gamma", metavar="SPEC", help="relaxation schedule, pow:B or const:V")
    parser.add_argument("--dual-cap", type=float, help="project multipliers onto [0, cap]")
    parser.add_argument("--unsafe-gamma", action="store_true", help="allow non-diminishing gamma in algorithm 3")
    parser.add_argument("--alpha-scale", type=float, help="multiply the primal steps")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gne-agg",
        description="Equilibrium seeking in aggregative games with coupling constraints.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="run algorithms and write traces")
    _add_common(run)
    _add_steps(run)
    run.set_defaults(handler=cmd_run)

    compare = commands.add_parser("compare", help="merge residual columns of several runs")
    _add_common(compare, multiple_configs=True)
    _add_steps(compare)
    compare.add_argument("--column", default="norm_residual", help="trace column to compare")
    compare.add_argument("--workers", type=int, default=None, help="parallel runs")
    compare.set_defaults(handler=cmd_compare)

    verify = commands.add_parser("verify", help="run a property suite")
    verify.add_argument("suite", choices=SUITES)
    _add_common(verify)
    _add_steps(verify)
    verify.add_argument("--samples", type=int, default=1000, help="sampled points for the operators suite")
    verify.set_defaults(handler=cmd_verify)

    oracle = commands.add_parser("oracle", help="solve the instance and spot-check the solution")
    _add_common(oracle)
    oracle.add_argument("--samples", type=int, default=100, help="sampled deviations per check")
    oracle.set_defaults(handler=cmd_oracle)
    return parser


def _configure_logging(args: argparse.Namespace) -> None:
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(
        level=level,
        stream=sys.stderr,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        force=True,
    )


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    _configure_logging(args)
    try:
        return args.handler(args)
    except CONFIG_ERRORS as exc:
        logger.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except NUMERICAL_ERRORS as exc:
        logger.error("numerical failure: %s", exc)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
