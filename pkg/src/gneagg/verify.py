"""Property suites behind ``gne-agg verify``.

Each suite returns a :class:`SuiteReport` whose ``checks`` map a property name
to the number of samples, the worst observed margin and the violation count.
A margin is the slack of the inequality being checked, so negative values are
violations.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import _rng
from .diagnostics import bound_inputs, error_bound_check, summability_report, tracking_bound_check
from .errors import AssumptionViolated, PDCheckFailed
from .game import GameConstants, GameInstance, extended_pseudo_gradient, pseudo_gradient
from .network import GraphSchedule, MixingVariant, certify_decay, metropolis_weights, verify_mixing
from .operators import (
    PD_SLACK,
    Preconditioner,
    StackedPoint,
    apply_S,
    apply_T1,
    pfb_map,
    phi_norm,
    require_positive_definite,
)
from .projection import StackedProjector
from .steps import StepPlan
from .trace import RunTrace

logger = logging.getLogger(__name__)

SUITES = ("network", "operators", "tracking", "bounds")
ESTIMATE_SLACK = 1e-8
INVARIANCE_TOL = 1e-10


@dataclass
class CheckResult:
    samples: int = 0
    worst: float = float("inf")
    violations: int = 0

    def add(self, margin: float, tol: float = 0.0) -> None:
        self.samples += 1
        self.worst = min(self.worst, float(margin))
        if margin < -tol:
            self.violations += 1

    def to_dict(self) -> dict[str, Any]:
        return {"samples": self.samples, "worst": self.worst, "violations": self.violations}


@dataclass
class SuiteReport:
    suite: str
    checks: dict[str, CheckResult] = field(default_factory=dict)
    details: dict[str, Any] = field(default_factory=dict)
    failures: list[str] = field(default_factory=list)

    def check(self, name: str) -> CheckResult:
        return self.checks.setdefault(name, CheckResult())

    @property
    def passed(self) -> bool:
        return not self.failures and all(c.violations == 0 for c in self.checks.values())

    def to_dict(self) -> dict[str, Any]:
        return {
            "suite": self.suite,
            "passed": self.passed,
            "checks": {k: v.to_dict() for k, v in self.checks.items()},
            "failures": list(self.failures),
            "details": self.details,
        }


def _finish(report: SuiteReport) -> SuiteReport:
    failed = {name: c.violations for name, c in report.checks.items() if c.violations}
    if report.passed:
        logger.info("%s suite passed (%d checks)", report.suite, len(report.checks))
    else:
        logger.warning("%s suite failed: violations=%s failures=%d", report.suite, failed, len(report.failures))
    return report


def network_suite(
    schedule: GraphSchedule,
    variant: MixingVariant,
    sample_pairs: int = 100,
    seed: int = 0,
) -> SuiteReport:
    """Mixing-matrix checks on every slot plus the sampled decay certificate."""
    report = SuiteReport("network")
    for k in range(schedule.horizon):
        mixing = metropolis_weights(schedule.graph(k), variant)
        result = verify_mixing(mixing.weights, schedule.graph(k), mixing.epsilon)
        report.check("mixing").add(0.0 if result.passed else -1.0)
        if not result.passed and len(report.failures) < 10:
            report.failures.append(f"W({k}): {'; '.join(result.failures)}")
    try:
        certificate = certify_decay(schedule, variant, sample_pairs=sample_pairs, seed=seed)
    except AssumptionViolated as exc:
        report.failures.append(str(exc))
        return _finish(report)
    for k, s, norm in certificate.observed:
        report.check("decay").add(certificate.theta * certificate.rho ** (k - s) - norm)
    report.details["certificate"] = certificate.to_dict()
    return _finish(report)


def _interior_rows(game: GameInstance, rng: np.random.Generator, project: StackedProjector, spread: float) -> np.ndarray:
    lower, upper = project.bounds()
    target = project(rng.uniform(lower, upper))
    anchor = game.rows(game.slater_point)
    return anchor + spread * rng.uniform(0.0, 1.0) * (target - anchor)


def operator_suite(
    game: GameInstance,
    plan: StepPlan,
    game_constants: GameConstants,
    samples: int = 1000,
    seed: int = 0,
) -> SuiteReport:
    """Sampled operator inequalities and the preconditioner eigenvalue check.

    Covers skew-symmetry of S, cocoercivity of F and of T1, the Lipschitz
    bound of the extended pseudo-gradient, strict monotonicity of T1 + S away
    from the consensus subspace, positive definiteness of Phi and the
    averagedness of the forward-backward map in the Phi-norm.
    """
    report = SuiteReport("operators")
    rng = _rng.stream(seed, "operator-suite")
    project = StackedProjector(game.local_sets)
    N, n, m = game.n_agents, game.decision_dim, game.coupling_dim
    chi, delta, lip = game_constants.coco, game_constants.delta, game_constants.lip_epg

    precond = Preconditioner(plan.alpha, plan.beta, game.coupling, plan.tau, plan.delta)
    report.details["preconditioner"] = precond.to_dict()
    try:
        require_positive_definite(precond)
        report.check("phi_eigenvalue").add(precond.min_eigenvalue - plan.tau, PD_SLACK)
    except PDCheckFailed as exc:
        report.check("phi_eigenvalue").add(precond.min_eigenvalue - plan.tau, PD_SLACK)
        report.failures.append(str(exc))
    positive = precond.min_eigenvalue > 0

    def point() -> StackedPoint:
        X = _interior_rows(game, rng, project, 0.9)
        return StackedPoint.from_rows(X, rng.uniform(0.0, 10.0, size=(N, m)))

    for _ in range(samples):
        a, b = point(), point()
        omega = a.vector()
        skew = float(omega @ apply_S(game, a))
        report.check("skew_symmetry").add(-abs(skew), 1e-12 * (1.0 + omega @ omega))

        fx, fy = pseudo_gradient(game, a.primal), pseudo_gradient(game, b.primal)
        dx, dF = a.primal - b.primal, fx - fy
        scale = ESTIMATE_SLACK * (1.0 + abs(dF @ dx))
        report.check("cocoercivity").add(dF @ dx - chi * (dF @ dF), scale)

        t1 = apply_T1(game, a) - apply_T1(game, b)
        dw = a.vector() - b.vector()
        report.check("t1_cocoercivity").add(t1 @ dw - delta * (t1 @ t1), ESTIMATE_SLACK * (1.0 + abs(t1 @ dw)))

        w1 = rng.uniform(-1.0, 1.0, size=(N, n)) * 100.0
        w2 = rng.uniform(-1.0, 1.0, size=(N, n)) * 100.0
        ea = extended_pseudo_gradient(game, a.primal, w1.ravel())
        eb = extended_pseudo_gradient(game, b.primal, w2.ravel())
        gap = np.sqrt(dx @ dx + np.sum((w1 - w2) ** 2))
        report.check("epg_lipschitz").add(lip * gap - np.linalg.norm(ea - eb), ESTIMATE_SLACK * (1.0 + lip * gap))

        # consensual copy of the same primal point
        Xa, La = a.rows(game)
        parallel = StackedPoint.from_rows(Xa, np.broadcast_to(La.mean(axis=0), La.shape))
        t_hat = apply_T1(game, a) + apply_S(game, a) - apply_T1(game, parallel) - apply_S(game, parallel)
        disagreement = float(np.sum((La - La.mean(axis=0)) ** 2))
        report.check("restricted_monotonicity").add(t_hat @ (a.vector() - parallel.vector()) - (1 - 1e-9) * disagreement)

        if positive:
            ra, rb = pfb_map(game, precond, a, project), pfb_map(game, precond, b, project)
            diff = ra.vector() - rb.vector()
            residual = (a.vector() - ra.vector()) - (b.vector() - rb.vector())
            lhs = phi_norm(precond, diff) ** 2
            rhs = phi_norm(precond, dw) ** 2 - (1.0 - precond.nu) / precond.nu * phi_norm(precond, residual) ** 2
            report.check("averagedness").add(rhs - lhs, ESTIMATE_SLACK * (1.0 + phi_norm(precond, dw) ** 2))
    return _finish(report)


def _invariance_scale(trace: RunTrace) -> float:
    meta = trace.meta
    dual = float(np.nanmax(trace.column("dual_norm"), initial=0.0))
    return 1.0 + max(dual, meta.get("x0_norm", 0.0), meta.get("y0_norm", 0.0), meta.get("lam0_norm", 0.0))


def tracking_suite(trace: RunTrace, tol: float = INVARIANCE_TOL) -> SuiteReport:
    """Mean of every tracked estimate against its target at every iteration."""
    report = SuiteReport("tracking")
    scale = _invariance_scale(trace)
    for name in ("inv_sigma", "inv_y", "inv_z"):
        values = trace.column(name)
        check = report.check(name)
        for value in values:
            check.add(-value, tol * scale)
        report.details[f"max_{name}"] = float(np.nanmax(values, initial=0.0))
    report.details["scale"] = scale
    return _finish(report)


def bounds_suite(
    game: GameInstance,
    plan: StepPlan,
    game_constants: GameConstants,
    trace: RunTrace,
    schedule: GraphSchedule,
    variant: MixingVariant,
    seed: int = 0,
) -> SuiteReport:
    """Error bound, tracking bounds and summability evidence for one tracking run."""
    report = SuiteReport("bounds")
    errors = error_bound_check(trace, plan, game_constants)
    report.check("error_bound").samples = len(trace.records)
    report.check("error_bound").violations = len(errors.violations)
    report.details["error_bound"] = errors.to_dict()
    try:
        certificate = certify_decay(schedule, variant, seed=seed)
    except AssumptionViolated as exc:
        report.failures.append(f"tracking bounds not guaranteed: {exc}")
    else:
        inputs = bound_inputs(game, plan, trace, certificate, game_constants)
        tracking = tracking_bound_check(trace, inputs)
        report.check("tracking_bound").samples = 3 * len(trace.records)
        report.check("tracking_bound").violations = len(tracking.violations)
        report.details["tracking_bound"] = tracking.to_dict()
    report.details["summability"] = summability_report(trace).to_dict()
    return _finish(report)


__all__ = [
    "SUITES",
    "CheckResult",
    "SuiteReport",
    "bounds_suite",
    "network_suite",
    "operator_suite",
    "tracking_suite",
]
