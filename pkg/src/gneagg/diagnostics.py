"""Runtime checks of the partial-information convergence argument.

The partial-information iteration is a Krasnosel'skii–Mann iteration of the
forward-backward map R with an additive error e^k, the gap between its local
step and the step the same agents would take with exact averages. This module
measures the tracking errors that drive e^k, evaluates the explicit bounds on
them, and reports whether the relaxed errors look summable.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.signal import lfilter

from .errors import MissingReference
from .game import GameConstants, GameInstance, epg_rows
from .network import DecayCertificate
from .operators import Projector, project_dual, reflected_violation
from .projection import StackedProjector
from .steps import StepPlan
from .trace import IterateState, RunTrace, TrackingStep

logger = logging.getLogger(__name__)

BOUND_SLACK = 1e-9
CAUCHY_FRACTION = 0.01


@dataclass(frozen=True)
class TrackingErrors:
    """Distances of the mixed estimates from the quantities they track."""

    sigma_err: float
    y_err: float
    z_err: float

    @property
    def total(self) -> float:
        return float(np.sqrt(self.sigma_err**2 + self.y_err**2 + self.z_err**2))


@dataclass(frozen=True, eq=False)
class ExactAverages:
    """x̄^k, λ̄^k and the reflected-violation average d̄^k of one iteration."""

    x_bar: np.ndarray
    lam_bar: np.ndarray
    d_bar: np.ndarray


def exact_averages(game: GameInstance, step: TrackingStep) -> ExactAverages:
    return ExactAverages(
        x_bar=step.x.mean(axis=0),
        lam_bar=step.lam.mean(axis=0),
        d_bar=reflected_violation(game, step.x_tilde, step.x).mean(axis=0),
    )


def tracking_errors(step: TrackingStep, exact: ExactAverages) -> TrackingErrors:
    return TrackingErrors(
        sigma_err=float(np.linalg.norm(step.sigma_hat - exact.x_bar)),
        y_err=float(np.linalg.norm(step.y_next - exact.d_bar)),
        z_err=float(np.linalg.norm(step.z_hat - exact.lam_bar)),
    )


def tracking_invariance(game: GameInstance, state: IterateState) -> tuple[float, float, float]:
    """Norms of mean(sigma) - x̄, mean(y) - d̄^{k-1} and mean(z) - λ̄.

    d̄^{k-1} is built from the lagged iterates, matching what y^k tracks. With
    column-stochastic mixing all three stay at rounding level.
    """
    previous = reflected_violation(game, state.x_tilde_prev, state.x_prev).mean(axis=0)
    return (
        float(np.linalg.norm(state.sigma.mean(axis=0) - state.x.mean(axis=0))),
        float(np.linalg.norm(state.y.mean(axis=0) - previous)),
        float(np.linalg.norm(state.z.mean(axis=0) - state.lam.mean(axis=0))),
    )


def shadow_error(
    game: GameInstance,
    plan: StepPlan,
    step: TrackingStep,
    exact: ExactAverages | None = None,
    projector: Projector | None = None,
) -> float:
    """||e^k||: the local step against the exact-average step from the same (x, λ).

    The exact step uses x̄^k, λ̄^k and the d̄^k built from the local x̃^k, the
    same quantity y^{k+1} tracks.
    """
    exact = exact or exact_averages(game, step)
    project = projector or StackedProjector(game.local_sets)
    X, L = step.x, step.lam
    gradient = epg_rows(game, X, np.broadcast_to(exact.x_bar, X.shape))
    gradient = gradient + np.einsum("imn,m->in", game.coupling, exact.lam_bar)
    Xa = project(X - plan.alpha[:, None] * gradient)
    La = project_dual(L + plan.beta[:, None] * (exact.d_bar - L + exact.lam_bar), step.dual_cap)
    return float(np.sqrt(np.sum((step.x_tilde - Xa) ** 2) + np.sum((step.lam_tilde - La) ** 2)))


def error_bound(plan: StepPlan, game_constants: GameConstants, errors: TrackingErrors) -> float:
    """L_F ||α|| σ_err + ||β|| y_err + (||α|| ||C|| + ||β||) z_err with max-norms of the steps."""
    a = float(np.max(plan.alpha))
    b = float(np.max(plan.beta))
    c = float(max(game_constants.coupling_norms))
    return game_constants.lip_epg * a * errors.sigma_err + b * errors.y_err + (a * c + b) * errors.z_err


@dataclass
class BoundReport:
    """Measured series against their bounds; ``violations`` lists (series, k, measured, bound)."""

    name: str
    measured: dict[str, np.ndarray]
    bounds: dict[str, np.ndarray]
    violations: list[tuple[str, int, float, float]] = field(default_factory=list)
    empirical: bool = False
    constants: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return not self.violations

    def to_dict(self, series: bool = False) -> dict[str, Any]:
        doc: dict[str, Any] = {
            "name": self.name,
            "passed": self.passed,
            "empirical": self.empirical,
            "constants": dict(self.constants),
            "violation_count": len(self.violations),
            "violations": [list(v) for v in self.violations[:100]],
        }
        if series:
            doc["measured"] = {k: v.tolist() for k, v in self.measured.items()}
            doc["bounds"] = {k: v.tolist() for k, v in self.bounds.items()}
        return doc


def _violations(name: str, measured: np.ndarray, bound: np.ndarray, slack: float) -> list[tuple[str, int, float, float]]:
    bad = np.flatnonzero(measured > bound + slack)
    return [(name, int(k), float(measured[k]), float(bound[k])) for k in bad]


def error_bound_check(
    trace: RunTrace,
    plan: StepPlan,
    game_constants: GameConstants,
    slack: float = BOUND_SLACK,
) -> BoundReport:
    """Checks ||e^k|| against :func:`error_bound` at every recorded k."""
    errors = [TrackingErrors(r.track_sigma, r.track_y, r.track_z) for r in trace.records]
    bound = np.array([error_bound(plan, game_constants, e) for e in errors])
    measured = trace.column("err_norm")
    report = BoundReport("error_bound", {"err_norm": measured}, {"err_norm": bound})
    report.violations = _violations("err_norm", measured, bound, slack)
    return report


@dataclass(frozen=True, eq=False)
class BoundInputs:
    """Constants of the tracking bounds.

    Attributes:
        theta: Decay prefactor of the transition matrices.
        rho: Decay rate of the transition matrices.
        B_Omega: Bound on stacked primal points and on ||x̃ - x||.
        B_D: Bound on stacked multipliers and on ||λ̃ - λ||.
        B_Y: ||y^0||.
        delta1: Geometric coefficient of phi^k.
        delta2: Relaxation-driven coefficient of phi^k.
        gamma: gamma^k for k = 0..K.
        alpha_norm: max_i alpha_i.
        c_norm: max_i ||C_i||.
        lip_epg: Lipschitz constant of the extended pseudo-gradient.
        empirical: True when B_D was read off the trajectory instead of a cap.
    """

    theta: float
    rho: float
    B_Omega: float
    B_D: float
    B_Y: float
    delta1: float
    delta2: float
    gamma: np.ndarray
    alpha_norm: float = 0.0
    c_norm: float = 0.0
    lip_epg: float = 0.0
    empirical: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {
            "theta": self.theta,
            "rho": self.rho,
            "B_Omega": self.B_Omega,
            "B_D": self.B_D,
            "B_Y": self.B_Y,
            "delta1": self.delta1,
            "delta2": self.delta2,
            "alpha_norm": self.alpha_norm,
            "c_norm": self.c_norm,
            "lip_epg": self.lip_epg,
            "empirical": self.empirical,
        }


def phi_coefficients(
    theta: float,
    rho: float,
    alpha_norm: float,
    lip_epg: float,
    c_norm: float,
    B_Omega: float,
    B_D: float,
) -> tuple[float, float]:
    """(delta1, delta2) bounding ||(2x̃^k - x^k) - (2x̃^{k-1} - x^{k-1})|| by phi^k."""
    coupled = alpha_norm * (lip_epg * B_Omega + c_norm * B_D)
    eps1 = 2.0 * theta * coupled
    eps2 = 2.0 * theta * coupled / rho
    eps3 = B_Omega * (1.0 + 2.0 * alpha_norm * lip_epg) + alpha_norm * c_norm * B_D
    return 2.0 * eps1, 2.0 * eps2 + 2.0 * eps3 + B_Omega


def bound_inputs(
    game: GameInstance,
    plan: StepPlan,
    trace: RunTrace,
    certificate: DecayCertificate,
    game_constants: GameConstants,
) -> BoundInputs:
    """Assembles the bound constants for a partial-information trace.

    B_Omega is the largest of the stacked norm bound of the local sets, their
    diameter and the largest recorded ||x̃ - x||. With a dual cap B_D is
    cap * sqrt(mN); otherwise it is the largest recorded multiplier norm or
    dual step and the inputs are flagged empirical.
    """
    lower, upper = StackedProjector(game.local_sets).bounds()
    sup = float(np.linalg.norm(np.maximum(np.abs(lower), np.abs(upper))))
    diameter = float(np.linalg.norm(upper - lower))
    B_Omega = max(sup, diameter, float(np.nanmax(trace.column("step_x"), initial=0.0)))
    cap = trace.meta.get("dual_cap")
    if cap is not None:
        B_D = float(cap) * np.sqrt(game.n_agents * game.coupling_dim)
        empirical = False
    else:
        B_D = max(
            float(np.nanmax(trace.column("dual_norm"), initial=0.0)),
            float(np.nanmax(trace.column("step_lam"), initial=0.0)),
        )
        empirical = True
    a = float(np.max(plan.alpha))
    c = float(max(game_constants.coupling_norms))
    delta1, delta2 = phi_coefficients(
        certificate.theta, certificate.rho, a, game_constants.lip_epg, c, B_Omega, B_D
    )
    return BoundInputs(
        theta=certificate.theta,
        rho=certificate.rho,
        B_Omega=B_Omega,
        B_D=B_D,
        B_Y=float(trace.meta.get("y0_norm", 0.0)),
        delta1=delta1,
        delta2=delta2,
        gamma=trace.column("gamma"),
        alpha_norm=a,
        c_norm=c,
        lip_epg=game_constants.lip_epg,
        empirical=empirical,
    )


def _geometric_sum(rho: float, values: np.ndarray) -> np.ndarray:
    """out[k] = sum_{s=1..k} rho^(k-s) values[s-1], with out[0] = 0."""
    shifted = np.concatenate([[0.0], np.asarray(values, dtype=float)[:-1]]) if len(values) else np.zeros(0)
    return lfilter([1.0], [1.0, -rho], shifted)


def phi_sequence(inputs: BoundInputs, k_max: int) -> np.ndarray:
    """phi^k = delta1 rho^(k-1) + delta2 sum_{l=1..k} rho^(k-l) gamma^(l-1) for k = 0..k_max.

    Entry 0 follows the same formula with an empty sum, i.e. delta1 / rho.
    ``inputs.gamma`` is extended with its last value when shorter than k_max.
    """
    gamma = np.asarray(inputs.gamma, dtype=float)
    if gamma.size < k_max + 1:
        fill = gamma[-1] if gamma.size else 0.0
        gamma = np.concatenate([gamma, np.full(k_max + 1 - gamma.size, fill)])
    k = np.arange(k_max + 1, dtype=float)
    return inputs.delta1 * inputs.rho ** (k - 1.0) + inputs.delta2 * _geometric_sum(inputs.rho, gamma[: k_max + 1])


def tracking_bound_check(trace: RunTrace, inputs: BoundInputs, slack: float = BOUND_SLACK) -> BoundReport:
    """Checks every tracking error against its explicit bound.

    sigma_err^k <= theta B_Omega (rho^k + G_k) and z_err^k <= theta B_D (rho^k + G_k)
    with G_k = sum_{s=1..k} rho^(k-s) gamma^(s-1). The y-estimate obeys
    y_err^k <= theta B_Y rho^k + theta ||C|| H_k + f ||C|| phi^k with
    H_k = sum_{s=1..k} rho^(k-s) phi^(s-1), f = 1 for combine-then-adapt
    tracking and theta for adapt-then-combine. The first innovation comes from
    the lagged initialization and is bounded by 3 B_Omega rather than phi^0.
    """
    count = len(trace.records)
    k = np.arange(count, dtype=float)
    decay = inputs.rho**k
    gamma = np.asarray(inputs.gamma, dtype=float)[:count]
    G = _geometric_sum(inputs.rho, gamma)
    phi = phi_sequence(inputs, max(count - 1, 0))
    phi[0] = max(phi[0], 3.0 * inputs.B_Omega)
    H = _geometric_sum(inputs.rho, phi)
    last = inputs.theta if trace.meta.get("y_tracking") == "atc" else 1.0

    bounds = {
        "track_sigma": inputs.theta * inputs.B_Omega * (decay + G),
        "track_z": inputs.theta * inputs.B_D * (decay + G),
        "track_y": inputs.theta * inputs.B_Y * decay + inputs.c_norm * (inputs.theta * H + last * phi),
    }
    measured = {name: trace.column(name) for name in bounds}
    report = BoundReport("tracking_bound", measured, bounds, empirical=inputs.empirical, constants=inputs.to_dict())
    for name in bounds:
        report.violations.extend(_violations(name, measured[name], bounds[name], slack))
    if report.violations:
        logger.warning("tracking bounds violated at %d points", len(report.violations))
    return report


@dataclass
class SummabilityReport:
    """Partial sums of the relaxed errors and of the relaxation conditions.

    Attributes:
        partial_sums: S_K = sum_{k<=K} gamma^k ||e^k||.
        cauchy_flag: True when the last quarter of the run added less than
            1% of S_K.
        last_quarter_increment: S_K - S_{3K/4}.
        relaxation_sums: sum_{k<=K} gamma^k (1 - gamma^k).
        relaxation_increasing: Whether those sums grow strictly from k = 1 on.
        km_sums: sum_{k<=K} gamma^k (1 - nu gamma^k) when nu is given.
    """

    partial_sums: np.ndarray
    cauchy_flag: bool
    last_quarter_increment: float
    relaxation_sums: np.ndarray
    relaxation_increasing: bool
    km_sums: np.ndarray | None = None

    def to_dict(self, series: bool = False) -> dict[str, Any]:
        doc: dict[str, Any] = {
            "total": float(self.partial_sums[-1]) if self.partial_sums.size else 0.0,
            "cauchy_flag": self.cauchy_flag,
            "last_quarter_increment": self.last_quarter_increment,
            "relaxation_total": float(self.relaxation_sums[-1]) if self.relaxation_sums.size else 0.0,
            "relaxation_increasing": self.relaxation_increasing,
        }
        if self.km_sums is not None and self.km_sums.size:
            doc["km_total"] = float(self.km_sums[-1])
        if series:
            doc["partial_sums"] = self.partial_sums.tolist()
            doc["relaxation_sums"] = self.relaxation_sums.tolist()
            if self.km_sums is not None:
                doc["km_sums"] = self.km_sums.tolist()
        return doc


def summability_report(trace: RunTrace, nu: float | None = None) -> SummabilityReport:
    gamma = np.nan_to_num(trace.column("gamma"))
    errors = np.nan_to_num(trace.column("err_norm"))
    partial = np.cumsum(gamma * errors)
    relaxation = np.cumsum(gamma * (1.0 - gamma))
    if partial.size:
        total = float(partial[-1])
        quarter = float(partial[(3 * (partial.size - 1)) // 4])
        increment = total - quarter
        cauchy = total == 0.0 or increment < CAUCHY_FRACTION * total
    else:
        increment, cauchy = 0.0, True
    increasing = bool(np.all(np.diff(relaxation[1:]) > 0)) if relaxation.size > 2 else True
    km = np.cumsum(gamma * (1.0 - nu * gamma)) if nu is not None else None
    return SummabilityReport(partial, bool(cauchy), increment, relaxation, increasing, km)


@dataclass
class ConvergenceSeries:
    """Plot-ready series of one run.

    ``norm_k`` and ``norm_residual`` are aligned with each other; the other
    series are aligned with ``k``.
    """

    k: np.ndarray
    consensus_dual: np.ndarray
    track_sigma: np.ndarray
    track_y: np.ndarray
    track_z: np.ndarray
    tracking_total: np.ndarray
    norm_k: np.ndarray
    norm_residual: np.ndarray


def convergence_metrics(trace: RunTrace, reference_x: np.ndarray | None = None) -> ConvergenceSeries:
    """Normalized residual ||x^k - x*|| / ||x^0 - x*||, dual disagreement and tracking errors.

    With ``reference_x`` the normalized residual is evaluated on the stored
    snapshots; without it the per-record values the solver computed are used.

    Raises:
        MissingReference: If neither a reference nor recorded residuals exist.
    """
    k = trace.column("k")
    if reference_x is not None:
        reference = np.asarray(reference_x, dtype=float).ravel()
        ks = sorted(trace.snapshots)
        gaps = np.array([np.linalg.norm(trace.snapshots[s][0] - reference) for s in ks])
        scale = gaps[0] if gaps.size and gaps[0] > 0 else 1.0
        norm_k, norm_residual = np.asarray(ks, dtype=float), gaps / scale
    else:
        norm_residual = trace.column("norm_residual")
        if not norm_residual.size or np.all(np.isnan(norm_residual)):
            raise MissingReference("normalized residuals need a reference solution")
        norm_k = k
    sigma, y, z = trace.column("track_sigma"), trace.column("track_y"), trace.column("track_z")
    return ConvergenceSeries(
        k=k,
        consensus_dual=trace.column("consensus_dual"),
        track_sigma=sigma,
        track_y=y,
        track_z=z,
        tracking_total=np.sqrt(sigma**2 + y**2 + z**2),
        norm_k=norm_k,
        norm_residual=norm_residual,
    )
