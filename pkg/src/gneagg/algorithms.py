"""The three v-GNE solvers.

* :func:`run_algorithm1` keeps a single multiplier held by a central
  coordinator and lets every agent read the true aggregate.
* :func:`run_algorithm2` gives each agent its own multiplier copy and
  exact network averages (full-decision information), relaxed with
  Krasnosel'skii–Mann steps.
* :func:`run_algorithm3` replaces every average with a dynamically tracked
  local estimate exchanged over a time-varying graph.

All three record one :class:`~gneagg.trace.TraceRecord` per visited iterate.
Record k describes omega^k; the stopping test runs before the update, so a run
started at a solution stores one record and applies no update.
"""

from __future__ import annotations

import logging
from collections.abc import Callable

import numpy as np

from .diagnostics import exact_averages, shadow_error, tracking_errors, tracking_invariance
from .errors import DimensionMismatch, InvalidParams, NonFiniteIterate
from .game import GameInstance, epg_rows
from .network import GraphSchedule, MixingSequence, MixingVariant
from .operators import (
    Projector,
    consensus_disagreement,
    kkt_residual,
    pfb_rows,
    phi_norm,
    project_dual,
    reflected_violation,
)
from .projection import StackedProjector
from .steps import StepPlan, km_step, require_diminishing
from .trace import IterateState, RunTrace, TraceRecord, TrackingStep

logger = logging.getLogger(__name__)

__all__ = [
    "IterateState",
    "RunTrace",
    "StepPlan",
    "km_step",
    "run_algorithm1",
    "run_algorithm2",
    "run_algorithm3",
]

FEASIBILITY_TOL = 1e-9
TRACKING_ORDERS = ("cta", "atc")

StepObserver = Callable[[IterateState, TrackingStep], None]


def _check_finite(k: int, **arrays: np.ndarray) -> None:
    for name, value in arrays.items():
        if not np.all(np.isfinite(value)):
            raise NonFiniteIterate(f"{name} became non-finite at iteration {k}; check the step sizes", k=k)


def _initial_state(
    game: GameInstance,
    init: IterateState | None,
    project: Projector,
    shared_dual: bool,
) -> IterateState:
    """Validates ``init`` or builds the default start (projection of 0, zero multipliers)."""
    N, n, m = game.n_agents, game.decision_dim, game.coupling_dim
    dual_shape = (m,) if shared_dual else (N, m)
    if init is None:
        return IterateState(x=project(np.zeros((N, n))), lam=np.zeros(dual_shape))
    X = game.rows(init.x)
    lam = np.asarray(init.lam, dtype=float)
    if lam.shape != dual_shape:
        if not shared_dual and lam.size == N * m:
            lam = lam.reshape(N, m)
        else:
            raise DimensionMismatch(f"initial multiplier must have shape {dual_shape}, got {lam.shape}")
    for i, local_set in enumerate(game.local_sets):
        if not local_set.contains(X[i], tol=FEASIBILITY_TOL):
            raise InvalidParams(f"initial decision of agent {i} lies outside its local set")
    if np.any(lam < 0):
        raise InvalidParams("initial multipliers must be nonnegative")
    state = init.copy()
    state.x, state.lam = X.copy(), lam.copy()
    return state


def _normalized(X: np.ndarray, reference: np.ndarray | None, scale: float) -> float:
    if reference is None:
        return float("nan")
    gap = float(np.linalg.norm(X.ravel() - reference))
    return gap / scale if scale > 0 else gap


def _reference_scale(X0: np.ndarray, reference_x: np.ndarray | None) -> tuple[np.ndarray | None, float]:
    if reference_x is None:
        return None, 1.0
    reference = np.asarray(reference_x, dtype=float).ravel()
    if reference.size != X0.size:
        raise DimensionMismatch(f"reference_x must have length {X0.size}")
    return reference, float(np.linalg.norm(X0.ravel() - reference))


def _snapshot(trace: RunTrace, k: int, X: np.ndarray, lam: np.ndarray, every: int) -> None:
    if k == 0 or (every > 0 and k % every == 0):
        trace.snapshots[k] = (X.ravel().copy(), lam.copy())


def _finish(trace: RunTrace, state: IterateState, status: str, started: str) -> RunTrace:
    trace.status = status
    trace.final = state
    trace.snapshots.setdefault(state.k, (state.x.ravel().copy(), state.lam.copy()))
    last = trace.records[-1] if trace.records else None
    logger.info(
        "%s finished: status=%s iterations=%d kkt=%.3e",
        started,
        status,
        trace.iterations,
        float("nan") if last is None else last.kkt_residual,
    )
    return trace


def run_algorithm1(
    game: GameInstance,
    plan: StepPlan,
    init: IterateState | None = None,
    max_iter: int = 10_000,
    kkt_tol: float = 1e-8,
    *,
    dual_cap: float | None = None,
    reference_x: np.ndarray | None = None,
    snapshot_every: int = 100,
    log_every: int = 1000,
    projector: Projector | None = None,
) -> RunTrace:
    """Semi-decentralized projected pseudo-gradient iteration.

    Each agent takes a projected step on F_i(x_i, x̄) + C_i' lambda; the
    coordinator then moves the shared multiplier along the reflected coupling
    violation sum_i C_i (2 x_i^+ - x_i) - c_i with step ``plan.central_beta``.

    Args:
        game: The game.
        plan: Step sizes; only alpha and central_beta are used.
        init: Start point with a shared multiplier of length m.
        max_iter: Update budget.
        kkt_tol: Stop once the KKT residual at the current iterate reaches it.
        dual_cap: Optional upper bound on every multiplier entry.
        reference_x: Solution used for the normalized residual column.
        snapshot_every: Keep (x, lambda) every this many iterations.
        log_every: DEBUG progress interval.
        projector: Projection onto the product of local sets.

    Returns:
        The run trace.

    Raises:
        NonFiniteIterate: If an update overflows.
    """
    project = projector or StackedProjector(game.local_sets)
    state = _initial_state(game, init, project, shared_dual=True)
    X, lam = state.x, state.lam
    reference, scale = _reference_scale(X, reference_x)
    alpha = plan.alpha[:, None]
    trace = RunTrace("1", meta={"kkt_tol": kkt_tol, "max_iter": max_iter, "dual_cap": dual_cap})
    label = "algorithm 1"
    logger.info(
        "%s: N=%d n=%d m=%d max_iter=%d", label, game.n_agents, game.decision_dim, game.coupling_dim, max_iter
    )

    k = 0
    status = "max_iter"
    while True:
        residual = kkt_residual(game, X.ravel(), lam, project)
        record = TraceRecord(
            k=k,
            kkt_residual=residual,
            norm_residual=_normalized(X, reference, scale),
            consensus_dual=0.0,
            dual_norm=float(np.linalg.norm(lam)),
        )
        trace.records.append(record)
        _snapshot(trace, k, X, lam, snapshot_every)
        if residual <= kkt_tol:
            status = "converged"
            break
        if k >= max_iter:
            break
        gradient = epg_rows(game, X, np.broadcast_to(X.mean(axis=0), X.shape))
        gradient = gradient + np.einsum("imn,m->in", game.coupling, lam)
        X_next = project(X - alpha * gradient)
        lam_next = project_dual(lam + plan.central_beta * reflected_violation(game, X_next, X).sum(axis=0), dual_cap)
        _check_finite(k, x=X_next, lam=lam_next)
        record.step_x = float(np.linalg.norm(X_next - X))
        record.step_lam = float(np.linalg.norm(lam_next - lam))
        X, lam = X_next, lam_next
        k += 1
        if log_every and k % log_every == 0:
            logger.debug("%s k=%d kkt=%.3e", label, k, residual)

    return _finish(trace, IterateState(x=X, lam=lam, k=k), status, label)


def run_algorithm2(
    game: GameInstance,
    plan: StepPlan,
    init: IterateState | None = None,
    max_iter: int = 10_000,
    fix_tol: float = 1e-9,
    *,
    dual_cap: float | None = None,
    reference_x: np.ndarray | None = None,
    snapshot_every: int = 100,
    log_every: int = 1000,
    projector: Projector | None = None,
) -> RunTrace:
    """Distributed iteration with exact averages, relaxed by gamma^k.

    Equivalent to omega^{k+1} = omega^k + gamma^k (R(omega^k) - omega^k), where
    R is the preconditioned forward-backward map. The run stops when
    ||R(omega) - omega||_Phi <= ``fix_tol``.

    Raises:
        PDCheckFailed: If the plan's preconditioner is not positive definite.
        NonFiniteIterate: If an update overflows.
    """
    project = projector or StackedProjector(game.local_sets)
    precond = plan.preconditioner(game, check=True)
    state = _initial_state(game, init, project, shared_dual=False)
    X, L = state.x, state.lam
    reference, scale = _reference_scale(X, reference_x)
    trace = RunTrace(
        "2",
        meta={"fix_tol": fix_tol, "max_iter": max_iter, "dual_cap": dual_cap, "nu": precond.nu, "gamma": plan.gamma.label()},
    )
    label = "algorithm 2"
    logger.info(
        "%s: N=%d n=%d m=%d max_iter=%d gamma=%s",
        label,
        game.n_agents,
        game.decision_dim,
        game.coupling_dim,
        max_iter,
        plan.gamma.label(),
    )

    k = 0
    status = "max_iter"
    while True:
        Xt, Lt = pfb_rows(game, plan.alpha, plan.beta, X, L, project, dual_cap)
        fixed_point = phi_norm(precond, np.concatenate([(Xt - X).ravel(), (Lt - L).ravel()]))
        gamma = plan.gamma_at(k)
        record = TraceRecord(
            k=k,
            kkt_residual=kkt_residual(game, X.ravel(), L.mean(axis=0), project),
            norm_residual=_normalized(X, reference, scale),
            consensus_dual=consensus_disagreement(L),
            gamma=gamma,
            fixed_point_residual=fixed_point,
            step_x=float(np.linalg.norm(Xt - X)),
            step_lam=float(np.linalg.norm(Lt - L)),
            dual_norm=float(np.linalg.norm(L)),
        )
        trace.records.append(record)
        _snapshot(trace, k, X, L, snapshot_every)
        if fixed_point <= fix_tol:
            status = "converged"
            break
        if k >= max_iter:
            break
        X_next, L_next = km_step(X, Xt, gamma), km_step(L, Lt, gamma)
        _check_finite(k, x=X_next, lam=L_next)
        X, L = X_next, L_next
        k += 1
        if log_every and k % log_every == 0:
            logger.debug("%s k=%d fixed-point residual=%.3e", label, k, fixed_point)

    return _finish(trace, IterateState(x=X, lam=L, k=k), status, label)


def _tracking_start(game: GameInstance, state: IterateState) -> IterateState:
    """Fills the tracking variables: sigma = x, z = lambda, lagged iterates = x, y = C x - c."""
    X = state.x
    if state.sigma is None:
        state.sigma = X.copy()
    if state.z is None:
        state.z = state.lam.copy()
    if state.x_prev is None:
        state.x_prev = X.copy()
    if state.x_tilde_prev is None:
        state.x_tilde_prev = state.x_prev.copy()
    if state.y is None:
        state.y = reflected_violation(game, state.x_tilde_prev, state.x_prev)
    shapes = {
        "sigma": (state.sigma, X.shape),
        "x_prev": (state.x_prev, X.shape),
        "x_tilde_prev": (state.x_tilde_prev, X.shape),
        "y": (state.y, state.lam.shape),
        "z": (state.z, state.lam.shape),
    }
    for name, (value, shape) in shapes.items():
        if np.shape(value) != shape:
            raise DimensionMismatch(f"initial {name} must have shape {shape}")
    return state


def run_algorithm3(
    game: GameInstance,
    plan: StepPlan,
    schedule: GraphSchedule | None,
    mixing_variant: MixingVariant = MixingVariant.SAFE_DIAGONAL,
    init: IterateState | None = None,
    max_iter: int = 20_000,
    dual_cap: float | None = None,
    *,
    y_tracking: str = "cta",
    weights: Callable[[int], np.ndarray] | None = None,
    unsafe_gamma: bool = False,
    kkt_tol: float | None = None,
    reference_x: np.ndarray | None = None,
    snapshot_every: int = 100,
    log_every: int = 1000,
    projector: Projector | None = None,
    observer: StepObserver | None = None,
) -> RunTrace:
    """Distributed iteration with partial-decision information.

    Every agent keeps estimates sigma_i of x̄, y_i of the reflected coupling
    violation d̄ and z_i of the average multiplier λ̄, and mixes them with
    its neighbours through W(k) before each local step.

    Args:
        game: The game.
        plan: Step sizes and a diminishing relaxation schedule.
        schedule: Graph schedule providing W(k); may be None when
            ``weights`` is given.
        mixing_variant: Metropolis rule used on the schedule.
        init: Start point; missing tracking fields get the default
            initialization sigma = x, z = lambda, y = C x - c.
        max_iter: Update budget.
        dual_cap: Optional upper bound on every multiplier entry.
        y_tracking: ``"cta"`` adds the local innovation after mixing;
            ``"atc"`` mixes after adding it.
        weights: Override mapping k to W(k), e.g. for falsification runs.
        unsafe_gamma: Admit non-diminishing schedules such as a constant 1.
        kkt_tol: Optional stop once the KKT residual at (x, λ̄) reaches it.
        reference_x: Solution used for the normalized residual column.
        snapshot_every: Keep (x, lambda) every this many iterations.
        log_every: DEBUG progress interval.
        projector: Projection onto the product of local sets.
        observer: Called with the state and the step quantities of every
            iteration, before the update is applied.

    Returns:
        The run trace, including tracking errors, the shadow error against
        the exact-average step and its relaxed partial sums.

    Raises:
        InvalidGamma: If the schedule is not diminishing and ``unsafe_gamma``
            is off.
        ScheduleExhausted: If the run outlives a non-cycling schedule.
        NonFiniteIterate: If an update overflows.
    """
    if y_tracking not in TRACKING_ORDERS:
        raise InvalidParams(f"y_tracking must be one of {TRACKING_ORDERS}, got {y_tracking!r}")
    if schedule is None and weights is None:
        raise InvalidParams("a graph schedule or a weights callable is required")
    if schedule is not None and schedule.n_nodes != game.n_agents:
        raise DimensionMismatch(f"schedule has {schedule.n_nodes} nodes for {game.n_agents} agents")
    require_diminishing(plan.gamma, unsafe_gamma)
    mix = weights or MixingSequence(schedule, mixing_variant)
    project = projector or StackedProjector(game.local_sets)
    state = _tracking_start(game, _initial_state(game, init, project, shared_dual=False))
    reference, scale = _reference_scale(state.x, reference_x)
    alpha, beta = plan.alpha[:, None], plan.beta[:, None]
    trace = RunTrace(
        "3",
        meta={
            "max_iter": max_iter,
            "dual_cap": dual_cap,
            "kkt_tol": kkt_tol,
            "gamma": plan.gamma.label(),
            "y_tracking": y_tracking,
            "mixing_variant": MixingVariant(mixing_variant).value,
            "x0_norm": float(np.linalg.norm(state.x)),
            "lam0_norm": float(np.linalg.norm(state.lam)),
            "y0_norm": float(np.linalg.norm(state.y)),
        },
    )
    label = "algorithm 3"
    logger.info(
        "%s: N=%d n=%d m=%d max_iter=%d gamma=%s tracking=%s",
        label,
        game.n_agents,
        game.decision_dim,
        game.coupling_dim,
        max_iter,
        plan.gamma.label(),
        y_tracking,
    )

    partial_sum = 0.0
    status = "max_iter"
    while True:
        k = state.k
        X, L = state.x, state.lam
        W = np.asarray(mix(k), dtype=float)
        sigma_hat, y_hat, z_hat = W @ state.sigma, W @ state.y, W @ state.z

        gradient = epg_rows(game, X, sigma_hat) + np.einsum("imn,im->in", game.coupling, z_hat)
        Xt = project(X - alpha * gradient)
        innovation = reflected_violation(game, Xt, X) - reflected_violation(game, state.x_tilde_prev, state.x_prev)
        y_next = y_hat + innovation if y_tracking == "cta" else W @ (state.y + innovation)
        Lt = project_dual(L + beta * (y_next - L + z_hat), dual_cap)

        step = TrackingStep(k, X, L, sigma_hat, y_hat, z_hat, Xt, y_next, Lt, dual_cap)
        exact = exact_averages(game, step)
        errors = tracking_errors(step, exact)
        invariance = tracking_invariance(game, state)
        err = shadow_error(game, plan, step, exact, project)
        gamma = plan.gamma_at(k)
        lam_bar = exact.lam_bar
        record = TraceRecord(
            k=k,
            kkt_residual=kkt_residual(game, X.ravel(), lam_bar, project),
            norm_residual=_normalized(X, reference, scale),
            consensus_dual=consensus_disagreement(L),
            track_sigma=errors.sigma_err,
            track_y=errors.y_err,
            track_z=errors.z_err,
            err_norm=err,
            gamma=gamma,
            partial_sum_gamma_err=partial_sum,
            inv_sigma=invariance[0],
            inv_y=invariance[1],
            inv_z=invariance[2],
            step_x=float(np.linalg.norm(Xt - X)),
            step_lam=float(np.linalg.norm(Lt - L)),
            dual_norm=float(np.linalg.norm(L)),
        )
        partial_sum += gamma * err
        record.partial_sum_gamma_err = partial_sum
        trace.records.append(record)
        _snapshot(trace, k, X, L, snapshot_every)
        if observer is not None:
            observer(state, step)
        if kkt_tol is not None and record.kkt_residual <= kkt_tol:
            status = "converged"
            break
        if k >= max_iter:
            break

        X_next, L_next = km_step(X, Xt, gamma), km_step(L, Lt, gamma)
        _check_finite(k, x=X_next, lam=L_next, y=y_next)
        state = IterateState(
            x=X_next,
            lam=L_next,
            k=k + 1,
            sigma=sigma_hat + X_next - X,
            y=y_next,
            z=z_hat + L_next - L,
            x_prev=X,
            x_tilde_prev=Xt,
        )
        if log_every and state.k % log_every == 0:
            logger.debug(
                "%s k=%d kkt=%.3e tracking=(%.2e, %.2e, %.2e)",
                label,
                state.k,
                record.kkt_residual,
                errors.sigma_err,
                errors.y_err,
                errors.z_err,
            )

    return _finish(trace, state, status, label)
