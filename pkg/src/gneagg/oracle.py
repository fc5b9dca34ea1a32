"""Reference v-GNE solutions, dual bounds and equilibrium spot checks."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.linalg import block_diag
from scipy.optimize import linprog

from . import _rng
from .algorithms import run_algorithm1
from .errors import DimensionMismatch, NoConvergence, NotStrictlyFeasible, NotSupported
from .game import (
    GameInstance,
    agent_cost,
    constants,
    coupling_violation,
    epg_rows,
    instance_hash,
    pseudo_gradient,
    pseudo_gradient_matrix,
    spectral_norm,
)
from .operators import Projector, kkt_residual, project_dual
from .projection import StackedProjector
from .steps import Constant, make_step_plan
from .store import ResultStore
from .trace import IterateState

logger = logging.getLogger(__name__)

REFERENCE_KIND = "reference"
ACTIVE_TOL = 1e-7


@dataclass(frozen=True, eq=False)
class ReferenceSolution:
    """A verified solution (x*, λ*) of the coupled KKT system.

    Attributes:
        x_star: Stacked primal solution.
        lambda_star: Shared multiplier.
        kkt_certificate: KKT residual at (x*, λ*).
        method: Solver that produced it.
        iterations: Updates the solver used.
        agreement: Relative primal gap to the cross-check solver, NaN when skipped.
        unique: Whether strong monotonicity certifies x* as the unique v-GNE.
        instance_hash: Hash of the game, when known.
    """

    x_star: np.ndarray
    lambda_star: np.ndarray
    kkt_certificate: float
    method: str
    iterations: int
    agreement: float = float("nan")
    unique: bool = False
    instance_hash: str | None = None
    details: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "x_star": self.x_star.tolist(),
            "lambda_star": self.lambda_star.tolist(),
            "kkt_certificate": self.kkt_certificate,
            "method": self.method,
            "iterations": self.iterations,
            "agreement": None if np.isnan(self.agreement) else self.agreement,
            "unique": self.unique,
            "instance_hash": self.instance_hash,
            "details": self.details,
        }

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> ReferenceSolution:
        agreement = doc.get("agreement")
        return cls(
            x_star=np.asarray(doc["x_star"], dtype=float),
            lambda_star=np.asarray(doc["lambda_star"], dtype=float),
            kkt_certificate=float(doc["kkt_certificate"]),
            method=str(doc["method"]),
            iterations=int(doc["iterations"]),
            agreement=float("nan") if agreement is None else float(agreement),
            unique=bool(doc.get("unique", False)),
            instance_hash=doc.get("instance_hash"),
            details=dict(doc.get("details", {})),
        )


def _coupling_matrix(game: GameInstance) -> np.ndarray:
    """C = [C_1 ... C_N]."""
    return np.hstack(list(game.coupling))


def extragradient(
    game: GameInstance,
    x0: np.ndarray,
    lam0: np.ndarray,
    tol: float = 1e-10,
    max_iter: int = 200_000,
    projector: Projector | None = None,
    check_every: int = 10,
) -> tuple[np.ndarray, np.ndarray, int, float]:
    """Korpelevich extragradient on the monotone KKT operator.

    The operator maps (x, λ) to (F(x) + C'λ, c - Cx) over Ω × R^m_{>=0}; its
    step is 0.9 over the spectral norm of [[P, C'], [-C, 0]].

    Returns:
        (x, λ, iterations, KKT residual).
    """
    project = projector or StackedProjector(game.local_sets)
    P = pseudo_gradient_matrix(game)
    C = _coupling_matrix(game)
    M = np.block([[P, C.T], [-C, np.zeros((C.shape[0], C.shape[0]))]])
    eta = 0.9 / spectral_norm(M)
    offsets = game.offsets.sum(axis=0)

    def field_at(X: np.ndarray, lam: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        primal = epg_rows(game, X, np.broadcast_to(X.mean(axis=0), X.shape))
        primal = primal + np.einsum("imn,m->in", game.coupling, lam)
        return primal, offsets - np.einsum("imn,in->m", game.coupling, X)

    X = game.rows(x0).copy()
    lam = np.asarray(lam0, dtype=float).copy()
    residual = kkt_residual(game, X.ravel(), lam, project)
    k = 0
    while residual > tol and k < max_iter:
        gx, gl = field_at(X, lam)
        Xh, lh = project(X - eta * gx), project_dual(lam - eta * gl)
        gx, gl = field_at(Xh, lh)
        X, lam = project(X - eta * gx), project_dual(lam - eta * gl)
        k += 1
        if k % check_every == 0:
            residual = kkt_residual(game, X.ravel(), lam, project)
    residual = kkt_residual(game, X.ravel(), lam, project)
    return X.ravel(), lam, k, residual


def polish(
    game: GameInstance,
    x: np.ndarray,
    projector: Projector | None = None,
    active_tol: float = ACTIVE_TOL,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Re-solves the KKT system with the constraints active at ``x`` held as equalities.

    Local and coupling rows whose slack is below ``active_tol`` (relative to
    the right-hand side) enter the linear system
    [[P, A'], [A, 0]] (x, μ) = (-b, rhs_A), solved by least squares so that
    duplicate rows are harmless. Coupling multipliers are clipped at zero.

    Returns:
        (x, λ, KKT residual) of the polished point.
    """
    project = projector or StackedProjector(game.local_sets)
    blocks = [local_set.halfspaces() for local_set in game.local_sets]
    local_rows = block_diag(*(rows for rows, _ in blocks))
    rows = np.vstack([local_rows, _coupling_matrix(game)])
    rhs = np.concatenate([*(b for _, b in blocks), game.offsets.sum(axis=0)])
    x = np.asarray(x, dtype=float).ravel()
    active = rhs - rows @ x <= active_tol * (1.0 + np.abs(rhs))
    A = rows[active]
    n, k = x.size, A.shape[0]
    system = np.block([[pseudo_gradient_matrix(game), A.T], [A, np.zeros((k, k))]])
    target = np.concatenate([-game.lin.ravel(), rhs[active]])
    solution = np.linalg.lstsq(system, target, rcond=None)[0]
    multipliers = np.zeros(rows.shape[0])
    multipliers[active] = solution[n:]
    x_new = solution[:n]
    lam_new = np.maximum(multipliers[local_rows.shape[0] :], 0.0)
    return x_new, lam_new, kkt_residual(game, x_new, lam_new, project)


def solve_reference(
    game: GameInstance,
    tol: float = 1e-10,
    max_iter: int = 200_000,
    agree_tol: float = 1e-6,
    *,
    cross_check: bool = True,
    polish_active: bool = True,
    projector: Projector | None = None,
) -> ReferenceSolution:
    """Solves the game to a KKT residual of ``tol`` and cross-checks the answer.

    The primary solve is the semi-decentralized iteration from the default
    start with its standard step sizes. Its point is then polished on the
    active constraints and replaced when the polished residual is smaller.
    The cross-check runs extragradient from the stored strictly feasible
    point. A relative primal disagreement above ``agree_tol`` is logged and
    stored in ``agreement``.

    Raises:
        NotSupported: For a game without an affine pseudo-gradient.
        NoConvergence: If either solver misses ``tol``.
    """
    if not game.is_quadratic:
        raise NotSupported("reference solves need a quadratic game")
    project = projector or StackedProjector(game.local_sets)
    gc = constants(game)
    plan = make_step_plan(gc, 0.05, Constant(1.0))
    trace = run_algorithm1(game, plan, None, max_iter, tol, snapshot_every=0, log_every=0, projector=project)
    x_star, lam_star = trace.final.x.ravel(), trace.final.lam
    residual = trace.records[-1].kkt_residual
    if trace.status != "converged":
        raise NoConvergence(
            f"semi-decentralized solve stopped at KKT residual {residual:.3e} after {max_iter} iterations",
            best=(x_star, lam_star),
            residual=residual,
        )
    unique = gc.strong_mono is not None and gc.strong_mono > 0
    agreement = float("nan")
    details: dict[str, Any] = {"strong_mono": gc.strong_mono, "polished": False}
    if polish_active:
        x_polished, lam_polished, polished_residual = polish(game, x_star, project)
        if polished_residual < residual:
            logger.debug("polished reference: kkt %.3e -> %.3e", residual, polished_residual)
            x_star, lam_star, residual = x_polished, lam_polished, polished_residual
            details["polished"] = True
    if cross_check:
        xe, le, iterations, eg_residual = extragradient(
            game, game.slater_point, np.zeros(game.coupling_dim), tol, max_iter, project
        )
        if eg_residual > tol:
            raise NoConvergence(
                f"extragradient cross-check stopped at KKT residual {eg_residual:.3e}",
                best=(xe, le),
                residual=eg_residual,
            )
        agreement = float(np.linalg.norm(xe - x_star) / max(np.linalg.norm(x_star), 1.0))
        details.update(cross_check_iterations=iterations, cross_check_residual=eg_residual)
        if agreement > agree_tol:
            level = logging.WARNING if unique else logging.INFO
            logger.log(level, "reference solvers disagree: relative gap %.3e > %.1e", agreement, agree_tol)
    logger.info("reference solved: kkt=%.3e iterations=%d agreement=%.3e", residual, trace.iterations, agreement)
    return ReferenceSolution(
        x_star=x_star,
        lambda_star=lam_star,
        kkt_certificate=residual,
        method="semi-decentralized+extragradient" if cross_check else "semi-decentralized",
        iterations=trace.iterations,
        agreement=agreement,
        unique=unique,
        instance_hash=instance_hash(game),
        details=details,
    )


def cached_reference(game: GameInstance, store: ResultStore, **kwargs: Any) -> ReferenceSolution:
    """Returns the stored reference for this instance, solving and storing it if absent."""
    key = instance_hash(game)
    doc = store.get(key, REFERENCE_KIND)
    if doc is not None:
        logger.debug("reference cache hit for %s", key[:12])
        return ReferenceSolution.from_dict(doc["solution"])
    solution = solve_reference(game, **kwargs)
    store.put({"kind": REFERENCE_KIND, "instance_hash": key, "solution": solution.to_dict()})
    return solution


def _gradient_sup(game: GameInstance, lower: np.ndarray, upper: np.ndarray) -> float:
    """sup over the enclosing box of ||F(x)||, by interval arithmetic on Px + b."""
    P = pseudo_gradient_matrix(game)
    b = game.lin.ravel()
    lo, hi = lower.ravel(), upper.ravel()
    top = np.where(P > 0, P * hi, P * lo).sum(axis=1) + b
    bottom = np.where(P > 0, P * lo, P * hi).sum(axis=1) + b
    return float(np.linalg.norm(np.maximum(np.abs(top), np.abs(bottom))))


def dual_bound(game: GameInstance, slater_point: np.ndarray | None = None, r: float = 0.0) -> float:
    """Slater-type bound on ||λ*||_∞ for every v-GNE multiplier, plus slack ``r``.

    With margin s = min_l (c - C x̂)_l of a strictly feasible x̂, the KKT
    conditions give s ||λ*||_1 <= F(x*)'(x̂ - x*) <= sup ||F|| diam(Ω). The
    supremum and the diameter are taken over the enclosing box, so the value
    over-estimates.

    Raises:
        NotStrictlyFeasible: If x̂ leaves a local set or has no coupling slack.
        NotSupported: For a game without an affine pseudo-gradient.
    """
    if not game.is_quadratic:
        raise NotSupported("the dual bound needs a quadratic game")
    point = game.slater_point if slater_point is None else np.asarray(slater_point, dtype=float).ravel()
    if point.size != game.n_agents * game.decision_dim:
        raise DimensionMismatch(f"slater_point must have length {game.n_agents * game.decision_dim}")
    X = game.rows(point)
    for i, local_set in enumerate(game.local_sets):
        if not local_set.contains(X[i]):
            raise NotStrictlyFeasible(f"point leaves the local set of agent {i}")
    margin = float(np.min(-coupling_violation(game, point)))
    if margin <= 0:
        raise NotStrictlyFeasible(f"coupling margin {margin:.3g} is not positive")
    lower, upper = StackedProjector(game.local_sets).bounds()
    diameter = float(np.linalg.norm(upper - lower))
    return _gradient_sup(game, lower, upper) * diameter / margin + r


@dataclass
class SpotCheckReport:
    """Outcome of a randomized inequality check at a candidate solution.

    ``max_move`` is the largest distance between a sampled point and the
    candidate, so a zero value means no sample left the candidate.
    """

    name: str
    samples: int
    worst: float
    violations: int
    tol: float
    max_move: float = 0.0

    @property
    def passed(self) -> bool:
        return self.violations == 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "samples": self.samples,
            "worst": self.worst,
            "violations": self.violations,
            "tol": self.tol,
            "max_move": self.max_move,
            "passed": self.passed,
        }


def _random_local_point(game: GameInstance, i: int, rng: np.random.Generator, project: Projector) -> np.ndarray:
    lower, upper = game.local_sets[i].bounding_box()
    sample = rng.uniform(lower, upper)
    rows = np.array(game.rows(game.slater_point))
    rows[i] = sample
    return project(rows)[i]


def _largest_feasible_step(direction: np.ndarray, slack: np.ndarray) -> float:
    """Largest t in [0, 1] with direction * t <= slack row-wise, given slack >= 0."""
    growing = direction > 0
    if not np.any(growing):
        return 1.0
    return float(min(1.0, np.min(np.maximum(slack[growing], 0.0) / direction[growing])))


def _restricted_set(game: GameInstance, X: np.ndarray, i: int) -> tuple[np.ndarray, np.ndarray]:
    """Agent i's local set cut by the coupling capacity the other agents leave at X."""
    local_rows, local_rhs = game.local_sets[i].halfspaces()
    others = np.einsum("imn,in->m", game.coupling, X) - game.coupling[i] @ X[i]
    rows = np.vstack([local_rows, game.coupling[i]])
    return rows, np.concatenate([local_rhs, game.offsets.sum(axis=0) - others])


def _interior_point(rows: np.ndarray, rhs: np.ndarray, fallback: np.ndarray) -> np.ndarray:
    """A point at positive distance inside ``rows @ z <= rhs``, or ``fallback`` when none exists.

    Maximizes the distance to the nearest facet, capped at one.
    """
    norms = np.linalg.norm(rows, axis=1)
    keep = norms > 0
    dim = rows.shape[1]
    objective = np.zeros(dim + 1)
    objective[-1] = -1.0
    result = linprog(
        objective,
        A_ub=np.hstack([rows[keep], norms[keep, None]]),
        b_ub=rhs[keep],
        bounds=[(None, None)] * dim + [(None, 1.0)],
        method="highs",
    )
    if result.status != 0 or -result.fun <= 0:
        return fallback
    return result.x[:dim]


def gne_spot_check(
    game: GameInstance,
    solution: ReferenceSolution,
    samples: int = 100,
    seed: int = 0,
    tol: float = 1e-8,
    projector: Projector | None = None,
) -> SpotCheckReport:
    """Samples feasible unilateral deviations and checks that none pays off.

    Agent i deviates inside its local set intersected with the coupling
    capacity that x*_{-i} leaves. A deviation starts at a random point of the
    segment from x*_i to a strictly feasible point of that set, walks toward a
    random local point and stops at the boundary. A violation is a cost drop
    larger than ``tol``.
    """
    project = projector or StackedProjector(game.local_sets)
    rng = _rng.stream(seed, "gne-spot-check")
    X = game.rows(solution.x_star)
    N = game.n_agents
    total = X.sum(axis=0)
    restricted: dict[int, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}
    worst, violations, max_move = -np.inf, 0, 0.0
    for _ in range(samples):
        i = int(rng.integers(N))
        if i not in restricted:
            rows, rhs = _restricted_set(game, X, i)
            restricted[i] = (rows, rhs, _interior_point(rows, rhs, X[i]))
        rows, rhs, anchor = restricted[i]
        start = X[i] + rng.uniform() * (anchor - X[i])
        target = _random_local_point(game, i, rng, project)
        t = _largest_feasible_step(rows @ (target - start), rhs - rows @ start)
        z = start + t * (target - start)
        current = agent_cost(game, i, X[i], total / N)
        deviated = agent_cost(game, i, z, (total - X[i] + z) / N)
        gain = current - deviated
        worst = max(worst, gain)
        max_move = max(max_move, float(np.linalg.norm(z - X[i])))
        if gain > tol:
            violations += 1
    return SpotCheckReport("gne", samples, float(worst), violations, tol, max_move)


def vi_spot_check(
    game: GameInstance,
    solution: ReferenceSolution,
    samples: int = 100,
    seed: int = 0,
    tol: float = 1e-8,
    projector: Projector | None = None,
) -> SpotCheckReport:
    """Checks F(x*)'(x - x*) >= -tol on sampled x in K.

    Samples move from the strictly feasible point toward random points of Ω
    and stop at the coupling boundary.
    """
    project = projector or StackedProjector(game.local_sets)
    rng = _rng.stream(seed, "vi-spot-check")
    gradient = pseudo_gradient(game, solution.x_star)
    anchor = game.slater_point
    slack = -coupling_violation(game, anchor)
    lower, upper = StackedProjector(game.local_sets).bounds()
    worst, violations, max_move = np.inf, 0, 0.0
    for _ in range(samples):
        target = project(rng.uniform(lower, upper)).ravel()
        direction = np.einsum("imn,in->m", game.coupling, game.rows(target - anchor))
        t = _largest_feasible_step(direction, slack)
        x = anchor + t * (target - anchor)
        value = float(gradient @ (x - solution.x_star))
        worst = min(worst, value)
        max_move = max(max_move, float(np.linalg.norm(x - solution.x_star)))
        if value < -tol:
            violations += 1
    return SpotCheckReport("vi", samples, float(worst), violations, tol, max_move)


def start_at(solution: ReferenceSolution, game: GameInstance, per_agent: bool = False) -> IterateState:
    """Iterate state located at a reference solution."""
    lam = np.tile(solution.lambda_star, (game.n_agents, 1)) if per_agent else solution.lambda_star.copy()
    return IterateState(x=game.rows(solution.x_star).copy(), lam=lam)
