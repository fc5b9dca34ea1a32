"""Operator layer: T1, S, the preconditioner Phi and the forward-backward map R.

A point omega = (x, lambda) stacks the primal decisions of all agents and
either one shared multiplier (m entries) or one multiplier copy per agent
(N*m entries).
"""

from __future__ import annotations

import logging
from collections.abc import Callable
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.linalg import eigvalsh

from .errors import DimensionMismatch, InvalidParams, PDCheckFailed
from .game import GameConstants, GameInstance, constants, epg_rows
from .projection import StackedProjector

logger = logging.getLogger(__name__)

PD_SLACK = 1e-9

Projector = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class StackedPoint:
    """omega = col(x, lambda) with flat primal and dual parts."""

    primal: np.ndarray
    dual: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "primal", np.asarray(self.primal, dtype=float).ravel())
        object.__setattr__(self, "dual", np.asarray(self.dual, dtype=float).ravel())

    @classmethod
    def from_rows(cls, X: np.ndarray, L: np.ndarray) -> StackedPoint:
        return cls(X.ravel(), L.ravel())

    def vector(self) -> np.ndarray:
        return np.concatenate([self.primal, self.dual])

    def rows(self, game: GameInstance) -> tuple[np.ndarray, np.ndarray]:
        """(N, n) primal rows and (N, m) dual rows; the dual must be per-agent."""
        if self.dual.size != game.n_agents * game.coupling_dim:
            raise DimensionMismatch("expected one multiplier copy per agent")
        return game.rows(self.primal), game.dual_rows(self.dual)

    def is_consensual(self, game: GameInstance, tol: float = 1e-12) -> bool:
        """True when every agent holds the same multiplier (membership in E∥)."""
        _, L = self.rows(game)
        return bool(np.max(np.abs(L - L.mean(axis=0)), initial=0.0) <= tol)


@dataclass(frozen=True, eq=False)
class Preconditioner:
    """Phi = [[diag(alpha)^-1, -C_f'/N], [-C_f/N, diag(beta)^-1]].

    Attributes:
        alpha: Primal steps, one per agent.
        beta: Dual steps, one per agent.
        coupling: Coupling blocks C_i, shape (N, m, n).
        tau: Lower eigenvalue target.
        delta: Cocoercivity constant used for nu.
        nu: Averagedness constant 2 delta tau / (4 delta tau - 1).
        min_eigenvalue: Smallest eigenvalue of the assembled Phi.
    """

    alpha: np.ndarray
    beta: np.ndarray
    coupling: np.ndarray
    tau: float
    delta: float
    nu: float = field(init=False)
    min_eigenvalue: float = field(init=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "alpha", np.asarray(self.alpha, dtype=float))
        object.__setattr__(self, "beta", np.asarray(self.beta, dtype=float))
        object.__setattr__(self, "coupling", np.asarray(self.coupling, dtype=float))
        agents = (self.coupling.shape[0],) if self.coupling.ndim == 3 else None
        if agents is None or self.alpha.shape != agents or self.beta.shape != agents:
            raise DimensionMismatch("alpha, beta and coupling must describe the same agents")
        if np.any(self.alpha <= 0) or np.any(self.beta <= 0):
            raise InvalidParams("step sizes must be positive")
        product = 4.0 * self.delta * self.tau
        if product <= 1.0:
            raise InvalidParams("tau must exceed 1/(4 delta) for the forward step to be averaged")
        object.__setattr__(self, "nu", 2.0 * self.delta * self.tau / (product - 1.0))
        object.__setattr__(self, "min_eigenvalue", float(eigvalsh(self.dense(), subset_by_index=[0, 0])[0]))

    @property
    def n_agents(self) -> int:
        return self.coupling.shape[0]

    def dense(self) -> np.ndarray:
        N, m, n = self.coupling.shape
        top = np.kron(np.diag(1.0 / self.alpha), np.eye(n))
        bottom = np.kron(np.diag(1.0 / self.beta), np.eye(m))
        # block (j, i) of C_f is C_i
        cf = np.tile(np.hstack(list(self.coupling)), (N, 1)) if N else np.zeros((0, 0))
        return np.block([[top, -cf.T / N], [-cf / N, bottom]])

    def apply(self, v: np.ndarray) -> np.ndarray:
        """Phi v without assembling Phi."""
        N, m, n = self.coupling.shape
        v = np.asarray(v, dtype=float)
        if v.size != N * (n + m):
            raise DimensionMismatch(f"expected a vector of length {N * (n + m)}")
        X = v[: N * n].reshape(N, n)
        L = v[N * n :].reshape(N, m)
        top = X / self.alpha[:, None] - np.einsum("imn,m->in", self.coupling, L.mean(axis=0))
        aggregate = np.einsum("imn,in->m", self.coupling, X) / N
        bottom = L / self.beta[:, None] - aggregate
        return np.concatenate([top.ravel(), bottom.ravel()])

    def to_dict(self) -> dict[str, Any]:
        return {
            "alpha": self.alpha.tolist(),
            "beta": self.beta.tolist(),
            "tau": self.tau,
            "delta": self.delta,
            "nu": self.nu,
            "min_eigenvalue": self.min_eigenvalue,
        }


def require_positive_definite(precond: Preconditioner, target: float | None = None) -> None:
    """Raises PDCheckFailed unless lambda_min(Phi) >= target - 1e-9 (default tau)."""
    target = precond.tau if target is None else target
    if precond.min_eigenvalue < target - PD_SLACK:
        raise PDCheckFailed(
            f"smallest eigenvalue of the preconditioner is {precond.min_eigenvalue:.6g}, "
            f"below the required {target:.6g}"
        )


def build_preconditioner(
    game: GameInstance,
    tau_margin: float = 0.05,
    *,
    game_constants: GameConstants | None = None,
    alpha: np.ndarray | None = None,
    beta: np.ndarray | None = None,
    check: bool = True,
) -> Preconditioner:
    """Step sizes at their upper bounds for tau = (1 + tau_margin) / (2 delta).

    Args:
        game: The game.
        tau_margin: Relative margin above the smallest admissible tau.
        game_constants: Precomputed constants, computed when omitted.
        alpha: Override for the primal steps.
        beta: Override for the dual steps.
        check: Verify lambda_min(Phi) >= tau.

    Raises:
        InvalidParams: If tau_margin is negative.
        PDCheckFailed: If the eigenvalue check fails.
    """
    if tau_margin < 0:
        raise InvalidParams("tau_margin must be non-negative")
    gc = constants(game) if game_constants is None else game_constants
    tau = (1.0 + tau_margin) * gc.tau_min
    norms = np.asarray(gc.coupling_norms)
    alpha = 1.0 / (norms + tau) if alpha is None else np.asarray(alpha, dtype=float)
    beta = np.full(game.n_agents, 1.0 / (gc.coupling_norm_mean + tau)) if beta is None else np.asarray(beta, dtype=float)
    precond = Preconditioner(alpha, beta, game.coupling, tau, gc.delta)
    if check:
        require_positive_definite(precond)
    return precond


def apply_T1(game: GameInstance, point: StackedPoint) -> np.ndarray:
    """col(F(x), L_m lambda + c_f / N)."""
    X, L = point.rows(game)
    F = epg_rows(game, X, np.broadcast_to(X.mean(axis=0), X.shape))
    dual = L - L.mean(axis=0) + game.offsets.sum(axis=0) / game.n_agents
    return np.concatenate([F.ravel(), dual.ravel()])


def apply_S(game: GameInstance, point: StackedPoint) -> np.ndarray:
    """(1/N) col(C_f' lambda, -C_f x); skew-symmetric."""
    X, L = point.rows(game)
    top = np.einsum("imn,m->in", game.coupling, L.mean(axis=0))
    aggregate = np.einsum("imn,in->m", game.coupling, X) / game.n_agents
    bottom = np.broadcast_to(-aggregate, L.shape)
    return np.concatenate([top.ravel(), bottom.ravel()])


def pfb_rows(
    game: GameInstance,
    alpha: np.ndarray,
    beta: np.ndarray,
    X: np.ndarray,
    L: np.ndarray,
    project: Projector,
    dual_cap: float | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """One forward-backward step on rows with exact averages."""
    xbar = X.mean(axis=0)
    lbar = L.mean(axis=0)
    G = epg_rows(game, X, np.broadcast_to(xbar, X.shape)) + np.einsum("imn,m->in", game.coupling, lbar)
    Xt = project(X - alpha[:, None] * G)
    dbar = reflected_violation(game, Xt, X).mean(axis=0)
    Lt = project_dual(L + beta[:, None] * (dbar - L + lbar), dual_cap)
    return Xt, Lt


def reflected_violation(game: GameInstance, Xt: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Rows d_i = C_i (2 xt_i - x_i) - c_i."""
    return np.einsum("imn,in->im", game.coupling, 2.0 * Xt - X) - game.offsets


def project_dual(L: np.ndarray, dual_cap: float | None = None) -> np.ndarray:
    """Projection onto the nonnegative orthant, or onto [0, cap] when capped."""
    if dual_cap is None:
        return np.maximum(L, 0.0)
    return np.clip(L, 0.0, dual_cap)


def pfb_map(
    game: GameInstance,
    precond: Preconditioner,
    point: StackedPoint,
    projector: Projector | None = None,
) -> StackedPoint:
    """R(omega), evaluated through the closed-form projected updates.

    The primal step projects a pseudo-gradient step that uses the exact
    averages; the dual step uses the reflected coupling violation. This equals
    the resolvent composition (Id + Phi^-1 T2)^-1 (Id - Phi^-1 T1) without
    forming Phi^-1.
    """
    X, L = point.rows(game)
    project = projector or StackedProjector(game.local_sets)
    Xt, Lt = pfb_rows(game, precond.alpha, precond.beta, X, L, project)
    return StackedPoint.from_rows(Xt, Lt)


def kkt_residual(
    game: GameInstance,
    x: np.ndarray,
    lambda_shared: np.ndarray,
    projector: Projector | None = None,
) -> float:
    """Natural residual of the coupled KKT system at (x, lambda).

    max(||x - P_Omega(x - F(x) - C' lambda)||_inf, ||lambda - max(0, lambda + Cx - c)||_inf)
    """
    X = game.rows(x)
    lam = np.asarray(lambda_shared, dtype=float)
    if lam.shape != (game.coupling_dim,):
        raise DimensionMismatch(f"lambda must have length {game.coupling_dim}")
    project = projector or StackedProjector(game.local_sets)
    G = epg_rows(game, X, np.broadcast_to(X.mean(axis=0), X.shape)) + np.einsum("imn,m->in", game.coupling, lam)
    stationarity = np.max(np.abs(X - project(X - G)), initial=0.0)
    violation = np.einsum("imn,in->m", game.coupling, X) - game.offsets.sum(axis=0)
    complementarity = np.max(np.abs(lam - np.maximum(lam + violation, 0.0)), initial=0.0)
    return float(max(stationarity, complementarity))


def phi_norm(precond: Preconditioner, v: np.ndarray) -> float:
    """sqrt(v' Phi v).

    Raises:
        PDCheckFailed: If Phi is not positive definite.
    """
    if precond.min_eigenvalue <= 0:
        raise PDCheckFailed(f"preconditioner is not positive definite (min eigenvalue {precond.min_eigenvalue:.3g})")
    v = np.asarray(v, dtype=float)
    return float(np.sqrt(max(v @ precond.apply(v), 0.0)))


def consensus_disagreement(L: np.ndarray) -> float:
    """||(L (x) I_m) lambda||, the distance of the copies from their average."""
    return float(np.linalg.norm(L - L.mean(axis=0)))
