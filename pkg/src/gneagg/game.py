"""Aggregative games with affine coupling constraints.

A game has N agents, each choosing x_i in a compact convex local set and paying
a cost that depends on x_i and on the average x̄ of all decisions. The agents
share the coupling constraint sum_i C_i x_i <= sum_i c_i.

Stacked vectors are agent-major: agent i occupies entries [i*n, (i+1)*n).
Internally most routines work on (N, n) row arrays instead.
"""

from __future__ import annotations

import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from typing import Any, Union

import numpy as np
from scipy.linalg import block_diag, eigvalsh
from scipy.optimize import linprog

from . import _rng
from ._json import canonical_hash
from .errors import (
    DimensionMismatch,
    InfeasibleInstance,
    InfeasibleSet,
    InvalidBox,
    InvalidParams,
    NotSupported,
)

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

PartialGradient = Callable[[int, np.ndarray, np.ndarray], np.ndarray]
"""Callback ``(i, v_i, w_i) -> F_i(v_i, w_i)`` for non-quadratic games."""

AgentCost = Callable[[int, np.ndarray, np.ndarray], float]
"""Callback ``(i, x_i, xbar) -> J_i(x_i, xbar)`` for non-quadratic games."""


def _vector(values: Any, name: str) -> np.ndarray:
    array = np.asarray(values, dtype=float)
    if array.ndim != 1:
        raise DimensionMismatch(f"{name} must be one-dimensional, got shape {array.shape}")
    return array


@dataclass(frozen=True, eq=False)
class Box:
    """Axis-aligned box ``lower <= x <= upper``."""

    lower: np.ndarray
    upper: np.ndarray
    interior: np.ndarray | None = None

    def __post_init__(self) -> None:
        lower = _vector(self.lower, "lower")
        upper = _vector(self.upper, "upper")
        if lower.shape != upper.shape:
            raise DimensionMismatch("lower and upper must have the same length")
        if np.any(lower > upper):
            raise InvalidBox("box lower bound exceeds upper bound")
        if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
            raise InvalidBox("box bounds must be finite")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        if self.interior is None:
            object.__setattr__(self, "interior", 0.5 * (lower + upper))
        else:
            object.__setattr__(self, "interior", _vector(self.interior, "interior"))

    @property
    def dim(self) -> int:
        return self.lower.size

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        return self.lower, self.upper

    def contains(self, x: np.ndarray, tol: float = 1e-9) -> bool:
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    def halfspaces(self) -> tuple[np.ndarray, np.ndarray]:
        """(rows, rhs) with the box equal to ``rows @ x <= rhs``."""
        eye = np.eye(self.dim)
        return np.vstack([-eye, eye]), np.concatenate([-self.lower, self.upper])

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": "box",
            "lower": self.lower.tolist(),
            "upper": self.upper.tolist(),
            "interior": self.interior.tolist(),
        }


@dataclass(frozen=True, eq=False)
class BoxHalfspace:
    """Box intersected with one halfspace ``normal @ x <= offset``."""

    lower: np.ndarray
    upper: np.ndarray
    normal: np.ndarray
    offset: float
    interior: np.ndarray

    def __post_init__(self) -> None:
        box = Box(self.lower, self.upper)
        normal = _vector(self.normal, "normal")
        if normal.shape != box.lower.shape:
            raise DimensionMismatch("halfspace normal must match the box dimension")
        object.__setattr__(self, "lower", box.lower)
        object.__setattr__(self, "upper", box.upper)
        object.__setattr__(self, "normal", normal)
        object.__setattr__(self, "offset", float(self.offset))
        object.__setattr__(self, "interior", _vector(self.interior, "interior"))
        lowest = float(np.sum(np.where(normal > 0, normal * box.lower, normal * box.upper)))
        if lowest > self.offset:
            raise InfeasibleSet("no point of the box satisfies the halfspace")

    @property
    def dim(self) -> int:
        return self.lower.size

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        return self.lower, self.upper

    def contains(self, x: np.ndarray, tol: float = 1e-9) -> bool:
        in_box = np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol)
        return bool(in_box and float(self.normal @ x) <= self.offset + tol)

    def halfspaces(self) -> tuple[np.ndarray, np.ndarray]:
        rows, rhs = Box(self.lower, self.upper).halfspaces()
        return np.vstack([rows, self.normal]), np.append(rhs, self.offset)

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": "box_halfspace",
            "lower": self.lower.tolist(),
            "upper": self.upper.tolist(),
            "normal": self.normal.tolist(),
            "offset": self.offset,
            "interior": self.interior.tolist(),
        }


@dataclass(frozen=True, eq=False)
class Polyhedron:
    """Bounded polyhedron ``rows @ x <= rhs`` with a strictly feasible point."""

    rows: np.ndarray
    rhs: np.ndarray
    interior: np.ndarray
    _bounds: tuple[np.ndarray, np.ndarray] | None = field(default=None, init=False, repr=False)

    def __post_init__(self) -> None:
        rows = np.atleast_2d(np.asarray(self.rows, dtype=float))
        rhs = _vector(self.rhs, "rhs")
        interior = _vector(self.interior, "interior")
        if rows.shape[0] != rhs.size or rows.shape[1] != interior.size:
            raise DimensionMismatch("rows, rhs and interior point have inconsistent shapes")
        if not np.all(np.isfinite(rows)) or not np.all(np.isfinite(rhs)):
            raise InvalidParams("polyhedron rows must be finite")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "rhs", rhs)
        object.__setattr__(self, "interior", interior)

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        """Tightest enclosing box, from 2n linear programs (computed once)."""
        cached = self._bounds
        if cached is not None:
            return cached
        lower = np.empty(self.dim)
        upper = np.empty(self.dim)
        free = [(None, None)] * self.dim
        for j in range(self.dim):
            for sign, out in ((1.0, lower), (-1.0, upper)):
                objective = np.zeros(self.dim)
                objective[j] = sign
                result = linprog(objective, A_ub=self.rows, b_ub=self.rhs, bounds=free, method="highs")
                if result.status == 2:
                    raise InfeasibleSet("polyhedron is empty")
                if result.status != 0:
                    raise InfeasibleSet("polyhedron is unbounded; local sets must be compact")
                out[j] = sign * result.fun
        object.__setattr__(self, "_bounds", (lower, upper))
        return lower, upper

    def contains(self, x: np.ndarray, tol: float = 1e-9) -> bool:
        return bool(np.all(self.rows @ x <= self.rhs + tol))

    def halfspaces(self) -> tuple[np.ndarray, np.ndarray]:
        return self.rows, self.rhs

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": "polyhedron",
            "rows": self.rows.tolist(),
            "rhs": self.rhs.tolist(),
            "interior": self.interior.tolist(),
        }


LocalSet = Union[Box, BoxHalfspace, Polyhedron]


def local_set_from_dict(doc: dict[str, Any]) -> LocalSet:
    """Rebuilds a local set from its ``to_dict`` form."""
    kind = doc.get("kind")
    if kind == "box":
        return Box(doc["lower"], doc["upper"], doc.get("interior"))
    if kind == "box_halfspace":
        return BoxHalfspace(doc["lower"], doc["upper"], doc["normal"], doc["offset"], doc["interior"])
    if kind == "polyhedron":
        return Polyhedron(doc["rows"], doc["rhs"], doc["interior"])
    raise InvalidParams(f"unknown local set kind: {kind!r}")


@dataclass(frozen=True, eq=False)
class AgentSpec:
    """One agent: quadratic cost data, local set and coupling block.

    The cost is ``x_i' A_i x_i + b_i' x_i + (Delta xbar)' x_i``; ``quad_matrix``
    and ``lin_vector`` are ignored when the game supplies a gradient callback.
    """

    quad_matrix: np.ndarray
    lin_vector: np.ndarray
    local_set: LocalSet
    coupling_block: np.ndarray
    coupling_offset: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "quad_matrix", np.atleast_2d(np.asarray(self.quad_matrix, dtype=float)))
        object.__setattr__(self, "lin_vector", _vector(self.lin_vector, "lin_vector"))
        object.__setattr__(self, "coupling_block", np.atleast_2d(np.asarray(self.coupling_block, dtype=float)))
        object.__setattr__(self, "coupling_offset", _vector(self.coupling_offset, "coupling_offset"))
        n = self.local_set.dim
        if self.quad_matrix.shape != (n, n) or self.lin_vector.shape != (n,):
            raise DimensionMismatch("cost data must match the local set dimension")
        if self.coupling_block.shape != (self.coupling_offset.size, n):
            raise DimensionMismatch("coupling block must be m x n with an m-vector offset")
        if not np.allclose(self.quad_matrix, self.quad_matrix.T, atol=1e-12):
            raise InvalidParams("quad_matrix must be symmetric")
        if n and eigvalsh(self.quad_matrix)[0] < -1e-10:
            raise InvalidParams("quad_matrix must be positive semidefinite")


@dataclass(frozen=True, eq=False)
class GameInstance:
    """Immutable aggregative game.

    Attributes:
        agents: Per-agent data, all with the same n and m.
        agg_coupling: Shared diagonal 0/1 matrix Delta selecting the coordinates
            coupled through the aggregate.
        slater_point: Stacked strictly feasible point (local sets and coupling).
        partial_gradient: Optional callback replacing the quadratic cost.
        agent_cost: Optional cost callback matching ``partial_gradient``.
        metadata: Generator provenance (kind, seed, parameter ranges).
    """

    agents: tuple[AgentSpec, ...]
    agg_coupling: np.ndarray
    slater_point: np.ndarray
    partial_gradient: PartialGradient | None = None
    agent_cost: AgentCost | None = None
    metadata: dict[str, Any] = field(default_factory=dict)
    quad: np.ndarray = field(init=False, repr=False)
    lin: np.ndarray = field(init=False, repr=False)
    coupling: np.ndarray = field(init=False, repr=False)
    offsets: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        agents = tuple(self.agents)
        if not agents:
            raise InvalidParams("a game needs at least one agent")
        object.__setattr__(self, "agents", agents)
        n = agents[0].local_set.dim
        m = agents[0].coupling_offset.size
        if any(a.local_set.dim != n or a.coupling_offset.size != m for a in agents):
            raise DimensionMismatch("all agents must share decision_dim and coupling_dim")
        delta = np.atleast_2d(np.asarray(self.agg_coupling, dtype=float))
        if delta.shape != (n, n):
            raise DimensionMismatch("agg_coupling must be n x n")
        off_diagonal = delta - np.diag(np.diag(delta))
        if np.any(off_diagonal != 0) or not np.all(np.isin(np.diag(delta), (0.0, 1.0))):
            raise InvalidParams("agg_coupling must be diagonal with entries in {0, 1}")
        object.__setattr__(self, "agg_coupling", delta)

        # stacked copies for the vectorized routines
        object.__setattr__(self, "quad", np.stack([a.quad_matrix for a in agents]))
        object.__setattr__(self, "lin", np.stack([a.lin_vector for a in agents]))
        object.__setattr__(self, "coupling", np.stack([a.coupling_block for a in agents]))
        object.__setattr__(self, "offsets", np.stack([a.coupling_offset for a in agents]))

        slater = _vector(self.slater_point, "slater_point")
        if slater.size != len(agents) * n:
            raise DimensionMismatch("slater_point must have length N*n")
        object.__setattr__(self, "slater_point", slater)
        rows = slater.reshape(len(agents), n)
        for i, agent in enumerate(agents):
            if not agent.local_set.contains(rows[i], tol=0.0):
                raise InfeasibleInstance(f"slater point is outside the local set of agent {i}")
        if m and np.any(coupling_violation(self, slater) >= 0.0):
            raise InfeasibleInstance("slater point has no strict slack in the coupling constraint")
        object.__setattr__(self, "metadata", dict(self.metadata))

    @property
    def n_agents(self) -> int:
        return len(self.agents)

    @property
    def decision_dim(self) -> int:
        return self.agents[0].local_set.dim

    @property
    def coupling_dim(self) -> int:
        return self.agents[0].coupling_offset.size

    @property
    def is_quadratic(self) -> bool:
        return self.partial_gradient is None

    @property
    def local_sets(self) -> tuple[LocalSet, ...]:
        return tuple(a.local_set for a in self.agents)

    def rows(self, x: np.ndarray, name: str = "x") -> np.ndarray:
        """Reshapes a stacked primal vector into (N, n) rows."""
        return as_rows(x, self.n_agents, self.decision_dim, name)

    def dual_rows(self, lam: np.ndarray, name: str = "lambda") -> np.ndarray:
        """Reshapes a stacked per-agent dual vector into (N, m) rows."""
        return as_rows(lam, self.n_agents, self.coupling_dim, name)


@dataclass(frozen=True)
class GameConstants:
    """Scalar constants that drive the step-size rules."""

    p_norm: float
    coco: float
    lip_epg: float
    delta: float
    tau_min: float
    coupling_norms: tuple[float, ...]
    coupling_norm_mean: float
    strong_mono: float | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "p_norm": self.p_norm,
            "coco": self.coco,
            "lip_epg": self.lip_epg,
            "delta": self.delta,
            "tau_min": self.tau_min,
            "coupling_norms": list(self.coupling_norms),
            "coupling_norm_mean": self.coupling_norm_mean,
            "strong_mono": self.strong_mono,
        }


@dataclass(frozen=True)
class CournotParams:
    """Parameter ranges for randomized network Nash–Cournot games.

    Every coefficient is drawn uniformly from its range; ``r`` is drawn as
    ``d * U(r_scale)`` unless ``r_range`` gives absolute bounds.
    """

    n_agents: int = 20
    n_markets: int = 10
    a_range: tuple[float, float] = (2.0, 3.0)
    b_range: tuple[float, float] = (2.0, 12.0)
    u_range: tuple[float, float] = (50.0, 100.0)
    d_range: tuple[float, float] = (90.0, 100.0)
    r_scale: tuple[float, float] = (1.0, 2.0)
    r_range: tuple[float, float] | None = None

    def validate(self) -> None:
        if self.n_agents < 1 or self.n_markets < 1:
            raise InvalidParams("n_agents and n_markets must be at least 1")
        ranges = {
            "a_range": self.a_range,
            "b_range": self.b_range,
            "u_range": self.u_range,
            "d_range": self.d_range,
            "r_scale": self.r_scale,
        }
        if self.r_range is not None:
            ranges["r_range"] = self.r_range
        for name, (lo, hi) in ranges.items():
            if not (np.isfinite(lo) and np.isfinite(hi)) or lo > hi:
                raise InvalidParams(f"{name} must be a finite interval with low <= high")
        if self.a_range[0] <= 0:
            raise InvalidParams("a_range must be strictly positive")
        if self.u_range[0] < 0 or self.d_range[0] < 0:
            raise InvalidParams("capacities and demands must be non-negative")

    def to_dict(self) -> dict[str, Any]:
        return {
            "n_agents": self.n_agents,
            "n_markets": self.n_markets,
            "a_range": list(self.a_range),
            "b_range": list(self.b_range),
            "u_range": list(self.u_range),
            "d_range": list(self.d_range),
            "r_scale": list(self.r_scale),
            "r_range": None if self.r_range is None else list(self.r_range),
        }

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> CournotParams:
        known = {f: doc[f] for f in cls.__dataclass_fields__ if f in doc}
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidParams(f"unknown Cournot parameters: {sorted(unknown)}")
        for key, value in list(known.items()):
            if key.endswith(("_range", "_scale")) and value is not None:
                known[key] = tuple(float(v) for v in value)
        return cls(**known)


def as_rows(x: Any, count: int, width: int, name: str = "x") -> np.ndarray:
    """Validates a stacked vector and views it as (count, width) rows."""
    array = np.asarray(x, dtype=float)
    if array.shape == (count, width):
        return array
    if array.ndim != 1 or array.size != count * width:
        raise DimensionMismatch(f"{name} must have length {count * width}, got shape {array.shape}")
    return array.reshape(count, width)


def _draw(seed: int, name: str, bounds: tuple[float, float], shape: tuple[int, ...]) -> np.ndarray:
    return _rng.stream(seed, f"cournot/{name}").uniform(bounds[0], bounds[1], size=shape)


def build_cournot(params: CournotParams, seed: int) -> GameInstance:
    """Draws a network Nash–Cournot game.

    Firm i chooses production g_i and sales s_i over m markets, so
    x_i = (g_i, s_i) and n = 2m. Production costs a g^2 + b g, market prices
    are linear in total sales, and each market caps total sales between the
    demand d_l and the capacity r_l.

    Args:
        params: Parameter ranges.
        seed: Non-negative seed; each coefficient has its own random stream.

    Returns:
        The game with a strictly feasible point attached.

    Raises:
        InvalidParams: If the ranges are malformed.
        InfeasibleInstance: If some market's demand cannot be met strictly.
    """
    params.validate()
    N, m = params.n_agents, params.n_markets
    a = _draw(seed, "a", params.a_range, (N, m))
    b = _draw(seed, "b", params.b_range, (N, m))
    u = _draw(seed, "u", params.u_range, (N, m))
    d = _draw(seed, "d", params.d_range, (m,))
    if params.r_range is None:
        r = d * _draw(seed, "r", params.r_scale, (m,))
    else:
        r = _draw(seed, "r", params.r_range, (m,))

    capacity = u.sum(axis=0)
    ceiling = np.minimum(r, capacity)
    short = np.flatnonzero(d >= ceiling)
    if short.size:
        l = int(short[0])
        raise InfeasibleInstance(
            f"market {l}: demand {d[l]:.6g} is not strictly below "
            f"min(capacity {capacity[l]:.6g}, cap {r[l]:.6g})"
        )
    target = 0.5 * (d + ceiling)
    sales = target * u / capacity
    production = 0.5 * (sales + u)

    eye = np.eye(m)
    zeros = np.zeros((m, m))
    coupling = np.block([[zeros, eye], [zeros, -eye]])
    delta = np.diag(np.concatenate([np.zeros(m), np.ones(m)]))
    normal = np.concatenate([-np.ones(m), np.ones(m)])
    agents = []
    for i in range(N):
        lower = np.zeros(2 * m)
        upper = np.concatenate([u[i], np.full(m, u[i].sum())])
        point = np.concatenate([production[i], sales[i]])
        agents.append(
            AgentSpec(
                quad_matrix=np.diag(np.concatenate([a[i], np.zeros(m)])),
                lin_vector=np.concatenate([b[i], -d]),
                local_set=BoxHalfspace(lower, upper, normal, 0.0, point),
                coupling_block=coupling,
                coupling_offset=np.concatenate([r, -d]) / N,
            )
        )
    slater = np.concatenate([np.concatenate([production[i], sales[i]]) for i in range(N)])
    game = GameInstance(
        agents=tuple(agents),
        agg_coupling=delta,
        slater_point=slater,
        metadata={"kind": "cournot", "seed": int(seed), "params": params.to_dict()},
    )
    logger.debug("built Cournot game N=%d m=%d seed=%d", N, m, seed)
    return game


def pseudo_gradient(game: GameInstance, x: np.ndarray) -> np.ndarray:
    """F(x): the stacked partial gradients of every agent's own cost.

    Raises:
        DimensionMismatch: If ``x`` does not have length N*n.
    """
    X = game.rows(x)
    return _epg_rows(game, X, np.broadcast_to(X.mean(axis=0), X.shape)).ravel()


def extended_pseudo_gradient(game: GameInstance, v: np.ndarray, w: np.ndarray) -> np.ndarray:
    """F(v, w): agent i's gradient with its own aggregate estimate w_i.

    ``extended_pseudo_gradient(game, x, 1 (x) xbar)`` equals ``pseudo_gradient(game, x)``.
    """
    return _epg_rows(game, game.rows(v, "v"), game.rows(w, "w")).ravel()


def _epg_rows(game: GameInstance, V: np.ndarray, W: np.ndarray) -> np.ndarray:
    N = game.n_agents
    if game.partial_gradient is not None:
        return np.stack([np.asarray(game.partial_gradient(i, V[i], W[i]), dtype=float) for i in range(N)])
    diag = np.diag(game.agg_coupling)
    return 2.0 * np.einsum("ijk,ik->ij", game.quad, V) + (V / N + W) * diag + game.lin


def epg_rows(game: GameInstance, V: np.ndarray, W: np.ndarray) -> np.ndarray:
    """Row form of :func:`extended_pseudo_gradient` for (N, n) arrays."""
    return _epg_rows(game, V, W)


def coupling_violation(game: GameInstance, x: np.ndarray) -> np.ndarray:
    """Cx - c; the point satisfies the coupling constraint iff every entry is <= 0."""
    X = game.rows(x)
    return np.einsum("imn,in->m", game.coupling, X) - game.offsets.sum(axis=0)


def agent_cost(game: GameInstance, i: int, x_i: np.ndarray, xbar: np.ndarray) -> float:
    """J_i(x_i, xbar)."""
    if game.agent_cost is not None:
        return float(game.agent_cost(i, x_i, xbar))
    if not game.is_quadratic:
        raise NotSupported("game has a gradient callback but no cost callback")
    agent = game.agents[i]
    return float(x_i @ agent.quad_matrix @ x_i + agent.lin_vector @ x_i + (game.agg_coupling @ xbar) @ x_i)


def pseudo_gradient_matrix(game: GameInstance) -> np.ndarray:
    """P in F(x) = Px + b for quadratic games."""
    if not game.is_quadratic:
        raise NotSupported("P exists only for quadratic games")
    N = game.n_agents
    own = block_diag(*(2.0 * A for A in game.quad))
    return own + np.kron(np.eye(N) + np.ones((N, N)), game.agg_coupling) / N


def epg_matrix(game: GameInstance) -> np.ndarray:
    """[2A + (1/N) I(x)Delta | I(x)Delta], the linear part of F(v, w)."""
    if not game.is_quadratic:
        raise NotSupported("the EPG matrix exists only for quadratic games")
    N = game.n_agents
    own = block_diag(*(2.0 * A for A in game.quad)) + np.kron(np.eye(N), game.agg_coupling) / N
    return np.hstack([own, np.kron(np.eye(N), game.agg_coupling)])


def spectral_norm(matrix: np.ndarray, tol: float = 1e-10, max_iter: int = 10_000) -> float:
    """Largest singular value by power iteration on M'M.

    Stops when the relative change of the estimate drops below ``tol``.
    """
    M = np.atleast_2d(np.asarray(matrix, dtype=float))
    if not np.any(M):
        return 0.0
    v = _rng.stream(0, "spectral-norm").standard_normal(M.shape[1])
    v /= np.linalg.norm(v)
    estimate = 0.0
    for _ in range(max_iter):
        w = M.T @ (M @ v)
        norm_w = np.linalg.norm(w)
        if norm_w == 0.0:
            return 0.0
        v = w / norm_w
        previous, estimate = estimate, float(np.sqrt(norm_w))
        if abs(estimate - previous) <= tol * estimate:
            break
    else:
        logger.warning("power iteration hit %d iterations without reaching tol %.1e", max_iter, tol)
    return estimate


def constants(
    game: GameInstance,
    *,
    coco: float | None = None,
    lip_epg: float | None = None,
) -> GameConstants:
    """Cocoercivity, Lipschitz and step-size constants of the game.

    Args:
        game: The game.
        coco: Cocoercivity constant, required for non-quadratic games.
        lip_epg: Lipschitz constant of F(v, w), required for non-quadratic games.

    Raises:
        NotSupported: For a non-quadratic game without both overrides.
    """
    norms = tuple(float(np.linalg.norm(C, 2)) for C in game.coupling)
    strong = None
    if game.is_quadratic:
        P = pseudo_gradient_matrix(game)
        p_norm = spectral_norm(P)
        coco = 1.0 / p_norm if coco is None else coco
        lip_epg = spectral_norm(epg_matrix(game)) if lip_epg is None else lip_epg
        strong = float(eigvalsh(0.5 * (P + P.T), subset_by_index=[0, 0])[0])
    elif coco is None or lip_epg is None:
        raise NotSupported("non-quadratic games need user-supplied coco and lip_epg")
    else:
        p_norm = 1.0 / coco
    delta = min(1.0, coco)
    return GameConstants(
        p_norm=float(p_norm),
        coco=float(coco),
        lip_epg=float(lip_epg),
        delta=float(delta),
        tau_min=1.0 / (2.0 * delta),
        coupling_norms=norms,
        coupling_norm_mean=float(np.mean(norms)),
        strong_mono=strong,
    )


def game_to_dict(game: GameInstance) -> dict[str, Any]:
    """JSON document describing a quadratic game exactly."""
    if not game.is_quadratic:
        raise NotSupported("only quadratic games can be serialized")
    return {
        "version": SCHEMA_VERSION,
        "N": game.n_agents,
        "n": game.decision_dim,
        "m": game.coupling_dim,
        "agg_coupling": np.diag(game.agg_coupling).tolist(),
        "agents": [
            {
                "A": agent.quad_matrix.tolist(),
                "b": agent.lin_vector.tolist(),
                "C": agent.coupling_block.tolist(),
                "c": agent.coupling_offset.tolist(),
                "local_set": agent.local_set.to_dict(),
            }
            for agent in game.agents
        ],
        "slater_point": game.slater_point.tolist(),
        "metadata": game.metadata,
    }


def game_from_dict(doc: dict[str, Any]) -> GameInstance:
    """Inverse of :func:`game_to_dict`."""
    if doc.get("version") != SCHEMA_VERSION:
        raise InvalidParams(f"unsupported instance schema version: {doc.get('version')!r}")
    agents = tuple(
        AgentSpec(
            quad_matrix=entry["A"],
            lin_vector=entry["b"],
            local_set=local_set_from_dict(entry["local_set"]),
            coupling_block=entry["C"],
            coupling_offset=entry["c"],
        )
        for entry in doc["agents"]
    )
    game = GameInstance(
        agents=agents,
        agg_coupling=np.diag(np.asarray(doc["agg_coupling"], dtype=float)),
        slater_point=doc["slater_point"],
        metadata=doc.get("metadata", {}),
    )
    if (game.n_agents, game.decision_dim, game.coupling_dim) != (doc["N"], doc["n"], doc["m"]):
        raise DimensionMismatch("instance header does not match agent data")
    return game


def instance_hash(game: GameInstance) -> str:
    """Stable identifier of a quadratic game."""
    return canonical_hash(game_to_dict(game))


def stack(rows: Sequence[np.ndarray]) -> np.ndarray:
    """Concatenates per-agent vectors into a stacked vector."""
    return np.concatenate([np.asarray(r, dtype=float).ravel() for r in rows])
