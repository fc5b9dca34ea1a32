"""Time-varying communication graphs and their doubly stochastic mixing matrices."""

from __future__ import annotations

import enum
import logging
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from threading import RLock
from typing import Any, Union

import networkx as nx
import numpy as np

from . import _rng
from .errors import AssumptionViolated, InvalidParams, RangeError, ScheduleExhausted

logger = logging.getLogger(__name__)

Edge = tuple[int, int]

STOCHASTIC_TOL = 1e-10


@dataclass(frozen=True)
class SmallWorld:
    """Watts–Strogatz graph redrawn every iteration, each draw connected."""

    neighbors: int = 4
    rewire: float = 0.2


@dataclass(frozen=True)
class RingSplit:
    """A ring whose edges are dealt round-robin over ``q`` consecutive slots."""

    q: int = 2


@dataclass(frozen=True)
class ErdosRenyiConnected:
    """G(N, p) redrawn every iteration until connected."""

    p: float = 0.3


@dataclass(frozen=True)
class Complete:
    """Every pair of nodes connected at every iteration."""


ScheduleKind = Union[SmallWorld, RingSplit, ErdosRenyiConnected, Complete]


class MixingVariant(str, enum.Enum):
    """Metropolis weight rules.

    ``PLAIN`` uses 1/max(deg_i, deg_j) on edges, which leaves a zero diagonal on
    regular graphs. ``SAFE_DIAGONAL`` uses 1/(1 + max(deg_i, deg_j)) and keeps
    every diagonal entry positive.
    """

    PLAIN = "plain"
    SAFE_DIAGONAL = "safe_diagonal"


def kind_to_dict(kind: ScheduleKind) -> dict[str, Any]:
    if isinstance(kind, SmallWorld):
        return {"name": "small_world", "neighbors": kind.neighbors, "rewire": kind.rewire}
    if isinstance(kind, RingSplit):
        return {"name": "ring_split", "q": kind.q}
    if isinstance(kind, ErdosRenyiConnected):
        return {"name": "erdos_renyi", "p": kind.p}
    if isinstance(kind, Complete):
        return {"name": "complete"}
    raise InvalidParams(f"unknown schedule kind: {kind!r}")


def kind_from_dict(doc: dict[str, Any]) -> ScheduleKind:
    name = doc.get("name")
    if name == "small_world":
        return SmallWorld(int(doc.get("neighbors", 4)), float(doc.get("rewire", 0.2)))
    if name == "ring_split":
        return RingSplit(int(doc["q"]))
    if name == "erdos_renyi":
        return ErdosRenyiConnected(float(doc["p"]))
    if name == "complete":
        return Complete()
    raise InvalidParams(f"unknown schedule kind: {name!r}")


@dataclass(frozen=True)
class GraphSchedule:
    """Undirected graphs E_0, ..., E_{K-1} materialized up to ``horizon``.

    With ``cycle`` set, iteration k uses E_{k mod K}; otherwise indexing past
    the horizon raises.
    """

    n_nodes: int
    horizon: int
    edges: tuple[tuple[Edge, ...], ...]
    q_window: int
    kind: ScheduleKind
    seed: int
    cycle: bool = True

    def slot(self, k: int) -> int:
        if k < 0:
            raise RangeError(f"iteration index must be non-negative, got {k}")
        if k < self.horizon:
            return k
        if not self.cycle:
            raise ScheduleExhausted(f"iteration {k} is past the schedule horizon {self.horizon}")
        return k % self.horizon

    def edges_at(self, k: int) -> tuple[Edge, ...]:
        return self.edges[self.slot(k)]

    def graph(self, k: int) -> nx.Graph:
        g = nx.Graph()
        g.add_nodes_from(range(self.n_nodes))
        g.add_edges_from(self.edges_at(k))
        return g

    def to_dict(self) -> dict[str, Any]:
        return {
            "version": 1,
            "n_nodes": self.n_nodes,
            "horizon": self.horizon,
            "q_window": self.q_window,
            "kind": kind_to_dict(self.kind),
            "seed": self.seed,
            "cycle": self.cycle,
            "edges": [[list(e) for e in slot] for slot in self.edges],
        }

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> GraphSchedule:
        edges = tuple(tuple(_edge(i, j) for i, j in slot) for slot in doc["edges"])
        if len(edges) != doc["horizon"]:
            raise InvalidParams("schedule edge table does not match its horizon")
        return cls(
            n_nodes=int(doc["n_nodes"]),
            horizon=int(doc["horizon"]),
            edges=edges,
            q_window=int(doc["q_window"]),
            kind=kind_from_dict(doc["kind"]),
            seed=int(doc["seed"]),
            cycle=bool(doc.get("cycle", True)),
        )


@dataclass(frozen=True, eq=False)
class MixingMatrix:
    """W(k) and the smallest weight it actually uses."""

    weights: np.ndarray
    epsilon: float


@dataclass
class ValidationReport:
    """Outcome of the mixing-matrix checks."""

    edges_ok: bool
    diagonal_ok: bool
    stochastic_ok: bool
    epsilon_feasible: float
    stochastic_error: float
    failures: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.edges_ok and self.diagonal_ok and self.stochastic_ok

    def to_dict(self) -> dict[str, Any]:
        return {
            "passed": self.passed,
            "edges_ok": self.edges_ok,
            "diagonal_ok": self.diagonal_ok,
            "stochastic_ok": self.stochastic_ok,
            "epsilon_feasible": self.epsilon_feasible,
            "stochastic_error": self.stochastic_error,
            "failures": list(self.failures),
        }


@dataclass(frozen=True)
class DecayCertificate:
    """Geometric decay constants of the transition matrices and the observed norms."""

    theta: float
    rho: float
    epsilon: float
    q_window: int
    observed: tuple[tuple[int, int, float], ...]

    @property
    def violations(self) -> list[tuple[int, int, float]]:
        return [(k, s, v) for k, s, v in self.observed if v > self.theta * self.rho ** (k - s)]

    @property
    def valid(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict[str, Any]:
        return {
            "theta": self.theta,
            "rho": self.rho,
            "epsilon": self.epsilon,
            "q_window": self.q_window,
            "valid": self.valid,
            "observed": [list(o) for o in self.observed],
            "violations": [list(v) for v in self.violations],
        }


def _edge(i: int, j: int) -> Edge:
    i, j = int(i), int(j)
    if i == j:
        raise InvalidParams(f"self-loop at node {i}")
    return (i, j) if i < j else (j, i)


def _edge_tuple(edges: Iterable[tuple[int, int]]) -> tuple[Edge, ...]:
    return tuple(sorted({_edge(i, j) for i, j in edges}))


def _draw_small_world(kind: SmallWorld, n: int, seed: int, k: int) -> nx.Graph:
    try:
        return nx.connected_watts_strogatz_graph(
            n, kind.neighbors, kind.rewire, tries=1000, seed=_rng.int_seed(seed, f"small-world/{k}")
        )
    except nx.NetworkXError as exc:
        raise InvalidParams(f"could not draw a connected small-world graph: {exc}") from exc


def _draw_erdos_renyi(kind: ErdosRenyiConnected, n: int, seed: int, k: int) -> nx.Graph:
    for attempt in range(1000):
        g = nx.gnp_random_graph(n, kind.p, seed=_rng.int_seed(seed, f"erdos-renyi/{k}/{attempt}"))
        if nx.is_connected(g):
            return g
    raise InvalidParams(f"no connected G({n}, {kind.p}) draw in 1000 attempts")


def generate_schedule(
    kind: ScheduleKind,
    n_nodes: int,
    horizon: int,
    seed: int,
    cycle: bool = True,
) -> GraphSchedule:
    """Materializes a graph schedule.

    Args:
        kind: Graph family.
        n_nodes: Number of agents N (at least 2).
        horizon: Number of distinct slots to generate.
        seed: Non-negative seed; slot k uses its own random stream.
        cycle: Reuse the slots periodically past the horizon.

    Returns:
        The schedule, with ``q_window`` 1 for per-slot connected families and
        ``q`` for ``RingSplit``.

    Raises:
        InvalidParams: On inconsistent parameters.
    """
    if n_nodes < 2:
        raise InvalidParams("a network needs at least two nodes")
    if horizon < 1:
        raise InvalidParams("horizon must be at least 1")
    q_window = 1
    if n_nodes == 2:
        slots = [((0, 1),)] * horizon
    elif isinstance(kind, SmallWorld):
        if kind.neighbors < 2 or kind.neighbors % 2 or kind.neighbors >= n_nodes:
            raise InvalidParams("small-world neighbor count must be even, >= 2 and < N")
        if not 0.0 <= kind.rewire <= 1.0:
            raise InvalidParams("rewiring probability must lie in [0, 1]")
        slots = [_edge_tuple(_draw_small_world(kind, n_nodes, seed, k).edges()) for k in range(horizon)]
    elif isinstance(kind, RingSplit):
        if not 1 <= kind.q <= n_nodes:
            raise InvalidParams("ring split count q must lie in [1, N]")
        ring = [(i, (i + 1) % n_nodes) for i in range(n_nodes)]
        parts = [_edge_tuple(e for idx, e in enumerate(ring) if idx % kind.q == t) for t in range(kind.q)]
        slots = [parts[k % kind.q] for k in range(horizon)]
        q_window = kind.q
    elif isinstance(kind, ErdosRenyiConnected):
        if not 0.0 < kind.p <= 1.0:
            raise InvalidParams("edge probability must lie in (0, 1]")
        slots = [_edge_tuple(_draw_erdos_renyi(kind, n_nodes, seed, k).edges()) for k in range(horizon)]
    elif isinstance(kind, Complete):
        slots = [_edge_tuple(nx.complete_graph(n_nodes).edges())] * horizon
    else:
        raise InvalidParams(f"unknown schedule kind: {kind!r}")
    logger.debug("generated %s schedule N=%d horizon=%d", type(kind).__name__, n_nodes, horizon)
    return GraphSchedule(n_nodes, horizon, tuple(slots), q_window, kind, int(seed), cycle)


def metropolis_weights(
    graph: nx.Graph,
    variant: MixingVariant = MixingVariant.SAFE_DIAGONAL,
) -> MixingMatrix:
    """Metropolis mixing matrix of an undirected graph on nodes 0..N-1."""
    nodes = sorted(graph.nodes())
    adjacency = nx.to_numpy_array(graph, nodelist=nodes, weight=None)
    np.fill_diagonal(adjacency, 0.0)
    degree = adjacency.sum(axis=1)
    shift = 1.0 if MixingVariant(variant) is MixingVariant.SAFE_DIAGONAL else 0.0
    pair_max = np.maximum.outer(degree, degree) + shift
    W = np.where(adjacency > 0, 1.0 / np.where(pair_max > 0, pair_max, 1.0), 0.0)
    np.fill_diagonal(W, 1.0 - W.sum(axis=1))
    used = np.concatenate([W[adjacency > 0], np.diag(W)])
    return MixingMatrix(W, float(used.min()))


def verify_mixing(W: np.ndarray, graph: nx.Graph, epsilon: float) -> ValidationReport:
    """Checks edge utilization, positive diagonal and double stochasticity."""
    W = np.asarray(W, dtype=float)
    n = W.shape[0]
    adjacency = nx.to_numpy_array(graph, nodelist=range(n), weight=None) > 0
    np.fill_diagonal(adjacency, False)
    failures: list[str] = []

    off_graph = ~adjacency & ~np.eye(n, dtype=bool)
    edges_ok = True
    if np.any(W[off_graph] != 0):
        edges_ok = False
        failures.append("nonzero weight outside the edge set")
    if adjacency.any() and W[adjacency].min() < epsilon:
        edges_ok = False
        failures.append(f"edge weight {W[adjacency].min():.6g} below epsilon {epsilon:.6g}")

    diagonal = np.diag(W)
    diagonal_ok = bool(diagonal.min() >= epsilon and diagonal.min() > 0)
    if not diagonal_ok:
        failures.append(f"diagonal weight {diagonal.min():.6g} below epsilon {epsilon:.6g}")

    error = float(max(np.abs(W.sum(axis=0) - 1).max(), np.abs(W.sum(axis=1) - 1).max()))
    stochastic_ok = error <= STOCHASTIC_TOL and bool(np.all(W >= 0))
    if not stochastic_ok:
        failures.append(f"not doubly stochastic (error {error:.3e})")

    used = np.concatenate([W[adjacency], diagonal])
    return ValidationReport(edges_ok, diagonal_ok, stochastic_ok, float(used.min()), error, failures)


class MixingSequence:
    """W(k) for a schedule, cached per slot.

    The cache is shared between threads and guarded by a lock.
    """

    def __init__(self, schedule: GraphSchedule, variant: MixingVariant = MixingVariant.SAFE_DIAGONAL) -> None:
        self.schedule = schedule
        self.variant = MixingVariant(variant)
        self._lock = RLock()
        self._cache: dict[int, MixingMatrix] = {}

    def mixing(self, k: int) -> MixingMatrix:
        slot = self.schedule.slot(k)
        with self._lock:
            cached = self._cache.get(slot)
            if cached is None:
                cached = metropolis_weights(self.schedule.graph(slot), self.variant)
                self._cache[slot] = cached
            return cached

    def matrix(self, k: int) -> np.ndarray:
        return self.mixing(k).weights

    def __call__(self, k: int) -> np.ndarray:
        return self.matrix(k)


def transition_matrix(schedule: GraphSchedule, variant: MixingVariant, k: int, s: int) -> np.ndarray:
    """Psi(k, s) = W(k) W(k-1) ... W(s).

    Raises:
        RangeError: Unless 0 <= s <= k, and k lies inside a non-cycling horizon.
    """
    if s < 0 or s > k:
        raise RangeError(f"need 0 <= s <= k, got s={s}, k={k}")
    if not schedule.cycle and k >= schedule.horizon:
        raise RangeError(f"k={k} is past the schedule horizon {schedule.horizon}")
    return _product(MixingSequence(schedule, variant), k, s)


def _product(sequence: MixingSequence, k: int, s: int) -> np.ndarray:
    psi = sequence.matrix(s).copy()
    for t in range(s + 1, k + 1):
        psi = sequence.matrix(t) @ psi
    return psi


def union_disconnected_windows(schedule: GraphSchedule, q: int) -> list[int]:
    """Window starts k whose union graph over [k, k+q-1] is not connected."""
    bad = []
    for start in range(0, max(schedule.horizon - q, 0) + 1):
        union = nx.Graph()
        union.add_nodes_from(range(schedule.n_nodes))
        for t in range(start, start + q):
            union.add_edges_from(schedule.edges_at(t))
        if not nx.is_connected(union):
            bad.append(start)
    return bad


def decay_constants(n_nodes: int, epsilon: float, q: int) -> tuple[float, float]:
    """(theta, rho) of the geometric decay bound on Psi(k, s) - 11'/N."""
    base = 1.0 - epsilon / (4.0 * n_nodes**2)
    return n_nodes * base**-2, base ** (1.0 / q)


def certify_decay(
    schedule: GraphSchedule,
    variant: MixingVariant = MixingVariant.SAFE_DIAGONAL,
    epsilon: float | None = None,
    q: int | None = None,
    sample_pairs: int | Sequence[tuple[int, int]] = 100,
    seed: int = 0,
) -> DecayCertificate:
    """Checks the hypotheses of the decay bound and samples it.

    Args:
        schedule: Graph schedule.
        variant: Weight rule.
        epsilon: Claimed weight floor; defaults to the smallest weight used anywhere.
        q: Claimed connectivity window; defaults to the schedule's own.
        sample_pairs: Number of random (k, s) pairs, or explicit pairs.
        seed: Seed for the pair sampler.

    Raises:
        AssumptionViolated: If some W(k) fails its checks or some window union
            is disconnected, in which case the bound is not guaranteed.
    """
    sequence = MixingSequence(schedule, variant)
    q = schedule.q_window if q is None else q
    floor = min(sequence.mixing(k).epsilon for k in range(schedule.horizon))
    epsilon = floor if epsilon is None else epsilon
    if epsilon <= 0:
        raise AssumptionViolated(f"mixing weights have no positive floor (smallest used weight {floor:.3g})")
    for k in range(schedule.horizon):
        report = verify_mixing(sequence.matrix(k), schedule.graph(k), epsilon)
        if not report.passed:
            raise AssumptionViolated(f"W({k}) fails: {'; '.join(report.failures)}")
    disconnected = union_disconnected_windows(schedule, q)
    if disconnected:
        raise AssumptionViolated(f"union graph over a {q}-window starting at k={disconnected[0]} is disconnected")

    theta, rho = decay_constants(schedule.n_nodes, epsilon, q)
    if isinstance(sample_pairs, int):
        rng = _rng.stream(seed, "decay-pairs")
        pairs = []
        for _ in range(sample_pairs):
            k, s = sorted(int(v) for v in rng.integers(0, schedule.horizon, size=2))[::-1]
            pairs.append((k, s))
    else:
        pairs = [(int(k), int(s)) for k, s in sample_pairs]
    J = np.full((schedule.n_nodes, schedule.n_nodes), 1.0 / schedule.n_nodes)
    observed = []
    for k, s in pairs:
        if s < 0 or s > k:
            raise RangeError(f"need 0 <= s <= k, got s={s}, k={k}")
        gap = float(np.linalg.norm(_product(sequence, k, s) - J, 2))
        observed.append((k, s, gap))
    certificate = DecayCertificate(theta, rho, float(epsilon), q, tuple(observed))
    logger.info(
        "decay certificate theta=%.6g rho=%.8f over %d pairs: %s",
        theta,
        rho,
        len(observed),
        "valid" if certificate.valid else f"{len(certificate.violations)} violations",
    )
    return certificate
