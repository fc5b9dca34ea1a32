"""Euclidean projections onto boxes, orthants, box∩halfspace sets and polyhedra."""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleSet, InvalidBox, MaxIterExceeded, ProjectionFailure
from .game import Box, BoxHalfspace, LocalSet, Polyhedron

logger = logging.getLogger(__name__)

DYKSTRA_MAX_ITER = 10_000
DYKSTRA_TOL = 1e-10


def project_box(y: np.ndarray, lower: np.ndarray, upper: np.ndarray) -> np.ndarray:
    """Clamps ``y`` into ``[lower, upper]``.

    Raises:
        InvalidBox: If some lower bound exceeds its upper bound.
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if np.any(lower > upper):
        raise InvalidBox("box lower bound exceeds upper bound")
    return np.clip(np.asarray(y, dtype=float), lower, upper)


def project_nonneg(y: np.ndarray) -> np.ndarray:
    """Projection onto the nonnegative orthant."""
    return np.maximum(np.asarray(y, dtype=float), 0.0)


def _box_min(a: np.ndarray, lower: np.ndarray, upper: np.ndarray) -> float:
    return float(np.sum(np.where(a > 0, a * lower, a * upper)))


def project_box_halfspace(
    y: np.ndarray,
    lower: np.ndarray,
    upper: np.ndarray,
    a: np.ndarray,
    b_hs: float,
    tol: float = 1e-10,
) -> np.ndarray:
    """Projection onto ``{lower <= x <= upper, a @ x <= b_hs}`` by dual bisection.

    The projection is x(mu) = clamp(y - mu a) for the smallest mu >= 0 with
    a @ x(mu) <= b_hs. The scalar a @ x(mu) is nonincreasing and piecewise
    linear in mu, so bisection is followed by an exact solve on the final
    linear piece.

    Args:
        y: Point to project.
        lower: Box lower bound.
        upper: Box upper bound.
        a: Halfspace normal.
        b_hs: Halfspace offset.
        tol: Allowed halfspace violation of the result.

    Returns:
        The projected point.

    Raises:
        InvalidBox: If the box is empty.
        InfeasibleSet: If no box point satisfies the halfspace.
    """
    y = np.asarray(y, dtype=float)
    a = np.asarray(a, dtype=float)
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    x = project_box(y, lower, upper)
    if _box_min(a, lower, upper) > b_hs:
        raise InfeasibleSet("no point of the box satisfies the halfspace")
    if a @ x <= b_hs:
        return x

    def excess(mu: float) -> float:
        return float(a @ np.clip(y - mu * a, lower, upper)) - b_hs

    active = np.abs(a) > 0
    reach = (np.abs(y) + np.maximum(np.abs(lower), np.abs(upper)))[active] / np.abs(a[active])
    lo, hi = 0.0, float(reach.max()) + 1.0
    for _ in range(200):
        if excess(hi) <= 0:
            break
        hi *= 2.0
    width = 1e-12 * (1.0 + np.linalg.norm(y))
    while hi - lo > width:
        mid = 0.5 * (lo + hi)
        if excess(mid) > 0:
            lo = mid
        else:
            hi = mid

    # exact solve on the linear piece around the bracket
    mid = 0.5 * (lo + hi)
    shifted = y - mid * a
    free = (shifted > lower) & (shifted < upper) & active
    curvature = float(a[free] @ a[free])
    mu = hi
    if curvature > 0:
        clamped = np.clip(shifted, lower, upper)
        candidate = (float(a[free] @ y[free]) + float(a[~free] @ clamped[~free]) - b_hs) / curvature
        if lo - width <= candidate <= hi + width:
            mu = max(candidate, 0.0)
    x = np.clip(y - mu * a, lower, upper)
    if a @ x - b_hs > max(tol, 1e-12 * (1.0 + abs(b_hs))):
        x = np.clip(y - hi * a, lower, upper)
    return x


def project_box_halfspace_rows(
    Y: np.ndarray,
    lower: np.ndarray,
    upper: np.ndarray,
    normal: np.ndarray,
    offset: np.ndarray,
) -> np.ndarray:
    """Row-wise projection of many points onto their own box∩halfspace sets.

    Evaluates the piecewise-linear dual function at every breakpoint of every
    row at once and interpolates on the piece where it changes sign, so the
    result is exact up to rounding.

    Args:
        Y: Points, shape (R, n).
        lower: Box lower bounds, shape (R, n).
        upper: Box upper bounds, shape (R, n).
        normal: Halfspace normals, shape (R, n).
        offset: Halfspace offsets, shape (R,).

    Returns:
        Projected points, shape (R, n).

    Raises:
        InfeasibleSet: If some row's set is empty.
    """
    X = np.clip(Y, lower, upper)
    excess = np.einsum("rj,rj->r", normal, X) - offset
    rows = np.flatnonzero(excess > 0)
    if rows.size == 0:
        return X
    y, lo, up, a, b = Y[rows], lower[rows], upper[rows], normal[rows], offset[rows]
    safe = np.where(a != 0, a, 1.0)
    t_lower = np.where(a != 0, (y - lo) / safe, 0.0)
    t_upper = np.where(a != 0, (y - up) / safe, 0.0)
    T = np.concatenate([np.zeros((rows.size, 1)), t_lower, t_upper], axis=1)
    T = np.sort(np.maximum(T, 0.0), axis=1)
    clamped = np.clip(y[:, None, :] - T[:, :, None] * a[:, None, :], lo[:, None, :], up[:, None, :])
    phi = np.einsum("rkj,rj->rk", clamped, a) - b[:, None]
    reached = phi <= 0
    scale = 1e-12 * (1.0 + np.abs(b))
    if np.any(phi[:, -1] > scale):
        bad = int(rows[np.argmax(phi[:, -1] > scale)])
        raise InfeasibleSet(f"row {bad}: no point of the box satisfies the halfspace")
    idx = np.where(reached.any(axis=1), np.argmax(reached, axis=1), T.shape[1] - 1)
    idx = np.maximum(idx, 1)
    r = np.arange(rows.size)
    t0, t1 = T[r, idx - 1], T[r, idx]
    p0, p1 = phi[r, idx - 1], phi[r, idx]
    drop = p0 - p1
    mu = np.where(drop > 0, t0 + p0 * (t1 - t0) / np.where(drop > 0, drop, 1.0), t1)
    X[rows] = np.clip(y - mu[:, None] * a, lo, up)
    return X


def project_polyhedron(
    y: np.ndarray,
    rows: np.ndarray,
    rhs: np.ndarray,
    tol: float = DYKSTRA_TOL,
    max_iter: int = DYKSTRA_MAX_ITER,
) -> np.ndarray:
    """Projection onto ``{x : rows @ x <= rhs}`` by Dykstra's algorithm.

    Each sweep projects cyclically onto the halfspaces while carrying the
    correction increments. The increments are nonnegative multiples of the
    row normals, so they double as dual multipliers; the run stops once both
    the constraint violation and the complementarity gap are below ``tol``.

    Raises:
        MaxIterExceeded: With the last iterate and its certificate residual.
    """
    y = np.asarray(y, dtype=float)
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    rhs = np.asarray(rhs, dtype=float)
    norms = np.einsum("ij,ij->i", rows, rows)
    if np.any(norms == 0):
        if np.any(rhs[norms == 0] < 0):
            raise InfeasibleSet("a zero row has a negative right-hand side")
        keep = norms > 0
        rows, rhs, norms = rows[keep], rhs[keep], norms[keep]
    x = y.copy()
    increments = np.zeros_like(rows)
    residual = np.inf
    for _ in range(max_iter):
        previous = x.copy()
        for j in range(rows.shape[0]):
            z = x + increments[j]
            gap = rows[j] @ z - rhs[j]
            x = z - (max(gap, 0.0) / norms[j]) * rows[j]
            increments[j] = z - x
        multipliers = np.einsum("ij,ij->i", increments, rows) / norms
        slack = rhs - rows @ x
        violation = max(float(-slack.min()), 0.0)
        complementarity = float(np.max(np.abs(multipliers * slack)))
        residual = max(violation, complementarity, float(np.max(np.abs(x - previous))))
        if residual <= tol:
            return x
    raise MaxIterExceeded(
        f"Dykstra did not reach tol {tol:.1e} in {max_iter} sweeps (residual {residual:.3e})",
        best=x,
        residual=residual,
    )


@dataclass(frozen=True, eq=False)
class ProjectionProblem:
    """A point, a local set and a tolerance for the iterative variants."""

    point: np.ndarray
    set: LocalSet
    tol: float = DYKSTRA_TOL

    def __post_init__(self) -> None:
        if self.tol < 0:
            raise ValueError("tol must be non-negative")

    def solve(self) -> np.ndarray:
        return project(self.set, self.point, self.tol)


def project(local_set: LocalSet, y: np.ndarray, tol: float = DYKSTRA_TOL) -> np.ndarray:
    """Projects ``y`` onto any supported local set."""
    if isinstance(local_set, Box):
        return project_box(y, local_set.lower, local_set.upper)
    if isinstance(local_set, BoxHalfspace):
        return project_box_halfspace(y, local_set.lower, local_set.upper, local_set.normal, local_set.offset, tol)
    if isinstance(local_set, Polyhedron):
        return project_polyhedron(y, local_set.rows, local_set.rhs, tol)
    raise TypeError(f"unsupported local set: {type(local_set).__name__}")


class StackedProjector:
    """Projects (N, n) row arrays onto the product of the agents' local sets.

    Homogeneous Box or BoxHalfspace products are handled in one vectorized
    call; anything else falls back to a per-agent loop.
    """

    def __init__(self, local_sets: Sequence[LocalSet], tol: float = DYKSTRA_TOL) -> None:
        self._sets = tuple(local_sets)
        self._tol = tol
        kinds = {type(s) for s in self._sets}
        self._kind = kinds.pop() if len(kinds) == 1 else None
        if self._kind in (Box, BoxHalfspace):
            self._lower = np.stack([s.lower for s in self._sets])
            self._upper = np.stack([s.upper for s in self._sets])
        if self._kind is BoxHalfspace:
            self._normal = np.stack([s.normal for s in self._sets])
            self._offset = np.array([s.offset for s in self._sets])

    def __call__(self, Y: np.ndarray) -> np.ndarray:
        try:
            if self._kind is Box:
                return np.clip(Y, self._lower, self._upper)
            if self._kind is BoxHalfspace:
                return project_box_halfspace_rows(Y, self._lower, self._upper, self._normal, self._offset)
            return np.stack([project(s, Y[i], self._tol) for i, s in enumerate(self._sets)])
        except (InfeasibleSet, MaxIterExceeded) as exc:
            raise ProjectionFailure(str(exc)) from exc

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Stacked (N, n) enclosing boxes of the local sets."""
        boxes = [s.bounding_box() for s in self._sets]
        return np.stack([lo for lo, _ in boxes]), np.stack([hi for _, hi in boxes])
