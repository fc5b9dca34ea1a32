"""Test the projection routines."""

import numpy as np
import pytest

from gneagg.errors import InfeasibleSet, InvalidBox, MaxIterExceeded, ProjectionFailure
from gneagg.game import Box, BoxHalfspace, GameInstance, Polyhedron
from gneagg.projection import (
    ProjectionProblem,
    StackedProjector,
    project,
    project_box,
    project_box_halfspace,
    project_box_halfspace_rows,
    project_nonneg,
    project_polyhedron,
)


class TestBoxProjection:
    """Test projections onto boxes and the orthant."""

    def test_clamps(self) -> None:
        """Test that each coordinate is clamped independently."""
        result = project_box(np.array([-1.0, 5.0, 0.5]), np.zeros(3), np.ones(3))
        np.testing.assert_array_equal(result, [0.0, 1.0, 0.5])

    def test_empty_box(self) -> None:
        """Test that lower > upper raises InvalidBox."""
        with pytest.raises(InvalidBox, match="exceeds"):
            project_box(np.zeros(2), np.array([0.0, 2.0]), np.array([1.0, 1.0]))

    def test_nonneg(self) -> None:
        """Test the orthant projection."""
        np.testing.assert_array_equal(project_nonneg(np.array([-3.0, 0.0, 2.0])), [0.0, 0.0, 2.0])

    def test_idempotent(self) -> None:
        """Test that projecting twice changes nothing."""
        rng = np.random.default_rng(0)
        y = rng.normal(size=5) * 3
        once = project_box(y, -np.ones(5), np.ones(5))
        np.testing.assert_array_equal(project_box(once, -np.ones(5), np.ones(5)), once)


class TestBoxHalfspaceProjection:
    """Test the exact box-halfspace projection."""

    def test_inside_point_unchanged(self) -> None:
        """Test that a feasible point is returned as is."""
        y = np.array([1.0, 1.0])
        np.testing.assert_array_equal(project_box_halfspace(y, np.zeros(2), np.full(2, 10.0), np.ones(2), 4.0), y)

    def test_symmetric_cut(self) -> None:
        """Test (5, 5) onto x1 + x2 <= 4 inside [0, 10]^2."""
        result = project_box_halfspace(np.array([5.0, 5.0]), np.zeros(2), np.full(2, 10.0), np.ones(2), 4.0)
        np.testing.assert_allclose(result, [2.0, 2.0], atol=1e-9)

    def test_active_bound(self) -> None:
        """Test a projection where one box bound stays active."""
        result = project_box_halfspace(np.array([10.0, 0.0]), np.zeros(2), np.full(2, 10.0), np.ones(2), 4.0)
        np.testing.assert_allclose(result, [4.0, 0.0], atol=1e-9)

    def test_sales_below_production(self) -> None:
        """Test the Cournot local set: sales exceeding production meet in the middle."""
        result = project_box_halfspace(
            np.array([50.0, 80.0]), np.zeros(2), np.full(2, 100.0), np.array([-1.0, 1.0]), 0.0
        )
        np.testing.assert_allclose(result, [65.0, 65.0], atol=1e-9)

    def test_infeasible(self) -> None:
        """Test that an empty intersection raises InfeasibleSet."""
        with pytest.raises(InfeasibleSet):
            project_box_halfspace(np.zeros(2), np.ones(2), np.full(2, 2.0), np.ones(2), 1.0)

    def test_rows_match_scalar_routine(self) -> None:
        """Test that the vectorized row routine agrees with the scalar one."""
        rng = np.random.default_rng(4)
        R, n = 12, 4
        lower = np.zeros((R, n))
        upper = rng.uniform(5.0, 20.0, size=(R, n))
        normal = np.tile(np.array([-1.0, -1.0, 1.0, 1.0]), (R, 1))
        offset = np.zeros(R)
        Y = rng.uniform(-10.0, 30.0, size=(R, n))
        rows = project_box_halfspace_rows(Y, lower, upper, normal, offset)
        for r in range(R):
            expected = project_box_halfspace(Y[r], lower[r], upper[r], normal[r], offset[r])
            np.testing.assert_allclose(rows[r], expected, atol=1e-8)

    def test_projection_is_optimal(self) -> None:
        """Test the variational inequality (y - Px)'(z - Px) <= 0 against feasible points."""
        rng = np.random.default_rng(5)
        lower, upper = np.zeros(4), np.full(4, 10.0)
        normal = np.array([-1.0, -1.0, 1.0, 1.0])
        y = rng.uniform(-5.0, 15.0, size=4)
        x = project_box_halfspace(y, lower, upper, normal, 0.0)
        for _ in range(50):
            z = rng.uniform(0.0, 10.0, size=4)
            if normal @ z > 0:
                continue
            assert (y - x) @ (z - x) <= 1e-7


class TestPolyhedronProjection:
    """Test Dykstra's algorithm."""

    def test_simplex_like_set(self) -> None:
        """Test (5, 5) onto {x >= 0, x1 + x2 <= 4}."""
        rows = np.array([[1.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])
        rhs = np.array([4.0, 0.0, 0.0])
        np.testing.assert_allclose(project_polyhedron(np.array([5.0, 5.0]), rows, rhs), [2.0, 2.0], atol=1e-8)

    def test_max_iter_exceeded_carries_best(self) -> None:
        """Test that a capped run reports its last iterate and residual."""
        rows = np.array([[1.0, 0.0], [0.0, 1.0]])
        with pytest.raises(MaxIterExceeded) as excinfo:
            project_polyhedron(np.array([5.0, 5.0]), rows, np.zeros(2), max_iter=1)
        assert excinfo.value.best is not None
        assert excinfo.value.residual > 0

    def test_dispatch(self) -> None:
        """Test that project() routes a Polyhedron to Dykstra."""
        poly = Polyhedron(
            rows=np.array([[1.0, 1.0], [-1.0, 0.0], [0.0, -1.0]]),
            rhs=np.array([4.0, 0.0, 0.0]),
            interior=np.array([1.0, 1.0]),
        )
        np.testing.assert_allclose(ProjectionProblem(np.array([5.0, 5.0]), poly).solve(), [2.0, 2.0], atol=1e-8)
        lower, upper = poly.bounding_box()
        np.testing.assert_allclose(lower, [0.0, 0.0], atol=1e-9)
        np.testing.assert_allclose(upper, [4.0, 4.0], atol=1e-9)

    def test_negative_tolerance(self) -> None:
        """Test that a negative tolerance is rejected."""
        with pytest.raises(ValueError, match="non-negative"):
            ProjectionProblem(np.zeros(1), Box(np.zeros(1), np.ones(1)), tol=-1.0)


class TestStackedProjector:
    """Test the product-set projector used by the algorithms."""

    def test_matches_per_agent_projection(self, small_game: GameInstance) -> None:
        """Test that the vectorized path equals the per-agent projections."""
        rng = np.random.default_rng(6)
        Y = rng.uniform(-50.0, 500.0, size=(small_game.n_agents, small_game.decision_dim))
        result = StackedProjector(small_game.local_sets)(Y)
        for i, local_set in enumerate(small_game.local_sets):
            np.testing.assert_allclose(result[i], project(local_set, Y[i]), atol=1e-8)
            assert local_set.contains(result[i], tol=1e-8)

    def test_mixed_sets_fall_back(self) -> None:
        """Test the per-agent loop for heterogeneous local sets."""
        box = Box(np.zeros(2), np.ones(2))
        halfspace = BoxHalfspace(np.zeros(2), np.full(2, 10.0), np.ones(2), 4.0, np.array([1.0, 1.0]))
        result = StackedProjector([box, halfspace])(np.array([[2.0, -1.0], [5.0, 5.0]]))
        np.testing.assert_allclose(result, [[1.0, 0.0], [2.0, 2.0]], atol=1e-9)

    def test_failure_is_wrapped(self) -> None:
        """Test that an empty per-agent set surfaces as ProjectionFailure."""
        poly = Polyhedron(rows=np.array([[0.0, 0.0], [1.0, 0.0]]), rhs=np.array([-1.0, 1.0]), interior=np.zeros(2))
        projector = StackedProjector([poly, Box(np.zeros(2), np.ones(2))])
        with pytest.raises(ProjectionFailure, match="zero row"):
            projector(np.array([[5.0, 5.0], [0.5, 0.5]]))
