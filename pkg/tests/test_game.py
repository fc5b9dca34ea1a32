"""Test the game model: generator, pseudo-gradients, constants and serialization."""

import numpy as np
import pytest

from gneagg.errors import DimensionMismatch, InfeasibleInstance, InvalidBox, InvalidParams
from gneagg.game import (
    AgentSpec,
    Box,
    CournotParams,
    GameInstance,
    agent_cost,
    build_cournot,
    constants,
    coupling_violation,
    extended_pseudo_gradient,
    game_from_dict,
    game_to_dict,
    instance_hash,
    pseudo_gradient,
    pseudo_gradient_matrix,
)


class TestCournotGenerator:
    """Test the randomized Nash-Cournot generator."""

    def test_dimensions(self, small_game: GameInstance) -> None:
        """Test that production and sales give n = 2m and a 2m-row coupling."""
        assert small_game.n_agents == 4
        assert small_game.decision_dim == 4
        assert small_game.coupling_dim == 4
        assert small_game.slater_point.shape == (16,)

    def test_same_seed_same_instance(self, small_params: CournotParams) -> None:
        """Test that a seed fully determines the instance."""
        first = build_cournot(small_params, seed=7)
        second = build_cournot(small_params, seed=7)
        assert instance_hash(first) == instance_hash(second)

    def test_different_seeds_differ(self, small_params: CournotParams) -> None:
        """Test that different seeds draw different coefficients."""
        assert instance_hash(build_cournot(small_params, 1)) != instance_hash(build_cournot(small_params, 2))

    def test_slater_point_strictly_feasible(self, small_game: GameInstance) -> None:
        """Test that the attached point has slack in every coupling row."""
        assert np.all(coupling_violation(small_game, small_game.slater_point) < 0)
        rows = small_game.rows(small_game.slater_point)
        for i, local_set in enumerate(small_game.local_sets):
            assert local_set.contains(rows[i], tol=0.0)

    def test_unmeetable_demand(self) -> None:
        """Test that demand above total capacity is rejected."""
        params = CournotParams(
            n_agents=1,
            n_markets=1,
            u_range=(50.0, 50.0),
            d_range=(90.0, 90.0),
            r_range=(120.0, 120.0),
        )
        with pytest.raises(InfeasibleInstance, match="market 0"):
            build_cournot(params, seed=0)

    def test_invalid_ranges(self) -> None:
        """Test that non-positive quadratic coefficients are rejected."""
        with pytest.raises(InvalidParams, match="a_range"):
            build_cournot(CournotParams(a_range=(0.0, 1.0)), seed=0)

    def test_reversed_range(self) -> None:
        """Test that an interval with low > high is rejected."""
        with pytest.raises(InvalidParams, match="b_range"):
            CournotParams(b_range=(5.0, 1.0)).validate()

    def test_params_from_dict_rejects_unknown(self) -> None:
        """Test that unknown generator parameters are reported."""
        with pytest.raises(InvalidParams, match="unknown Cournot parameters"):
            CournotParams.from_dict({"n_agents": 3, "elasticity": 2})


class TestPseudoGradient:
    """Test F and the extended pseudo-gradient on the hand-solvable game."""

    def test_pseudo_gradient_value(self, toy_game: GameInstance) -> None:
        """Test F(1, 1) = (9, -88)."""
        np.testing.assert_allclose(pseudo_gradient(toy_game, np.array([1.0, 1.0])), [9.0, -88.0])

    def test_extended_pseudo_gradient_value(self, toy_game: GameInstance) -> None:
        """Test F(v, w) with v = (1, 1) and aggregate estimate w = (0, 3)."""
        value = extended_pseudo_gradient(toy_game, np.array([1.0, 1.0]), np.array([0.0, 3.0]))
        np.testing.assert_allclose(value, [9.0, -86.0])

    def test_extended_matches_exact_average(self, small_game: GameInstance) -> None:
        """Test that F(x, 1 (x) xbar) equals F(x)."""
        rng = np.random.default_rng(0)
        x = rng.uniform(0.0, 50.0, size=16)
        xbar = small_game.rows(x).mean(axis=0)
        w = np.tile(xbar, small_game.n_agents)
        np.testing.assert_allclose(extended_pseudo_gradient(small_game, x, w), pseudo_gradient(small_game, x))

    def test_affine_form(self, small_game: GameInstance) -> None:
        """Test that F(x) = P x + b."""
        rng = np.random.default_rng(1)
        x = rng.uniform(0.0, 50.0, size=16)
        P = pseudo_gradient_matrix(small_game)
        b = pseudo_gradient(small_game, np.zeros(16))
        np.testing.assert_allclose(pseudo_gradient(small_game, x), P @ x + b, rtol=1e-12, atol=1e-9)

    def test_wrong_length(self, toy_game: GameInstance) -> None:
        """Test that a vector of the wrong length is rejected."""
        with pytest.raises(DimensionMismatch, match="must have length"):
            pseudo_gradient(toy_game, np.ones(3))

    def test_agent_cost(self, toy_game: GameInstance) -> None:
        """Test the toy cost 2g^2 + 5g - 90s + s^2 at the solution."""
        x = np.array([90.0, 90.0])
        assert agent_cost(toy_game, 0, x, x) == pytest.approx(16650.0)

    def test_coupling_violation(self, toy_game: GameInstance) -> None:
        """Test Cx - c on the sales variable."""
        np.testing.assert_allclose(coupling_violation(toy_game, np.array([90.0, 90.0])), [-30.0, 0.0])


class TestConstants:
    """Test the step-size constants."""

    def test_toy_constants(self, toy_game: GameInstance) -> None:
        """Test P = diag(4, 2) and the constants derived from it."""
        np.testing.assert_allclose(pseudo_gradient_matrix(toy_game), np.diag([4.0, 2.0]))
        gc = constants(toy_game)
        assert gc.p_norm == pytest.approx(4.0, rel=1e-8)
        assert gc.coco == pytest.approx(0.25, rel=1e-8)
        assert gc.delta == pytest.approx(0.25, rel=1e-8)
        assert gc.tau_min == pytest.approx(2.0, rel=1e-8)
        assert gc.lip_epg == pytest.approx(4.0, rel=1e-8)
        assert gc.strong_mono == pytest.approx(2.0)
        assert gc.coupling_norms == pytest.approx((np.sqrt(2.0),))

    def test_delta_capped_at_one(self) -> None:
        """Test that delta never exceeds one, even for a weakly coupled game."""
        agent = AgentSpec(
            quad_matrix=np.array([[0.1]]),
            lin_vector=np.array([0.0]),
            local_set=Box(np.array([-1.0]), np.array([1.0])),
            coupling_block=np.array([[1.0]]),
            coupling_offset=np.array([1.0]),
        )
        game = GameInstance(agents=(agent,), agg_coupling=np.zeros((1, 1)), slater_point=np.array([0.0]))
        gc = constants(game)
        assert gc.coco == pytest.approx(5.0, rel=1e-8)
        assert gc.delta == 1.0
        assert gc.tau_min == 0.5


class TestSerialization:
    """Test instance documents and hashes."""

    def test_round_trip_preserves_hash(self, small_game: GameInstance) -> None:
        """Test that an instance document rebuilds the same game."""
        rebuilt = game_from_dict(game_to_dict(small_game))
        assert instance_hash(rebuilt) == instance_hash(small_game)
        np.testing.assert_array_equal(rebuilt.coupling, small_game.coupling)

    def test_unsupported_version(self, small_game: GameInstance) -> None:
        """Test that an unknown schema version is rejected."""
        doc = game_to_dict(small_game)
        doc["version"] = 99
        with pytest.raises(InvalidParams, match="schema version"):
            game_from_dict(doc)


class TestLocalSets:
    """Test local-set validation."""

    def test_box_rejects_inverted_bounds(self) -> None:
        """Test that lower > upper is rejected."""
        with pytest.raises(InvalidBox, match="exceeds"):
            Box(np.array([1.0, 0.0]), np.array([0.0, 1.0]))

    def test_slater_point_outside_local_set(self) -> None:
        """Test that a game refuses a strictly feasible point outside its local set."""
        agent = AgentSpec(
            quad_matrix=np.eye(1),
            lin_vector=np.zeros(1),
            local_set=Box(np.array([0.0]), np.array([1.0])),
            coupling_block=np.array([[1.0]]),
            coupling_offset=np.array([5.0]),
        )
        with pytest.raises(InfeasibleInstance, match="outside the local set"):
            GameInstance(agents=(agent,), agg_coupling=np.zeros((1, 1)), slater_point=np.array([2.0]))

    def test_row_form(self, toy_game: GameInstance) -> None:
        """Test the box rows and the sales-below-production row of the single firm."""
        rows, rhs = toy_game.local_sets[0].halfspaces()
        np.testing.assert_array_equal(rows[-1], [-1.0, 1.0])
        assert rows.shape == (5, 2)
        np.testing.assert_array_equal(rhs, [0.0, 0.0, 100.0, 100.0, 0.0])
        for point, inside in (([90.0, 90.0], True), ([90.0, 95.0], False), ([101.0, 50.0], False)):
            assert bool(np.all(rows @ np.array(point) <= rhs)) is inside
            assert toy_game.local_sets[0].contains(np.array(point)) is inside
