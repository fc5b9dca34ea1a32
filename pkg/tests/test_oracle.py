"""Test reference solves, the dual bound and the equilibrium spot checks."""

import numpy as np
import pytest

from gneagg import oracle
from gneagg.errors import DimensionMismatch, NoConvergence, NotStrictlyFeasible
from gneagg.game import GameInstance, coupling_violation
from gneagg.oracle import (
    REFERENCE_KIND,
    ReferenceSolution,
    cached_reference,
    dual_bound,
    gne_spot_check,
    polish,
    solve_reference,
    start_at,
    vi_spot_check,
)
from gneagg.store import ResultStore


def candidate(x: np.ndarray, lam: np.ndarray) -> ReferenceSolution:
    return ReferenceSolution(x_star=x, lambda_star=lam, kkt_certificate=0.0, method="given", iterations=0)


class TestReferenceSolve:
    """Test the two-solver reference."""

    def test_toy_reference(self, toy_game: GameInstance, toy_solution) -> None:
        """Test that both solvers find the hand-computed solution."""
        x_star, lam_star = toy_solution
        solution = solve_reference(toy_game, tol=1e-9)
        np.testing.assert_allclose(solution.x_star, x_star, atol=1e-5)
        np.testing.assert_allclose(solution.lambda_star, lam_star, atol=1e-4)
        assert solution.kkt_certificate <= 1e-9
        assert solution.unique
        assert solution.agreement <= 1e-6
        assert solution.method == "semi-decentralized+extragradient"

    def test_without_cross_check(self, toy_game: GameInstance) -> None:
        """Test that skipping the cross-check leaves the agreement unset."""
        solution = solve_reference(toy_game, tol=1e-9, cross_check=False)
        assert np.isnan(solution.agreement)
        assert solution.to_dict()["agreement"] is None

    def test_budget_exhausted(self, small_game: GameInstance) -> None:
        """Test NoConvergence with the best iterate attached."""
        with pytest.raises(NoConvergence, match="semi-decentralized solve stopped") as excinfo:
            solve_reference(small_game, max_iter=3)
        x_best, lam_best = excinfo.value.best
        assert x_best.shape == (16,)
        assert lam_best.shape == (4,)
        assert excinfo.value.residual > 0

    def test_polish_recovers_toy_solution(self, toy_game: GameInstance, toy_solution) -> None:
        """Test that the active-set solve lands on x* and lambda* from a nearby point."""
        x_star, lam_star = toy_solution
        x, lam, residual = polish(toy_game, x_star + 1e-9)
        np.testing.assert_allclose(x, x_star, atol=1e-9)
        np.testing.assert_allclose(lam, lam_star, atol=1e-6)
        assert residual <= 1e-9

    def test_polished_reference(self, small_game: GameInstance) -> None:
        """Test that polishing beats the stopping residual and stays next to the unpolished point."""
        polished = solve_reference(small_game, tol=1e-9, cross_check=False)
        raw = solve_reference(small_game, tol=1e-9, cross_check=False, polish_active=False)
        assert polished.details["polished"] is True
        assert raw.details["polished"] is False
        assert polished.kkt_certificate < raw.kkt_certificate
        assert polished.kkt_certificate <= 1e-10
        np.testing.assert_allclose(polished.x_star, raw.x_star, atol=1e-6)

    def test_document_round_trip(self, toy_game: GameInstance) -> None:
        """Test that a stored reference reloads with its certificate."""
        solution = solve_reference(toy_game, tol=1e-9, cross_check=False)
        reloaded = ReferenceSolution.from_dict(solution.to_dict())
        np.testing.assert_array_equal(reloaded.x_star, solution.x_star)
        assert reloaded.kkt_certificate == solution.kkt_certificate
        assert reloaded.instance_hash == solution.instance_hash

    def test_cached_reference(
        self, toy_game: GameInstance, memory_store: ResultStore, monkeypatch: pytest.MonkeyPatch
    ) -> None:
        """Test that the second request is served from the store."""
        calls = []
        original = oracle.solve_reference

        def counting(game, **kwargs):
            calls.append(kwargs)
            return original(game, **kwargs)

        monkeypatch.setattr(oracle, "solve_reference", counting)
        first = cached_reference(toy_game, memory_store, tol=1e-9, cross_check=False)
        second = cached_reference(toy_game, memory_store, tol=1e-9, cross_check=False)
        assert len(calls) == 1
        assert memory_store.count({"kind": REFERENCE_KIND}) == 1
        np.testing.assert_allclose(second.x_star, first.x_star)

    def test_start_at(self, small_game: GameInstance) -> None:
        """Test iterate states built from a reference."""
        solution = candidate(np.arange(16.0), np.ones(4))
        assert start_at(solution, small_game).lam.shape == (4,)
        per_agent = start_at(solution, small_game, per_agent=True)
        assert per_agent.lam.shape == (4, 4)
        assert per_agent.x.shape == (4, 4)


class TestDualBound:
    """Test the Slater-type multiplier bound."""

    def test_bounds_toy_multiplier(self, toy_game: GameInstance, toy_solution) -> None:
        """Test that the bound covers lambda* = (0, 455) and adds the slack r."""
        _, lam_star = toy_solution
        bound = dual_bound(toy_game)
        assert bound >= lam_star.max()
        assert dual_bound(toy_game, r=7.0) == pytest.approx(bound + 7.0)

    def test_scales_with_inverse_margin(self, toy_game: GameInstance) -> None:
        """Test that a tenth of the coupling margin gives ten times the bound."""
        slater = np.array([97.5, 95.0])
        shrunk = 0.1 * slater + 0.9 * np.array([95.0, 90.0])
        np.testing.assert_allclose(shrunk, [95.25, 90.5])
        assert dual_bound(toy_game, shrunk) / dual_bound(toy_game, slater) == pytest.approx(10.0)

    def test_requires_strict_feasibility(self, toy_game: GameInstance) -> None:
        """Test points on the coupling boundary, outside the local set and of the wrong size."""
        with pytest.raises(NotStrictlyFeasible, match="not positive"):
            dual_bound(toy_game, np.array([90.0, 90.0]))
        with pytest.raises(NotStrictlyFeasible, match="local set"):
            dual_bound(toy_game, np.array([10.0, 50.0]))
        with pytest.raises(DimensionMismatch):
            dual_bound(toy_game, np.zeros(3))


class TestSpotChecks:
    """Test the randomized equilibrium checks."""

    def test_solution_passes(self, toy_game: GameInstance, toy_solution) -> None:
        """Test both checks at the hand-computed solution."""
        solution = candidate(*toy_solution)
        gne = gne_spot_check(toy_game, solution, samples=200, seed=1)
        vi = vi_spot_check(toy_game, solution, samples=200, seed=1)
        assert gne.passed, gne.to_dict()
        assert vi.passed, vi.to_dict()
        assert gne.samples == vi.samples == 200

    def test_deviations_leave_an_active_coupling_row(self, toy_game: GameInstance, toy_solution) -> None:
        """Test that deviations move away from x* although the demand row is tight there."""
        x_star, lam_star = toy_solution
        assert coupling_violation(toy_game, x_star)[1] == 0.0
        gne = gne_spot_check(toy_game, candidate(x_star, lam_star), samples=50, seed=4)
        assert gne.passed
        assert gne.max_move > 1.0
        assert gne.worst <= 1e-8
        assert gne.to_dict()["max_move"] == gne.max_move

    def test_deviations_stay_feasible(self, toy_game: GameInstance, toy_solution) -> None:
        """Test that every sampled deviation of the single firm meets both coupling rows."""
        x_star, _ = toy_solution
        X = toy_game.rows(x_star)
        rows, rhs = oracle._restricted_set(toy_game, X, 0)
        anchor = oracle._interior_point(rows, rhs, X[0])
        assert np.all(rows @ anchor < rhs)
        rng = np.random.default_rng(5)
        for _ in range(20):
            target = rng.uniform(0.0, 150.0, size=2)
            t = oracle._largest_feasible_step(rows @ (target - anchor), rhs - rows @ anchor)
            z = anchor + t * (target - anchor)
            assert np.all(coupling_violation(toy_game, z) <= 1e-9)

    def test_gain_threshold_is_absolute(self, toy_game: GameInstance, toy_solution) -> None:
        """Test that the largest sampled gain is compared with tol itself, not with tol scaled by the cost."""
        _, lam_star = toy_solution
        wrong = candidate(np.array([95.0, 95.0]), lam_star)
        worst = gne_spot_check(toy_game, wrong, samples=50, seed=3, tol=np.inf).worst
        assert worst > 0
        assert gne_spot_check(toy_game, wrong, samples=50, seed=3, tol=worst * (1 - 1e-9)).violations >= 1
        assert gne_spot_check(toy_game, wrong, samples=50, seed=3, tol=worst).passed

    def test_vi_threshold_is_absolute(self, toy_game: GameInstance, toy_solution) -> None:
        """Test that the most negative sampled inner product is compared with -tol itself."""
        _, lam_star = toy_solution
        wrong = candidate(np.array([95.0, 95.0]), lam_star)
        worst = vi_spot_check(toy_game, wrong, samples=50, seed=3, tol=np.inf).worst
        assert worst < 0
        assert vi_spot_check(toy_game, wrong, samples=50, seed=3, tol=-worst * (1 - 1e-9)).violations >= 1
        assert vi_spot_check(toy_game, wrong, samples=50, seed=3, tol=-worst).passed

    def test_wrong_point_fails(self, toy_game: GameInstance, toy_solution) -> None:
        """Test that overproduction at (95, 95) admits profitable deviations."""
        _, lam_star = toy_solution
        wrong = candidate(np.array([95.0, 95.0]), lam_star)
        gne = gne_spot_check(toy_game, wrong, samples=200, seed=2)
        vi = vi_spot_check(toy_game, wrong, samples=200, seed=2)
        assert not gne.passed
        assert gne.worst > 0
        assert not vi.passed
        assert vi.to_dict()["passed"] is False

    def test_small_game_reference_passes(self, small_game: GameInstance) -> None:
        """Test the spot checks at a solved randomized game."""
        solution = solve_reference(small_game, tol=1e-9, cross_check=False)
        gne = gne_spot_check(small_game, solution, samples=100)
        assert gne.passed, gne.to_dict()
        assert gne.max_move > 0
        assert vi_spot_check(small_game, solution, samples=100).passed
