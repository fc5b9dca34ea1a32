"""Test the three solvers."""

import dataclasses

import numpy as np
import pytest

from gneagg.algorithms import IterateState, run_algorithm1, run_algorithm2, run_algorithm3
from gneagg.diagnostics import error_bound_check
from gneagg.errors import DimensionMismatch, InvalidGamma, InvalidParams, NonFiniteIterate, PDCheckFailed
from gneagg.game import CournotParams, GameInstance, build_cournot, constants
from gneagg.network import Complete, GraphSchedule, MixingVariant, generate_schedule
from gneagg.steps import Constant, PowerLaw, StepPlan, make_step_plan


@pytest.fixture
def toy_plan(toy_game: GameInstance) -> StepPlan:
    """Toy-game plan with full relaxation."""
    return make_step_plan(constants(toy_game), 0.05, Constant(1.0))


class TestSemiDecentralized:
    """Test the central-coordinator iteration."""

    def test_converges_on_toy_game(self, toy_game: GameInstance, toy_plan: StepPlan, toy_solution) -> None:
        """Test convergence to x* = (90, 90), lambda* = (0, 455)."""
        x_star, lam_star = toy_solution
        trace = run_algorithm1(toy_game, toy_plan, max_iter=50_000)
        assert trace.status == "converged"
        assert trace.records[-1].kkt_residual <= 1e-8
        np.testing.assert_allclose(trace.final.x.ravel(), x_star, atol=1e-4)
        np.testing.assert_allclose(trace.final.lam, lam_star, atol=1e-4)

    def test_start_at_solution(self, toy_game: GameInstance, toy_plan: StepPlan, toy_solution) -> None:
        """Test that a run started at the solution stores one record and applies no update."""
        x_star, lam_star = toy_solution
        trace = run_algorithm1(toy_game, toy_plan, IterateState(x=x_star, lam=lam_star))
        assert trace.status == "converged"
        assert trace.iterations == 0
        assert len(trace.records) == 1
        assert list(trace.snapshots) == [0]

    def test_slack_coupling_stops_immediately(self) -> None:
        """Test that zero demand and huge caps make the projected origin a solution."""
        params = CournotParams(n_agents=2, n_markets=1, d_range=(0.0, 0.0), r_range=(1e6, 1e6))
        game = build_cournot(params, seed=0)
        plan = make_step_plan(constants(game), 0.05, Constant(1.0))
        trace = run_algorithm1(game, plan)
        assert trace.status == "converged"
        assert trace.iterations == 0
        np.testing.assert_array_equal(trace.final.lam, np.zeros(2))

    def test_rejects_infeasible_start(self, toy_game: GameInstance, toy_plan: StepPlan) -> None:
        """Test that a start outside the local set is refused."""
        with pytest.raises(InvalidParams, match="outside"):
            run_algorithm1(toy_game, toy_plan, IterateState(x=np.array([10.0, 50.0]), lam=np.zeros(2)))
        with pytest.raises(InvalidParams, match="nonnegative"):
            run_algorithm1(toy_game, toy_plan, IterateState(x=np.zeros(2), lam=np.array([-1.0, 0.0])))

    def test_rejects_per_agent_dual(self, small_game: GameInstance, small_plan: StepPlan) -> None:
        """Test that the shared multiplier must have length m."""
        with pytest.raises(DimensionMismatch, match="initial multiplier"):
            run_algorithm1(small_game, small_plan, IterateState(x=np.zeros(16), lam=np.zeros(16)))

    def test_overflow_is_reported(self, toy_game: GameInstance, toy_plan: StepPlan) -> None:
        """Test that an absurd dual step raises NonFiniteIterate at the first update."""
        plan = dataclasses.replace(toy_plan, central_beta=1e308)
        with pytest.raises(NonFiniteIterate) as excinfo:
            run_algorithm1(toy_game, plan)
        assert excinfo.value.k == 0

    def test_dual_cap(self, toy_game: GameInstance, toy_plan: StepPlan) -> None:
        """Test that capped multipliers never exceed the cap."""
        trace = run_algorithm1(toy_game, toy_plan, max_iter=200, dual_cap=100.0, snapshot_every=1)
        assert all(np.max(lam) <= 100.0 for _, lam in trace.snapshots.values())


class TestFullInformation:
    """Test the relaxed iteration with exact averages."""

    def test_converges_on_toy_game(self, toy_game: GameInstance, toy_plan: StepPlan, toy_solution) -> None:
        """Test convergence of the fixed-point residual with gamma = 1."""
        x_star, lam_star = toy_solution
        trace = run_algorithm2(toy_game, toy_plan, max_iter=50_000)
        assert trace.status == "converged"
        np.testing.assert_allclose(trace.final.x.ravel(), x_star, atol=1e-4)
        np.testing.assert_allclose(trace.final.lam, [lam_star], atol=1e-4)
        assert trace.meta["gamma"] == "const:1"

    def test_records_are_ordered(self, small_game: GameInstance, small_plan: StepPlan) -> None:
        """Test one record per iterate and the diminishing relaxation column."""
        trace = run_algorithm2(small_game, small_plan, max_iter=25)
        assert [r.k for r in trace.records] == list(range(26))
        assert trace.iterations == 25
        np.testing.assert_allclose(trace.column("gamma"), PowerLaw(0.51).values(26))
        assert 0 in trace.snapshots and 25 in trace.snapshots

    def test_refuses_indefinite_preconditioner(self, toy_game: GameInstance) -> None:
        """Test that oversized primal steps are rejected before iterating."""
        plan = make_step_plan(constants(toy_game), 0.05, Constant(1.0), alpha_scale=10.0)
        with pytest.raises(PDCheckFailed):
            run_algorithm2(toy_game, plan)


class TestPartialInformation:
    """Test the tracking iteration over a time-varying graph."""

    def test_argument_validation(
        self, small_game: GameInstance, small_plan: StepPlan, small_schedule: GraphSchedule
    ) -> None:
        """Test the tracking order, the schedule and the relaxation checks."""
        with pytest.raises(InvalidParams, match="y_tracking"):
            run_algorithm3(small_game, small_plan, small_schedule, y_tracking="both")
        with pytest.raises(InvalidParams, match="schedule"):
            run_algorithm3(small_game, small_plan, None)
        wrong = generate_schedule(Complete(), 3, horizon=2, seed=0)
        with pytest.raises(DimensionMismatch, match="nodes"):
            run_algorithm3(small_game, small_plan, wrong)
        constant = dataclasses.replace(small_plan, gamma=Constant(1.0))
        with pytest.raises(InvalidGamma, match="square-summable"):
            run_algorithm3(small_game, constant, small_schedule)

    def test_tracking_invariance(
        self, small_game: GameInstance, small_plan: StepPlan, small_schedule: GraphSchedule
    ) -> None:
        """Test that every estimate's mean matches its target at every iteration."""
        trace = run_algorithm3(small_game, small_plan, small_schedule, max_iter=100)
        assert len(trace.records) == 101
        scale = 1.0 + max(trace.meta["x0_norm"], trace.meta["y0_norm"], float(trace.column("dual_norm").max()))
        for name in ("inv_sigma", "inv_y", "inv_z"):
            assert trace.column(name).max() <= 1e-9 * scale

    def test_default_start_has_exact_estimates(
        self, small_game: GameInstance, small_plan: StepPlan, small_schedule: GraphSchedule
    ) -> None:
        """Test that sigma and z start on their targets from the projected origin."""
        trace = run_algorithm3(small_game, small_plan, small_schedule, max_iter=0)
        first = trace.records[0]
        assert first.track_sigma == 0.0
        assert first.track_z == 0.0
        assert first.partial_sum_gamma_err == pytest.approx(first.gamma * first.err_norm)

    def test_error_bound_holds(
        self, small_game: GameInstance, small_plan: StepPlan, small_schedule: GraphSchedule
    ) -> None:
        """Test ||e^k|| against the tracking-error bound along a run."""
        trace = run_algorithm3(small_game, small_plan, small_schedule, max_iter=150)
        report = error_bound_check(trace, small_plan, constants(small_game))
        assert report.passed, report.violations[:3]

    @pytest.mark.parametrize("y_tracking", ["cta", "atc"])
    def test_tracking_errors_shrink(
        self, small_game: GameInstance, small_plan: StepPlan, small_schedule: GraphSchedule, y_tracking: str
    ) -> None:
        """Test that the shadow error decays along the run for both tracking orders."""
        trace = run_algorithm3(small_game, small_plan, small_schedule, max_iter=600, y_tracking=y_tracking)
        errors = trace.column("err_norm")
        assert np.all(np.isfinite(errors))
        assert errors[-50:].mean() < errors[:50].max()

    def test_complete_graph_collapses_to_exact_averages(self, small_game: GameInstance, small_plan: StepPlan) -> None:
        """Test that W = 11'/N with adapt-then-combine tracking reproduces the exact-average run."""
        schedule = generate_schedule(Complete(), small_game.n_agents, horizon=1, seed=0)
        exact = run_algorithm2(small_game, small_plan, max_iter=30, snapshot_every=1)
        tracked = run_algorithm3(
            small_game,
            small_plan,
            schedule,
            MixingVariant.SAFE_DIAGONAL,
            max_iter=30,
            y_tracking="atc",
            snapshot_every=1,
        )
        assert sorted(exact.snapshots) == sorted(tracked.snapshots)
        for k, (x_exact, lam_exact) in exact.snapshots.items():
            x_tracked, lam_tracked = tracked.snapshots[k]
            np.testing.assert_allclose(x_tracked, x_exact, rtol=1e-9, atol=1e-7)
            np.testing.assert_allclose(lam_tracked, lam_exact, rtol=1e-9, atol=1e-7)

    def test_weights_override_and_observer(self, small_game: GameInstance, small_plan: StepPlan) -> None:
        """Test a callable mixing sequence and the per-iteration observer."""
        seen = []

        def observer(state: IterateState, step) -> None:
            seen.append((state.k, step.k))

        averaging = np.full((4, 4), 0.25)
        trace = run_algorithm3(small_game, small_plan, None, weights=lambda k: averaging, max_iter=5, observer=observer)
        assert seen == [(k, k) for k in range(6)]
        assert trace.final.k == 5

    def test_kkt_stop(self, toy_game: GameInstance, toy_solution) -> None:
        """Test the optional KKT stop on a start at the solution."""
        x_star, lam_star = toy_solution
        plan = make_step_plan(constants(toy_game), 0.05, PowerLaw(0.51))
        trace = run_algorithm3(
            toy_game,
            plan,
            None,
            weights=lambda k: np.ones((1, 1)),
            init=IterateState(x=x_star, lam=lam_star[None, :]),
            kkt_tol=1e-8,
        )
        assert trace.status == "converged"
        assert trace.iterations == 0
