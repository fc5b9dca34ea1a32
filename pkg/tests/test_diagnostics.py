"""Test the tracking-error diagnostics and the explicit bounds."""

import dataclasses

import numpy as np
import pytest

from gneagg.algorithms import run_algorithm3
from gneagg.diagnostics import (
    BoundInputs,
    TrackingErrors,
    _geometric_sum,
    bound_inputs,
    convergence_metrics,
    error_bound,
    phi_coefficients,
    phi_sequence,
    summability_report,
    tracking_bound_check,
)
from gneagg.errors import MissingReference
from gneagg.game import GameInstance, constants
from gneagg.network import GraphSchedule, certify_decay
from gneagg.steps import PowerLaw, StepPlan, make_step_plan
from gneagg.trace import RunTrace, TraceRecord


def synthetic_trace(gamma: np.ndarray, errors: np.ndarray) -> RunTrace:
    records = [TraceRecord(k=k, gamma=float(g), err_norm=float(e)) for k, (g, e) in enumerate(zip(gamma, errors))]
    return RunTrace("3", records=records)


@pytest.fixture
def tracked_run(small_game: GameInstance, small_plan: StepPlan, small_schedule: GraphSchedule) -> RunTrace:
    """A short partial-information run on the small game."""
    return run_algorithm3(small_game, small_plan, small_schedule, max_iter=120)


class TestErrorBound:
    """Test the bound on the shadow error."""

    def test_error_bound_terms(self, toy_game: GameInstance) -> None:
        """Test each term of L a sigma + b y + (a c + b) z on the toy game."""
        gc = constants(toy_game)
        plan = make_step_plan(gc, 0.05, PowerLaw(0.51))
        a = plan.alpha[0]
        assert error_bound(plan, gc, TrackingErrors(1.0, 0.0, 0.0)) == pytest.approx(4.0 * a)
        assert error_bound(plan, gc, TrackingErrors(0.0, 1.0, 0.0)) == pytest.approx(a)
        assert error_bound(plan, gc, TrackingErrors(0.0, 0.0, 1.0)) == pytest.approx(a * np.sqrt(2.0) + a)

    def test_tracking_errors_total(self) -> None:
        """Test the Euclidean total of the three errors."""
        assert TrackingErrors(3.0, 4.0, 0.0).total == pytest.approx(5.0)

    def test_exact_mixing_has_no_shadow_error(self, small_game: GameInstance, small_plan: StepPlan) -> None:
        """Test that W = 11'/N with adapt-then-combine tracking leaves e^k at rounding level."""
        averaging = np.full((4, 4), 0.25)
        trace = run_algorithm3(
            small_game, small_plan, None, weights=lambda k: averaging, y_tracking="atc", max_iter=40
        )
        assert trace.column("err_norm").max() <= 1e-8
        assert trace.column("track_sigma").max() <= 1e-9


class TestTrackingBounds:
    """Test the explicit tracking bounds."""

    def test_geometric_sum(self) -> None:
        """Test sum_{s=1..k} rho^(k-s) v[s-1]."""
        np.testing.assert_allclose(_geometric_sum(0.5, np.array([1.0, 1.0, 1.0])), [0.0, 1.0, 1.5])
        assert _geometric_sum(0.5, np.zeros(0)).size == 0

    def test_phi_coefficients(self) -> None:
        """Test delta1 and delta2 with unit constants and rho = 1/2."""
        assert phi_coefficients(1.0, 0.5, 1.0, 1.0, 1.0, 1.0, 1.0) == pytest.approx((8.0, 25.0))

    def test_phi_sequence(self) -> None:
        """Test phi^k for delta1 = 2, delta2 = 1, rho = 1/2 and unit relaxation."""
        inputs = BoundInputs(theta=1.0, rho=0.5, B_Omega=1.0, B_D=1.0, B_Y=0.0, delta1=2.0, delta2=1.0, gamma=np.ones(1))
        np.testing.assert_allclose(phi_sequence(inputs, 2), [4.0, 3.0, 2.5])

    def test_bounds_hold_on_a_run(
        self,
        small_game: GameInstance,
        small_plan: StepPlan,
        small_schedule: GraphSchedule,
        tracked_run: RunTrace,
    ) -> None:
        """Test every tracking error against its bound."""
        certificate = certify_decay(small_schedule)
        inputs = bound_inputs(small_game, small_plan, tracked_run, certificate, constants(small_game))
        assert inputs.empirical
        assert inputs.B_Y == pytest.approx(tracked_run.meta["y0_norm"])
        report = tracking_bound_check(tracked_run, inputs)
        assert report.passed, report.violations[:3]
        doc = report.to_dict(series=True)
        assert set(doc["measured"]) == {"track_sigma", "track_y", "track_z"}

    def test_bounds_detect_a_wrong_decay_constant(
        self,
        small_game: GameInstance,
        small_plan: StepPlan,
        small_schedule: GraphSchedule,
        tracked_run: RunTrace,
    ) -> None:
        """Test that a theta far below the true prefactor produces violations."""
        certificate = certify_decay(small_schedule)
        inputs = bound_inputs(small_game, small_plan, tracked_run, certificate, constants(small_game))
        report = tracking_bound_check(tracked_run, dataclasses.replace(inputs, theta=1e-12))
        assert not report.passed
        assert any(name == "track_sigma" for name, *_ in report.violations)

    def test_dual_cap_gives_a_priori_bound(
        self, small_game: GameInstance, small_plan: StepPlan, small_schedule: GraphSchedule
    ) -> None:
        """Test B_D = cap sqrt(mN) for capped runs."""
        trace = run_algorithm3(small_game, small_plan, small_schedule, max_iter=10, dual_cap=50.0)
        inputs = bound_inputs(small_game, small_plan, trace, certify_decay(small_schedule), constants(small_game))
        assert not inputs.empirical
        assert inputs.B_D == pytest.approx(50.0 * 4.0)


class TestSummability:
    """Test the summability evidence."""

    def test_summable_errors(self) -> None:
        """Test geometric errors under a harmonic relaxation."""
        k = np.arange(200)
        report = summability_report(synthetic_trace(1.0 / (k + 1), 0.5**k), nu=0.5)
        assert report.cauchy_flag
        assert report.partial_sums[-1] == pytest.approx(np.sum(0.5**k / (k + 1)))
        assert report.relaxation_increasing
        assert report.km_sums is not None
        assert report.to_dict()["km_total"] == pytest.approx(report.km_sums[-1])

    def test_non_summable_errors(self) -> None:
        """Test that constant errors under a slowly decaying relaxation keep growing."""
        k = np.arange(400)
        report = summability_report(synthetic_trace((k + 1.0) ** -0.51, np.ones(400)))
        assert not report.cauchy_flag
        assert report.last_quarter_increment > 0
        assert "km_total" not in report.to_dict()

    def test_empty_trace(self) -> None:
        """Test that an empty trace is trivially summable."""
        report = summability_report(RunTrace("3"))
        assert report.cauchy_flag
        assert report.to_dict()["total"] == 0.0


class TestConvergenceMetrics:
    """Test the plot-ready series."""

    def test_needs_reference(self) -> None:
        """Test MissingReference without a reference or recorded residuals."""
        with pytest.raises(MissingReference):
            convergence_metrics(synthetic_trace(np.ones(3), np.zeros(3)))

    def test_snapshot_residuals(self, tracked_run: RunTrace) -> None:
        """Test the normalized residual on snapshots against the final iterate."""
        final = tracked_run.final.x.ravel()
        series = convergence_metrics(tracked_run, reference_x=final)
        assert series.norm_residual[0] == pytest.approx(1.0)
        assert series.norm_residual[-1] == pytest.approx(0.0)
        assert series.norm_k[0] == 0.0
        np.testing.assert_allclose(
            series.tracking_total, np.sqrt(series.track_sigma**2 + series.track_y**2 + series.track_z**2)
        )
