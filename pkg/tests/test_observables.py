"""
Tests des observables : calendriers, poids continus, estimateurs de ratio et événements de queue.
"""

import math

import numpy as np
import pytest

from src.core.bridge import BridgeSpec, TwoTimeQuery, two_time_below_prob
from src.core.hamiltonian import Hamiltonian, zero
from src.core.observables import (
    RatioEstimate,
    TailEventEstimate,
    continuum_log_weight,
    ensemble_log_weight,
    estimate_conditioned_ratio,
    estimate_ensemble_ratio,
    interaction_log_weight,
    multi_curve_F_estimate,
    multi_schedule,
    normalization_limit_estimate,
    predicted_limit,
    schedule,
    tail_event_conditional,
    tail_event_conditional_ensemble,
    tail_window,
    window_grid,
)
from src.utils.errors import DomainError, ScheduleError


class TestSchedule:

    def test_reference_values(self, exp1):
        sched = schedule(0.0, 2, 1.0, 100.0, exp1)
        assert sched.A == pytest.approx(math.log(100.0), rel=1e-14)
        assert sched.beta == 1.0
        assert sched.c == pytest.approx(-0.01, rel=1e-12)
        assert sched.d == pytest.approx(0.01, rel=1e-12)
        assert sched.a == pytest.approx(-0.0101, rel=1e-12)
        assert sched.b == pytest.approx(0.0101, rel=1e-12)
        assert sched.V == pytest.approx(100.0 ** (-1.0 / 3.0))
        assert sched.query().r == -sched.A

    def test_too_wide_at_small_w(self, exp1):
        with pytest.raises(ScheduleError) as info:
            schedule(0.0, 2, 1.0, 10.0, exp1)
        assert info.value.inequality == "d_w - c_w <= w^(-3/4)"

    def test_too_narrow(self):
        steep = Hamiltonian.custom("steep", lambda x: np.exp(3.0 * x), declared_convex=True)
        with pytest.raises(ScheduleError) as info:
            schedule(0.0, 2, 1.0, 100.0, steep)
        assert info.value.inequality == "d_w - c_w >= w^(-5/4)"

    def test_vanishing_hamiltonian(self):
        with pytest.raises(ScheduleError) as info:
            schedule(0.0, 2, 1.0, 100.0, zero())
        assert info.value.inequality == "H(A_w) > 0"

    def test_outside_interval(self, exp1):
        with pytest.raises(ScheduleError):
            schedule(0.0, 2, 1.0, 100.0, exp1, interval=(0.0, 1.0))

    @pytest.mark.parametrize("z,lam,w", [(0, 1.0, 100.0), (1.5, 1.0, 100.0), (2, 0.0, 100.0), (2, 1.0, 1.0)])
    def test_invalid_parameters(self, exp1, z, lam, w):
        with pytest.raises(DomainError):
            schedule(0.0, z, lam, w, exp1)

    def test_multi_schedule(self, exp1):
        schedules = multi_schedule([-0.5, 0.5], [2, 2], 1.0, 100.0, exp1, (-1.0, 1.0))
        assert [s.t1 for s in schedules] == [-0.5, 0.5]
        with pytest.raises(ScheduleError):
            multi_schedule([0.0, 0.01], [2, 2], 1.0, 100.0, exp1, (-1.0, 1.0))
        with pytest.raises(DomainError):
            multi_schedule([0.5, -0.5], [2, 2], 1.0, 100.0, exp1, (-1.0, 1.0))

    def test_window_grid_contains_breaks(self, exp1):
        sched = schedule(0.0, 2, 1.0, 100.0, exp1)
        times = window_grid(sched, 64)
        for point in (sched.a, sched.c, sched.d, sched.b):
            assert np.any(times == point)
        assert np.all(np.diff(times) > 0)


class TestContinuumWeight:

    def test_zero_hamiltonian(self):
        path = np.linspace(-1.0, 1.0, 101)
        assert continuum_log_weight(path, np.zeros(101), zero(), 0.01) == 0.0

    def test_constant_gap_oracle(self, exp1):
        points = 10_001
        value = continuum_log_weight(np.zeros(points), np.full(points, -1.0), exp1, 1.0 / (points - 1))
        assert value == pytest.approx(-math.exp(-1.0), rel=1e-12)

    def test_minus_infinity_lower(self, exp1):
        assert continuum_log_weight(np.zeros(11), np.full(11, -np.inf), exp1, 0.1) == 0.0

    def test_first_order_convergence(self, exp1):
        exact = -(1.0 - math.exp(-1.0))
        errors = []
        for m in (100, 200, 400):
            times = np.linspace(0.0, 1.0, m + 1)
            errors.append(abs(continuum_log_weight(times, np.zeros(m + 1), exp1, 1.0 / m) - exact))
        assert 1.9 < errors[0] / errors[1] < 2.1
        assert 1.9 < errors[1] / errors[2] < 2.1

    def test_batched_and_nonuniform(self, exp1):
        times = np.array([0.0, 0.1, 0.4, 1.0])
        paths = np.array([[0.0, 0.0, 0.0, 0.0], [1.0, 1.0, 1.0, 1.0]])
        values = continuum_log_weight(paths, np.zeros(4), exp1, np.diff(times))
        np.testing.assert_allclose(values, [-1.0, -math.exp(-1.0)], rtol=1e-14)

    def test_step_count_mismatch(self, exp1):
        with pytest.raises(DomainError):
            interaction_log_weight(np.zeros(4), np.zeros(4), exp1, np.array([0.1, 0.2]))

    def test_ensemble_weight_sums_pairs(self, exp1):
        paths = np.array([[[1.0, 1.0, 1.0], [0.0, 0.0, 0.0]]])
        inner = ensemble_log_weight(paths, exp1, 0.5)
        np.testing.assert_allclose(inner, [-math.exp(-1.0)], rtol=1e-14)
        bounded = ensemble_log_weight(paths, exp1, 0.5, top=np.full(3, np.inf), bottom=np.full(3, -1.0))
        np.testing.assert_allclose(bounded, [-math.exp(-1.0) - math.exp(-1.0)], rtol=1e-14)


class TestPredictedLimit:

    def test_examples(self):
        assert predicted_limit(2, 1.0, 0.0) == pytest.approx(math.exp(-2.0), rel=1e-15)
        assert predicted_limit(1, 2.0, math.log(3.0) / 2.0) == pytest.approx(math.exp(-3.0), rel=1e-14)
        assert predicted_limit(2, 1.0, -math.inf) == 1.0


class TestConditionedRatio:

    @pytest.fixture
    def sched(self, exp1):
        return schedule(0.0, 2, 1.0, 100.0, exp1)

    def test_zero_hamiltonian_is_exactly_one(self, sched, rng):
        estimate = estimate_conditioned_ratio(
            sched.bridge(0.0, 0.0), sched, 0.0, zero(), 500, rng, steps_per_window=32
        )
        assert estimate.ratio == 1.0
        assert estimate.stderr == 0.0

    def test_ratio_is_a_probability(self, sched, exp1, rng):
        estimate = estimate_conditioned_ratio(
            sched.bridge(0.0, 0.0), sched, 0.0, exp1, 4000, rng, steps_per_window=64, batch=1000
        )
        assert 0.0 < estimate.ratio <= 1.0 + 4 * estimate.stderr
        record = estimate.to_record(w=100.0, predicted=predicted_limit(2, 1.0, 0.0), seed=7)
        assert record["n_samples"] == 8000 and record["seed"] == 7

    def test_bridge_must_span_window(self, sched, exp1, rng):
        with pytest.raises(DomainError):
            estimate_conditioned_ratio(BridgeSpec(-1.0, 1.0, 0.0, 0.0), sched, 0.0, exp1, 10, rng)

    def test_ensemble_single_curve_zero_hamiltonian(self, sched, rng):
        estimate = estimate_ensemble_ratio([0.0], [0.0], sched, 0.0, zero(), 300, rng, steps_per_window=32)
        assert estimate.ratio == 1.0

    def test_ensemble_two_curves(self, sched, exp1, rng):
        estimate = estimate_ensemble_ratio(
            [0.5, 0.0], [0.5, 0.0], sched, -1.0, exp1, 2000, rng, steps_per_window=32, batch=500
        )
        assert 0.0 < estimate.ratio <= 1.0 + 4 * estimate.stderr
        with pytest.raises(DomainError):
            estimate_ensemble_ratio([0.0], [0.0, 1.0], sched, 0.0, exp1, 10, rng)


class TestRatioEstimate:

    def test_combine_matches_pooled_sample(self, rng):
        num, den = rng.random(1000), rng.random(1000) + 0.5
        halves = [RatioEstimate.from_weights(num[:400], den[:400]), RatioEstimate.from_weights(num[400:], den[400:])]
        pooled = RatioEstimate.combine(halves)
        full = RatioEstimate.from_weights(num, den)
        assert pooled.ratio == pytest.approx(full.ratio, rel=1e-12)
        assert pooled.numerator_var == pytest.approx(full.numerator_var, rel=1e-10)
        assert pooled.stderr == pytest.approx(full.stderr, rel=1e-10)

    def test_degenerate(self):
        with pytest.raises(DomainError):
            RatioEstimate.from_weights(np.ones(3), np.zeros(3))
        with pytest.raises(DomainError):
            RatioEstimate.combine([])


class TestNormalization:

    def test_zero_hamiltonian(self, rng):
        results = normalization_limit_estimate([(0.0, 1.0), (0.0, 0.5)], [0.0], [0.0], 0.0, zero(), 200, rng)
        assert [r.estimate for r in results] == [1.0, 1.0]

    def test_approaches_one(self, exp1, rng):
        results = normalization_limit_estimate(
            [(0.0, 1.0), (0.0, 0.1), (0.0, 0.01)], [-1.0], [-1.0], 0.0, exp1, 2000, rng, quadrature_points=64
        )
        estimates = [r.estimate for r in results]
        assert all(0.0 < e <= 1.0 for e in estimates)
        assert estimates[0] < estimates[1] < estimates[2]
        assert results[2].to_record()["length"] == pytest.approx(0.01)

    def test_lengths_must_decrease(self, exp1, rng):
        with pytest.raises(DomainError):
            normalization_limit_estimate([(0.0, 0.5), (0.0, 1.0)], [0.0], [0.0], 0.0, exp1, 10, rng)


class TestMultiCurveF:

    def test_single_free_curve_matches_quadrature(self, exp1, rng):
        query = TwoTimeQuery(1 / 3, 2 / 3, 0.0)
        estimate = multi_curve_F_estimate([0.0], [0.0], 0.0, 1.0, query, exp1, 20_000, rng, quadrature_points=32)
        exact = two_time_below_prob(BridgeSpec(0.0, 1.0, 0.0, 0.0), query)
        assert abs(estimate.value - exact) < 4 * estimate.stderr
        assert estimate.effective_samples == pytest.approx(20_000)

    def test_unconstrained_level(self, exp1, rng):
        query = TwoTimeQuery(0.25, 0.75, 1e9)
        estimate = multi_curve_F_estimate([0.5, 0.0], [0.5, 0.0], 0.0, 1.0, query, exp1, 500, rng,
                                          g=-1.0, quadrature_points=32)
        assert estimate.value == 1.0

    def test_two_interacting_curves(self, exp1, rng):
        query = TwoTimeQuery(1 / 3, 2 / 3, 0.0)
        estimate = multi_curve_F_estimate([0.0, 0.0], [0.0, 0.0], 0.0, 1.0, query, exp1, 5000, rng,
                                          quadrature_points=32)
        assert 0.0 <= estimate.value <= 1.0
        assert estimate.effective_samples <= 5000


class TestTailEvents:

    def test_window(self):
        window = tail_window(16, 1.0)
        assert window.b == pytest.approx(16 ** -0.75)
        assert window.a == pytest.approx(window.b + 16 ** -2)
        assert window.W == pytest.approx(math.log(16))
        c, d, r = window.query().c, window.query().d, window.query().r
        assert (c, d, r) == (-window.b, window.b, -window.W)

    @pytest.mark.parametrize("n,lam,b_exponent", [(1, 1.0, 0.75), (8, 0.0, 0.75), (8, 1.0, 0.5), (8, 1.0, 1.5)])
    def test_invalid_window(self, n, lam, b_exponent):
        with pytest.raises(DomainError):
            tail_window(n, lam, b_exponent)

    def test_frequency_is_probability(self, rng):
        estimate = tail_event_conditional(tail_window(8, 1.0), 1.0, 0.0, 0.0, 2000, rng,
                                          side_points=16, middle_points=64, batch=500)
        assert 0.0 <= estimate.frequency <= 1.0
        assert set(estimate.event_failures) == {"A", "D", "E"}
        assert estimate.frequency >= max(estimate.event_failures.values()) - 1e-12
        record = estimate.to_record()
        assert {"fail_A", "fail_D", "fail_E"} <= set(record)

    def test_relaxed_events_rarely_fail(self, rng):
        estimate = tail_event_conditional(tail_window(64, 1.0), 1.0, 0.0, 0.0, 2000, rng,
                                          v_override=1e6, side_points=16, middle_points=64)
        assert estimate.frequency <= 0.01
        assert estimate.event_failures["E"] == 0.0

    def test_endpoints_outside_bound(self, rng):
        with pytest.raises(DomainError):
            tail_event_conditional(tail_window(8, 1.0), 1.0, 2.0, 0.0, 10, rng)

    def test_ensemble_version(self, exp1, rng):
        estimate = tail_event_conditional_ensemble(
            tail_window(16, 1.0), exp1, 1.0, [0.5, 0.0], [0.5, 0.0], 1000, rng,
            side_points=16, middle_points=64, batch=500
        )
        assert 0.0 <= estimate.frequency <= 1.0

    def test_combine(self):
        parts = [TailEventEstimate(8, 0.2, 0.0, 100, {"A": 0.1, "D": 0.0, "E": 0.1}),
                 TailEventEstimate(8, 0.4, 0.0, 300, {"A": 0.0, "D": 0.2, "E": 0.3})]
        combined = TailEventEstimate.combine(parts)
        assert combined.samples == 400
        assert combined.frequency == pytest.approx(0.35)
        assert combined.event_failures["D"] == pytest.approx(0.15)
