"""
Tests de la chaîne de Metropolis, du couplage monotone et du générateur exact.
"""

import json

import numpy as np
import pytest

from src.core.hamiltonian import Hamiltonian, zero
from src.core.lattice import (
    DiscretePath,
    EnsembleData,
    EnsembleState,
    enumerate_paths,
    exact_boltzmann_for,
    log_weight,
    make_grid,
)
from src.core.mcmc import (
    ChainState,
    CoupledState,
    EventStream,
    RunConfig,
    acceptance_log_ratio,
    build_generator,
    detailed_balance_residual,
    domination_gap,
    empirical_distribution,
    preflight_hamiltonian,
    propose,
    run_coupled,
    sample_ensemble,
    sample_state_keys,
    stationarity_residual,
    stationary_distribution,
    step,
    total_variation,
)
from src.utils.errors import CouplingViolationError, DomainError, NonConvexHamiltonianError
from src.utils.seeding import seed_policy


def bump():
    return Hamiltonian.custom("bump", lambda x: np.exp(-x * x))


@pytest.fixture
def ordered_pair(grid_n2):
    bottom = EnsembleData.build(grid_n2, [0, -1], [0, -1], "inf", "-2")
    top = EnsembleData.build(grid_n2, [1, 0], [2, 0], "inf", "-1")
    return bottom, top


class TestProposal:

    def test_cases_on_maximal_path(self, small_instance):
        chain = ChainState.from_data(small_instance)
        assert chain.heights[0] == [0, 1, 2, 1, 0]
        assert propose(chain, 0, 2, 1) is None
        assert propose(chain, 0, 2, -1) == 1
        assert propose(chain, 0, 1, 1) is None
        assert propose(chain, 0, 1, -1) is None
        assert propose(chain, 0, 3, 0) == 1

    @pytest.mark.parametrize("curve,site", [(0, 0), (0, 4), (1, 2), (-1, 2)])
    def test_invalid_sites(self, small_instance, curve, site):
        chain = ChainState.from_data(small_instance)
        with pytest.raises(DomainError):
            propose(chain, curve, site, 1)


class TestAcceptanceRatio:

    @pytest.mark.parametrize("entrance,exit", [([0], [0]), ([0, -1], [1, -1])])
    def test_local_matches_global(self, grid_n2, exp1, entrance, exit):
        data = EnsembleData.build(grid_n2, entrance, exit, "inf", -2.5)
        dist = exact_boltzmann_for(data, exp1)
        for state in dist.states[:60]:
            chain = ChainState(state)
            base = log_weight(state, exp1)
            for curve in range(chain.k):
                for site in range(1, grid_n2.steps):
                    for delta in (-1, 1):
                        candidate = propose(chain, curve, site, delta)
                        if candidate is None:
                            continue
                        heights = [list(h) for h in chain.heights]
                        heights[curve][site] = candidate
                        moved = EnsembleState(
                            grid_n2, tuple(DiscretePath.from_indices(h) for h in heights), data.f, data.g
                        )
                        local = acceptance_log_ratio(chain, curve, site, candidate, exp1)
                        assert local == pytest.approx(log_weight(moved, exp1) - base, abs=1e-12)

    def test_zero_hamiltonian_and_free_boundaries(self, grid_n2, exp1):
        chain = ChainState.from_data(EnsembleData.build(grid_n2, [0], [0], "inf", "-2"))
        assert acceptance_log_ratio(chain, 0, 2, 1, zero()) == 0.0
        free = ChainState.from_data(EnsembleData.build(grid_n2, [0], [0]))
        assert acceptance_log_ratio(free, 0, 2, 1, exp1) == 0.0


class TestEventStream:

    def test_deterministic(self):
        a = EventStream(seed_policy(3, 1), 2, 16, block=64)
        b = EventStream(seed_policy(3, 1), 2, 16, block=64)
        assert [a.next_event() for _ in range(200)] == [b.next_event() for _ in range(200)]
        assert a.consumed == 200

    def test_events_in_range(self, rng):
        stream = EventStream(rng, 3, 9, block=100)
        for curve, site, delta, u in (stream.next_event() for _ in range(1000)):
            assert 0 <= curve < 3 and 1 <= site <= 8
            assert delta in (-1, 0, 1) and 0.0 <= u < 1.0

    def test_no_interior(self, rng):
        with pytest.raises(DomainError):
            EventStream(rng, 1, 1)

    def test_step_record(self, small_instance, exp1, rng):
        chain = ChainState.from_data(small_instance)
        stream = EventStream(rng, 1, 4)
        records = [step(chain, stream, exp1) for _ in range(50)]
        assert stream.consumed == 50
        assert chain.accepted == sum(r.accepted and r.delta != 0 for r in records)


class TestRunConfig:

    def test_defaults(self, small_instance):
        config = RunConfig.for_samples(small_instance, 10, seed=1)
        assert (config.burn_in, config.thinning, config.event_budget) == (200, 4, 240)
        assert config.sample_count == 10

    @pytest.mark.parametrize("args", [(0, 1), (10, 1, 0, 0), (10, 1, 20, 1)])
    def test_invalid(self, args):
        with pytest.raises(DomainError):
            RunConfig(*args)


class TestSampling:

    def test_matches_exact_law(self, small_instance, exp1):
        dist = exact_boltzmann_for(small_instance, exp1)
        exact = {s.heights(): float(p) for s, p in zip(dist.states, dist.probabilities)}
        config = RunConfig.for_samples(small_instance, 50_000, seed=11, thinning=12)
        counts = sample_state_keys(small_instance, exp1, config, seed_policy(11, 0))
        total = sum(counts.values())
        assert total == 50_000
        empirical = {key: n / total for key, n in counts.items()}
        tv = 0.5 * sum(abs(empirical.get(key, 0.0) - p) for key, p in exact.items())
        assert tv < 0.05

    def test_sample_ensemble_states_are_valid(self, small_instance, exp1):
        config = RunConfig.for_samples(small_instance, 200, seed=5)
        states = list(sample_ensemble(small_instance, exp1, config, seed_policy(5, 0)))
        assert len(states) == 200
        valid = {p.increments for p in enumerate_paths(small_instance.grid, 0, 0)}
        assert all(s.paths[0].increments in valid for s in states)

    @pytest.mark.parametrize("n,entrance,exit", [(1, [0], [1]), (2, [0], [4])])
    def test_singleton(self, exp1, n, entrance, exit):
        data = EnsembleData.build(make_grid(0.0, 1.0, n), entrance, exit, "inf", "-2")
        config = RunConfig(20, 1)
        states = list(sample_ensemble(data, exp1, config, seed_policy(1, 0)))
        assert len(states) == 20 and len(set(states)) == 1
        counts = sample_state_keys(data, exp1, config, seed_policy(1, 0))
        assert list(counts.values()) == [20]

    def test_empirical_and_tv(self):
        assert total_variation({"a": 1.0}, {"b": 1.0}) == 1.0
        assert total_variation({"a": 0.5, "b": 0.5}, {"b": 0.5, "a": 0.5}) == 0.0
        assert empirical_distribution(["x", "y", "x", "x"]) == {"x": 0.75, "y": 0.25}
        with pytest.raises(DomainError):
            empirical_distribution([])


class TestCoupling:

    def test_identical_data_stay_identical(self, small_instance, exp1):
        coupled = CoupledState.from_data(small_instance, small_instance)
        result = run_coupled(coupled, exp1, RunConfig(20_000, 1, 0, 1000), seed_policy(1, 0))
        assert result.violations == 0
        assert coupled.bottom.heights == coupled.top.heights
        assert result.accepted_bottom == result.accepted_top
        assert len(result.samples) == 20

    def test_ordered_data_never_cross(self, ordered_pair, exp1):
        coupled = CoupledState.from_data(*ordered_pair)
        result = run_coupled(coupled, exp1, RunConfig(100_000, 2, 0, 1000), seed_policy(2, 0))
        assert result.violations == 0
        assert result.first_violation_event is None
        assert coupled.first_violation() is None
        for low, high in result.samples:
            assert np.all(np.asarray(low.heights()) <= np.asarray(high.heights()))

    def test_unordered_data_rejected(self, ordered_pair):
        bottom, top = ordered_pair
        with pytest.raises(DomainError):
            CoupledState.from_data(top, bottom)

    def test_nonconvex_refused(self, ordered_pair):
        coupled = CoupledState.from_data(*ordered_pair)
        with pytest.raises(NonConvexHamiltonianError):
            run_coupled(coupled, bump(), RunConfig(100, 1), seed_policy(1, 0))

    def test_nonconvex_diagnostic_mode(self, ordered_pair):
        coupled = CoupledState.from_data(*ordered_pair)
        result = run_coupled(coupled, bump(), RunConfig(5000, 1), seed_policy(1, 0), allow_nonconvex=True)
        assert result.events == 5000
        assert result.violations >= 0

    def test_debug_checks_catch_false_declaration(self, ordered_pair):
        liar = Hamiltonian.custom("bump", lambda x: np.exp(-x * x), declared_convex=True)
        coupled = CoupledState.from_data(*ordered_pair)
        with pytest.raises(NonConvexHamiltonianError):
            run_coupled(coupled, liar, RunConfig(10, 1), seed_policy(1, 0), debug_checks=True)

    def test_violation_writes_trace(self, small_instance, exp1, tmp_path):
        high = ChainState.from_data(small_instance)
        low = ChainState(EnsembleState(
            small_instance.grid, (DiscretePath.from_indices([0, -1, -2, -1, 0]),),
            small_instance.f, small_instance.g,
        ))
        # Couple volontairement inversé : la première vérification échoue
        coupled = CoupledState(bottom=high, top=low)
        with pytest.raises(CouplingViolationError) as info:
            run_coupled(coupled, exp1, RunConfig(10, 1), seed_policy(1, 0), trace_dir=tmp_path)
        trace = json.loads((tmp_path / "coupling_violation.json").read_text(encoding="utf-8"))
        assert info.value.trace_path == str(tmp_path / "coupling_violation.json")
        assert trace["event_index"] == 0
        assert len(trace["recent_events"]) == 1


class TestGenerator:

    @pytest.mark.parametrize("entrance,exit", [([0], [0]), ([0, -1], [1, -1])])
    def test_stationary_and_reversible(self, grid_n2, exp1, entrance, exit):
        data = EnsembleData.build(grid_n2, entrance, exit, "inf", "-2")
        generator = build_generator(data, exp1)
        rates = generator.rates
        np.testing.assert_allclose(rates.sum(axis=1), 0.0, atol=1e-12)
        exact = generator.distribution.probabilities
        assert stationarity_residual(rates, exact) <= 1e-10
        assert detailed_balance_residual(rates, exact) <= 1e-12
        pi = stationary_distribution(rates)
        assert 0.5 * np.abs(pi - exact).sum() <= 1e-8

    def test_rates_bounded(self, small_instance, exp1):
        rates = build_generator(small_instance, exp1).rates
        off = rates - np.diag(np.diag(rates))
        assert off.min() >= 0.0 and off.max() <= 1.0 / 3.0 + 1e-15


class TestDomination:

    def test_higher_boundary_dominates(self, grid_n2, exp1):
        low = exact_boltzmann_for(EnsembleData.build(grid_n2, [0], [0], "inf", "-2"), exp1)
        high = exact_boltzmann_for(EnsembleData.build(grid_n2, [0], [0], "inf", "-1"), exp1)
        assert domination_gap(low, high) <= 1e-12
        assert domination_gap(high, low) > 0.0

    def test_self_domination(self, small_instance, exp1):
        dist = exact_boltzmann_for(small_instance, exp1)
        assert domination_gap(dist, dist) == pytest.approx(0.0, abs=1e-15)

    def test_mismatched_grids(self, small_instance, exp1):
        other = EnsembleData.build(make_grid(0.0, 2.0, 2), [0], [0], "inf", "-2")
        with pytest.raises(DomainError):
            domination_gap(exact_boltzmann_for(small_instance, exp1), exact_boltzmann_for(other, exp1))


class TestDebugChecks:

    def test_preflight_report(self, exp1):
        report = preflight_hamiltonian(exp1)
        assert report.nonnegative and report.convex
        assert report.minus_infinity_gap == 0.0

    def test_negative_hamiltonian_refused(self, small_instance):
        negative = Hamiltonian.custom("shifted", lambda x: np.exp(x) - 1.0, value_at_minus_infinity=-1.0)
        run = RunConfig.for_samples(small_instance, 5, 1)
        with pytest.raises(DomainError):
            sample_ensemble(small_instance, negative, run, seed_policy(1, 0), debug_checks=True)
        with pytest.raises(DomainError):
            sample_state_keys(small_instance, negative, run, seed_policy(1, 0), debug_checks=True)
        # Sans vérifications, la chaîne tourne
        assert len(list(sample_ensemble(small_instance, negative, run, seed_policy(1, 0)))) == 5

    def test_inconsistent_limit_refused(self, ordered_pair):
        wrong_limit = Hamiltonian.custom("exp_off", np.exp, value_at_minus_infinity=1.0, declared_convex=True)
        coupled = CoupledState.from_data(*ordered_pair)
        with pytest.raises(DomainError) as info:
            run_coupled(coupled, wrong_limit, RunConfig(10, 1), seed_policy(1, 0), debug_checks=True)
        assert not isinstance(info.value, NonConvexHamiltonianError)
        result = run_coupled(coupled, wrong_limit, RunConfig(10, 1), seed_policy(1, 0))
        assert result.events == 10
