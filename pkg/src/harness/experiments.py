"""
Catalogue des expériences E1 à E7 : orchestration pure des modules de calcul,
critères d'acceptation et écriture des rapports.
"""

import math
import os
import time
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..core.bridge import (
    BridgeSpec,
    TwoTimeQuery,
    bridge_max_on_grid,
    max_exceedance_prob,
    mills_ratio,
    sample_bridge_on_grid,
    two_time_below_prob,
)
from ..core.hamiltonian import (
    Hamiltonian,
    exponential,
    lambda_exponential_deviation,
    lambda_exponential_trend,
    parse_hamiltonian,
)
from ..core.lattice import (
    EnsembleData,
    distribution_to_json,
    lattice_ks_distance,
    make_grid,
    partial_gibbs_check,
    sample_free_paths,
)
from ..core.mcmc import (
    CoupledState,
    RunConfig,
    build_generator,
    detailed_balance_residual,
    preflight_hamiltonian,
    run_coupled,
    sample_state_keys,
    stationarity_residual,
    stationary_distribution,
    total_variation,
)
from ..core.observables import (
    RatioEstimate,
    TailEventEstimate,
    estimate_conditioned_ratio,
    normalization_limit_estimate,
    predicted_limit,
    schedule,
    tail_event_conditional,
    tail_window,
)
from ..utils.config_manager import ConfigManager
from ..utils.errors import ConfigError, CouplingViolationError, DomainError
from ..utils.logger import get_logger
from ..utils.seeding import seed_policy, stream_ids
from .reporting import (
    ExperimentReport,
    export_paths,
    export_rows,
    nondecreasing_within,
    strictly_decreasing_within,
)
from .replica_pool import ReplicaPool

logger = get_logger()

OUT_ENV = "GIBBS_LINES_OUT"
DEFAULT_OUT = "data/runs"

# Bases des identifiants de flux par expérience
STREAM_E2 = 200
STREAM_E3 = 300
STREAM_E4_MAX = 400
STREAM_E4_TWO_TIME = 450
STREAM_E5 = 500
STREAM_E6 = 600
STREAM_E7_TAIL = 700
STREAM_E7_WEAK = 790


@dataclass
class ExperimentConfig:
    """Configuration résolue d'une expérience."""

    experiment: str
    hamiltonian_name: str
    hamiltonian: Hamiltonian
    seed: int
    workers: int
    replicas: int
    out_dir: Path
    debug_checks: bool
    batch: int
    settings: ConfigManager

    @classmethod
    def from_manager(cls, manager: ConfigManager) -> "ExperimentConfig":
        """
        Valide la configuration : hamiltonien du catalogue, budgets positifs.

        Args:
            manager: Gestionnaire de configuration chargé

        Returns:
            Configuration d'expérience
        """
        name = manager.require("general.hamiltonian")
        try:
            hamiltonian = parse_hamiltonian(str(name))
        except DomainError as e:
            raise ConfigError(f"Hamiltonien inconnu ou mal formé: {name} ({e})") from e
        seed = manager.require("run.seed")
        if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
            raise ConfigError(f"run.seed doit être un entier >= 0 (reçu {seed!r})")

        experiment = manager.require("run.experiment")
        out_dir = manager.get("output.dir") or os.environ.get(OUT_ENV) or DEFAULT_OUT
        return cls(
            experiment=experiment,
            hamiltonian_name=str(name),
            hamiltonian=hamiltonian,
            seed=seed,
            workers=manager.positive_int("run.workers"),
            replicas=manager.positive_int("run.replicas"),
            out_dir=Path(out_dir) / experiment,
            debug_checks=bool(manager.get("general.debug_checks", False)),
            batch=manager.positive_int("monte_carlo.batch"),
            settings=manager,
        )

    def get(self, key_path: str, default: Any = None) -> Any:
        return self.settings.get(key_path, default)

    def require(self, key_path: str) -> Any:
        return self.settings.require(key_path)

    def count(self, key_path: str) -> int:
        return self.settings.positive_int(key_path)

    def ensemble_data(self, section: str = "data") -> EnsembleData:
        """Grille et données de bord d'une section (data ou coupling)."""
        try:
            grid = make_grid(self.require("geometry.a"), self.require("geometry.b"), self.count("geometry.n"))
            entrance = self.require(f"{section}.entrance")
            exit_ = self.require(f"{section}.exit")
            data = EnsembleData.build(
                grid, entrance, exit_, self.require(f"{section}.f"), self.require(f"{section}.g")
            )
        except DomainError as e:
            raise ConfigError(f"Section [{section}] invalide: {e}") from e
        k = self.get(f"{section}.k", self.get("data.k"))
        if k is not None and k != data.k:
            raise ConfigError(f"{section}.k={k} ne correspond pas aux {data.k} entrées")
        return data

    def pool(self) -> ReplicaPool:
        return ReplicaPool(self.workers)


def _split(total: int, parts: int) -> List[int]:
    """Répartit un budget en parts presque égales (ne dépend pas du nombre de workers)."""
    base, extra = divmod(total, parts)
    return [base + (1 if i < extra else 0) for i in range(parts) if base + (1 if i < extra else 0) > 0]


# ---------------------------------------------------------------------------
# E1 : stationnarité exacte et équilibre détaillé
# ---------------------------------------------------------------------------

def _run_e1(cfg: ExperimentConfig, report: ExperimentReport) -> List[Dict]:
    data = cfg.ensemble_data()
    generator = build_generator(data, cfg.hamiltonian, cfg.count("mcmc.state_cap"))
    pi = generator.distribution.probabilities
    rates = generator.rates

    stationarity = stationarity_residual(rates, pi)
    balance = detailed_balance_residual(rates, pi)
    kernel = stationary_distribution(rates)
    kernel_tv = 0.5 * math.fsum(np.abs(kernel - pi).tolist())
    mid = data.grid.steps // 2
    gibbs = partial_gibbs_check(
        generator.distribution, cfg.hamiltonian, (0, data.k - 1), (mid, mid)
    ) if data.grid.steps >= 2 else 0.0

    expected = cfg.get("criteria.expected_states")
    if expected is not None:
        report.add("state_count", len(pi) == expected, len(pi), expected)
    report.add("stationarity", stationarity <= cfg.require("criteria.stationarity_tol"),
               stationarity, cfg.require("criteria.stationarity_tol"))
    report.add("detailed_balance", balance <= cfg.require("criteria.detailed_balance_tol"),
               balance, cfg.require("criteria.detailed_balance_tol"))
    report.add("null_space_tv", kernel_tv <= 1e-8, kernel_tv, 1e-8)
    report.metrics.update({
        "states": len(pi),
        "row_sum_max": float(np.max(np.abs(rates.sum(axis=1)))),
        "partial_gibbs_gap": gibbs,
        "log_partition": generator.distribution.log_partition,
    })

    distribution_to_json(generator.distribution, cfg.out_dir / "distribution.json")
    return [
        {"state_id": sid, "boltzmann": float(p), "stationary": float(s)}
        for sid, p, s in zip(generator.distribution.state_ids(), pi, kernel)
    ]


# ---------------------------------------------------------------------------
# E2 : MCMC contre loi exacte
# ---------------------------------------------------------------------------

def _run_e2(cfg: ExperimentConfig, report: ExperimentReport) -> List[Dict]:
    data = cfg.ensemble_data()
    generator = build_generator(data, cfg.hamiltonian, cfg.count("mcmc.state_cap"))
    exact = generator.distribution
    ids = {state.heights(): sid for state, sid in zip(exact.states, exact.state_ids())}

    samples = cfg.count("mcmc.samples")
    burn_in = cfg.get("mcmc.burn_in")
    thinning = cfg.get("mcmc.thinning")
    budgets = _split(samples, cfg.replicas)

    def replica(stream_id: int) -> Counter:
        n = budgets[stream_id - STREAM_E2]
        run = RunConfig.for_samples(data, n, cfg.seed, burn_in, thinning)
        return sample_state_keys(data, cfg.hamiltonian, run, seed_policy(cfg.seed, stream_id))

    counts: Counter = Counter()
    for part in cfg.pool().map(replica, stream_ids(STREAM_E2, len(budgets))):
        counts.update(part)
    empirical = {ids[key]: n / samples for key, n in sorted(counts.items())}
    exact_map = exact.as_dict()
    tv = total_variation(empirical, exact_map)

    threshold = cfg.require("criteria.tv_threshold")
    report.add("total_variation", tv < threshold, tv, threshold)
    report.metrics.update({"samples": samples, "replicas": len(budgets), "states_visited": len(empirical)})
    return [
        {"state_id": sid, "exact": exact_map[sid], "empirical": empirical.get(sid, 0.0)}
        for sid in exact.state_ids()
    ]


# ---------------------------------------------------------------------------
# E3 : couplage monotone
# ---------------------------------------------------------------------------

def _run_e3(cfg: ExperimentConfig, report: ExperimentReport) -> Optional[List[Dict]]:
    bottom = cfg.ensemble_data("data")
    top = cfg.ensemble_data("coupling")
    try:
        coupled = CoupledState.from_data(bottom, top)
    except DomainError as e:
        raise ConfigError(f"Données du couplage non ordonnées: {e}") from e
    run = RunConfig(
        cfg.count("mcmc.event_budget"), cfg.seed,
        int(cfg.get("mcmc.burn_in") or 0), int(cfg.get("mcmc.thinning") or 1000)
    )
    max_violations = cfg.require("criteria.max_violations")
    try:
        result = run_coupled(
            coupled, cfg.hamiltonian, run, seed_policy(cfg.seed, STREAM_E3),
            allow_nonconvex=bool(cfg.get("coupling.allow_nonconvex", False)),
            debug_checks=cfg.debug_checks,
            trace_dir=cfg.out_dir,
        )
    except CouplingViolationError as e:
        report.add("order_violations", False, ">= 1", max_violations)
        report.metrics["trace"] = e.trace_path
        return None

    report.add("order_violations", result.violations <= max_violations, result.violations, max_violations)
    report.metrics.update(result.to_dict())
    states = [s for pair in result.samples for s in pair]
    if states:
        export_paths(states, cfg.out_dir / "coupled_paths.csv", include_boundaries=True)
    return [
        {"sample": i, "bottom_max": max(max(h) for h in b.heights()), "top_max": max(max(h) for h in t.heights())}
        for i, (b, t) in enumerate(result.samples)
    ]


# ---------------------------------------------------------------------------
# E4 : formules de pont
# ---------------------------------------------------------------------------

def _run_e4(cfg: ExperimentConfig, report: ExperimentReport) -> List[Dict]:
    rows: List[Dict] = []
    sigma = cfg.require("criteria.sigma")

    # Maximum du pont
    T, a, beta = cfg.require("bridge_max.T"), cfg.require("bridge_max.a"), cfg.require("bridge_max.beta")
    formula = max_exceedance_prob(T, a, beta)
    points = cfg.count("bridge_max.grid_points")
    budgets = _split(cfg.count("bridge_max.samples"), cfg.replicas)
    spec = BridgeSpec(0.0, T, 0.0, a)

    def max_replica(stream_id: int) -> np.ndarray:
        n = budgets[stream_id - STREAM_E4_MAX]
        return bridge_max_on_grid(spec, points, n, seed_policy(cfg.seed, stream_id))

    maxima = np.concatenate(cfg.pool().map(max_replica, stream_ids(STREAM_E4_MAX, len(budgets))))
    estimate = float(np.mean(maxima >= beta))
    rel_gap = abs(estimate - formula) / formula
    report.add("bridge_max_below_formula", estimate <= formula, estimate, formula)
    report.add("bridge_max_relative_gap", rel_gap <= cfg.require("criteria.max_rel_tol"),
               rel_gap, cfg.require("criteria.max_rel_tol"))
    rows.append({"check": "bridge_max", "value": estimate, "reference": formula,
                 "stderr": math.sqrt(estimate * (1 - estimate) / maxima.size)})

    # Ratio de Mills
    c0, x_max, step = cfg.require("mills.c0"), cfg.require("mills.x_max"), cfg.require("mills.step")
    xs = np.arange(0.0, x_max + step / 2, step)
    mills_ok = True
    for x in xs:
        m = mills_ratio(float(x), c0)
        mills_ok &= m.lower_bound <= m.ratio <= m.upper_bound
        rows.append({"check": "mills", "value": m.ratio, "reference": float(x), "stderr": 0.0})
    report.add("mills_bounds", mills_ok, len(xs), c0)

    # Probabilité F : quadrature contre Monte-Carlo
    mc_samples = cfg.count("two_time.mc_samples")
    worst = 0.0
    for i, case in enumerate(cfg.require("two_time.cases")):
        p, q, x, y, c, d, r = (float(v) for v in case)
        bridge = BridgeSpec(p, q, x, y)
        query = TwoTimeQuery(c, d, r)
        exact = two_time_below_prob(bridge, query)
        values = sample_bridge_on_grid(bridge, [c, d], seed_policy(cfg.seed, STREAM_E4_TWO_TIME + i), size=mc_samples)
        freq = float(np.mean((values[:, 0] <= r) & (values[:, 1] <= r)))
        stderr = math.sqrt(max(freq * (1 - freq), 1e-300) / mc_samples)
        score = abs(exact - freq) / stderr
        worst = max(worst, score)
        rows.append({"check": f"two_time_{i}", "value": freq, "reference": exact, "stderr": stderr})
    report.add("two_time_agreement", worst <= sigma, worst, sigma)
    report.metrics.update({"bridge_max_formula": formula, "bridge_max_estimate": estimate})
    return rows


# ---------------------------------------------------------------------------
# E5 : limite de normalisation
# ---------------------------------------------------------------------------

def _run_e5(cfg: ExperimentConfig, report: ExperimentReport) -> List[Dict]:
    center = cfg.require("normalization.center")
    js = range(cfg.require("normalization.j_min"), cfg.require("normalization.j_max") + 1)
    intervals = [(center - 2.0 ** -j / 2, center + 2.0 ** -j / 2) for j in js]
    estimates = normalization_limit_estimate(
        intervals,
        cfg.require("normalization.entrance"),
        cfg.require("normalization.exit"),
        cfg.require("normalization.lower"),
        cfg.hamiltonian,
        cfg.count("normalization.samples"),
        seed_policy(cfg.seed, STREAM_E5),
        quadrature_points=cfg.count("normalization.quadrature_points"),
        batch=cfg.batch,
    )
    values = [e.estimate for e in estimates]
    errors = [e.stderr for e in estimates]
    sigma = cfg.require("criteria.sigma")
    final_min = cfg.require("criteria.final_min")
    report.add("nondecreasing", nondecreasing_within(values, errors, sigma), values, sigma)
    report.add("final_estimate", values[-1] >= final_min, values[-1], final_min)
    report.add("in_unit_interval", all(0.0 < v <= 1.0 for v in values), min(values), 1.0)
    return [dict(e.to_record(), j=j) for j, e in zip(js, estimates)]


# ---------------------------------------------------------------------------
# E6 : limite du ratio central et vérification λ-exponentielle
# ---------------------------------------------------------------------------

def _run_e6(cfg: ExperimentConfig, report: ExperimentReport) -> List[Dict]:
    H = cfg.hamiltonian
    if H.lam is None:
        raise ConfigError(f"E6 exige un hamiltonien λ-exponentiel (reçu {H.name})")
    t1, z = cfg.require("observable.t1"), cfg.require("observable.z")
    lower = cfg.require("observable.lower")
    x, y = cfg.require("observable.x"), cfg.require("observable.y")
    steps = cfg.count("observable.steps_per_window")
    cond_budgets = _split(cfg.count("observable.conditioned_samples"), cfg.replicas)
    plain_budgets = _split(cfg.count("observable.plain_samples"), cfg.replicas)
    predicted = predicted_limit(z, H.lam, float(lower))

    rows, ratios, errors = [], [], []
    for wi, w in enumerate(cfg.require("observable.w_ladder")):
        try:
            sched = schedule(t1, z, H.lam, w, H)
        except DomainError as e:
            raise ConfigError(f"Calendrier non admissible pour w={w}: {e}") from e
        spec = sched.bridge(x, y)
        base = STREAM_E6 + 10 * wi

        def replica(stream_id: int, sched=sched, spec=spec, base=base) -> RatioEstimate:
            r = stream_id - base
            return estimate_conditioned_ratio(
                spec, sched, lower, H, cond_budgets[r], seed_policy(cfg.seed, stream_id),
                plain_samples=plain_budgets[r], steps_per_window=steps, batch=cfg.batch,
            )

        estimate = RatioEstimate.combine(cfg.pool().map(replica, stream_ids(base, len(cond_budgets))))
        ratios.append(estimate.ratio)
        errors.append(estimate.stderr)
        rows.append(dict(estimate.to_record(w, predicted, cfg.seed), error=abs(estimate.ratio - predicted)))

    sigma = cfg.require("criteria.sigma")
    gaps = [abs(r - predicted) for r in ratios]
    report.add("error_decreasing", strictly_decreasing_within(gaps, errors, 2.0), gaps, 2.0)
    final_tol = max(cfg.require("criteria.rel_tol") * predicted, sigma * errors[-1])
    report.add("final_within_band", gaps[-1] <= final_tol, gaps[-1], final_tol)
    domination = max(r - 1.0 - sigma * e for r, e in zip(ratios, errors))
    report.add("domination_bound", domination <= 0.0, domination, 0.0)

    # Condition λ-exponentielle du hamiltonien et de la référence
    exact_tol = cfg.require("lambda_check.exact_tol")
    pure = exponential(H.lam)
    exact_dev = max(
        lambda_exponential_deviation(pure, H.lam, cfg.require("lambda_check.M_exact"), yv)
        for yv in cfg.require("lambda_check.y_exact")
    )
    report.add("lambda_exact", exact_dev <= exact_tol, exact_dev, exact_tol)
    reference = parse_hamiltonian(cfg.require("lambda_check.reference"))
    trend = lambda_exponential_trend(
        reference, reference.lam, cfg.require("lambda_check.M"), cfg.require("lambda_check.ys")
    )
    final_max = cfg.require("lambda_check.final_max")
    report.add("lambda_trend_decreasing", trend.strictly_decreasing(), list(trend.deviations), None)
    report.add("lambda_trend_final", trend.deviations[-1] < final_max, trend.deviations[-1], final_max)
    report.metrics.update({"predicted": predicted, "ratios": ratios, "stderrs": errors})
    return rows


# ---------------------------------------------------------------------------
# E7 : événements de queue et convergence faible
# ---------------------------------------------------------------------------

def _run_e7(cfg: ExperimentConfig, report: ExperimentReport) -> List[Dict]:
    lam, M = cfg.require("tail.lambda"), cfg.require("tail.M")
    x, y = cfg.require("tail.x"), cfg.require("tail.y")
    b_exponent = cfg.require("tail.b_exponent")
    side, middle = cfg.count("tail.side_points"), cfg.count("tail.middle_points")
    budgets = _split(cfg.count("tail.samples"), cfg.replicas)

    rows, freqs, errors = [], [], []
    for ni, n in enumerate(cfg.require("tail.n_ladder")):
        window = tail_window(int(n), lam, b_exponent)
        base = STREAM_E7_TAIL + 10 * ni

        def replica(stream_id: int, window=window, base=base) -> TailEventEstimate:
            return tail_event_conditional(
                window, M, x, y, budgets[stream_id - base], seed_policy(cfg.seed, stream_id),
                side_points=side, middle_points=middle, batch=cfg.batch,
            )

        estimate = TailEventEstimate.combine(cfg.pool().map(replica, stream_ids(base, len(budgets))))
        freqs.append(estimate.frequency)
        errors.append(estimate.stderr)
        rows.append(estimate.to_record())

    sigma = cfg.require("criteria.sigma")
    report.add("tail_decreasing", strictly_decreasing_within(freqs, errors, sigma), freqs, sigma)

    # Convergence faible du milieu du chemin libre
    grid = make_grid(cfg.require("geometry.a"), cfg.require("geometry.b"), cfg.count("weak.n"))
    x_index, y_index = cfg.require("weak.x_index"), cfg.require("weak.y_index")
    heights = sample_free_paths(
        grid, x_index, y_index, cfg.count("weak.samples"), seed_policy(cfg.seed, STREAM_E7_WEAK)
    )
    mid = grid.steps // 2
    t = grid.times()[mid]
    span = grid.b - grid.a
    sd = math.sqrt((t - grid.a) * (grid.b - t) / span)
    center = (x_index + (t - grid.a) / span * (y_index - x_index)) * grid.dx
    ks = lattice_ks_distance(heights[:, mid], grid.dx, sd, center)
    threshold = cfg.require("criteria.ks_threshold")
    report.add("weak_convergence_ks", ks < threshold, ks, threshold)
    report.metrics.update({
        "tail_frequencies": freqs,
        "tail_stderrs": errors,
        "weak_n": grid.n,
        "weak_samples": int(heights.shape[0]),
        "weak_midpoint_sd": sd,
    })
    return rows


EXPERIMENTS: Dict[str, Callable[[ExperimentConfig, ExperimentReport], Optional[List[Dict]]]] = {
    "E1": _run_e1,
    "E2": _run_e2,
    "E3": _run_e3,
    "E4": _run_e4,
    "E5": _run_e5,
    "E6": _run_e6,
    "E7": _run_e7,
}


def run_experiment(manager: ConfigManager, write: bool = True) -> ExperimentReport:
    """
    Exécute l'expérience configurée, puis écrit report.json, data.csv et timing.json.

    Args:
        manager: Configuration chargée (profil et surcharges appliqués)
        write: Écrire les fichiers de sortie

    Returns:
        Rapport de l'expérience
    """
    cfg = ExperimentConfig.from_manager(manager)
    runner = EXPERIMENTS.get(cfg.experiment)
    if runner is None:
        raise ConfigError(f"Expérience inconnue: {cfg.experiment}")

    logger.info(f"Expérience {cfg.experiment} (H={cfg.hamiltonian_name}, graine={cfg.seed}, workers={cfg.workers})")
    report = ExperimentReport(cfg.experiment, cfg.seed, manager.as_dict())
    if cfg.debug_checks:
        report.metrics["hamiltonian_checks"] = preflight_hamiltonian(cfg.hamiltonian).to_dict()
    started = time.perf_counter()
    rows = runner(cfg, report)
    report.wall_clock = time.perf_counter() - started

    if write:
        if rows:
            export_rows(rows, cfg.out_dir / manager.get("output.data", "data.csv"))
        report.write(cfg.out_dir, manager.get("output.report", "report.json"))
    logger.info(f"Expérience {cfg.experiment} {'réussie' if report.passed else 'en échec'} "
                f"({report.wall_clock:.1f} s)")
    return report
