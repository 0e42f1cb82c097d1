"""
Chaîne de Markov de Metropolis sur les ensembles discrets : propositions {-1, 0, +1},
acceptation locale, couplage monotone à aléa partagé et générateur exact.
"""

import json
import math
from collections import Counter, deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Mapping, Optional, Tuple

import numpy as np
from scipy.linalg import null_space

from .hamiltonian import Hamiltonian, HamiltonianReport, validate_hamiltonian
from .lattice import (
    DEFAULT_STATE_CAP,
    BoltzmannDistribution,
    DiscretePath,
    EnsembleData,
    EnsembleState,
    exact_boltzmann_for,
    state_id,
)
from ..utils.errors import CouplingViolationError, DomainError, NonConvexHamiltonianError, StateSpaceError
from ..utils.logger import get_logger

logger = get_logger()

EVENT_BLOCK = 8192
TRACE_DEPTH = 256
# Fenêtre des vérifications de H en mode debug
CONVEXITY_WINDOW = (-20.0, 20.0)
MINUS_INFINITY_TOL = 1e-12


def _gap(upper: float, lower: float) -> float:
    """Écart lower - upper en réels étendus (version scalaire de lattice.interaction_gaps)."""
    if upper == math.inf or lower == -math.inf:
        return -math.inf
    gap = lower - upper
    if gap == math.inf:
        raise DomainError("Écart +inf entre deux courbes: H n'est pas défini en +inf")
    return gap


def preflight_hamiltonian(hamiltonian: Hamiltonian) -> HamiltonianReport:
    """
    Vérifications complètes de H avant une chaîne (mode general.debug_checks).

    Positivité et limite en -inf sont bloquantes ; la convexité est rendue dans le
    rapport et seul le couplage monotone l'exige.

    Args:
        hamiltonian: Hamiltonien

    Returns:
        Rapport de validation sur CONVEXITY_WINDOW

    Raises:
        DomainError: H négatif sur la fenêtre ou H(-inf) déclaré incohérent
    """
    report = validate_hamiltonian(hamiltonian, *CONVEXITY_WINDOW)
    if not report.nonnegative:
        raise DomainError(f"{hamiltonian.name} prend des valeurs négatives sur {CONVEXITY_WINDOW}")
    if report.minus_infinity_gap > MINUS_INFINITY_TOL:
        raise DomainError(
            f"{hamiltonian.name}: H(-inf)={hamiltonian.value_at_minus_infinity} incohérent "
            f"(écart {report.minus_infinity_gap:.3g})"
        )
    logger.debug(f"Vérifications de {hamiltonian.name}: {report.to_dict()}")
    return report


class ChainState:
    """
    État mutable d'une chaîne : hauteurs entières des k courbes, extrémités et bords fixes.

    Les courbes sont indexées à partir de 0 (0 = courbe du haut, sous f).
    """

    def __init__(self, state: EnsembleState):
        self.grid = state.grid
        self.f = state.f
        self.g = state.g
        self.heights: List[List[int]] = [list(p.indices()) for p in state.paths]
        self._f = list(state.f.values)
        self._g = list(state.g.values)
        self.accepted = 0

    @classmethod
    def from_data(cls, data: EnsembleData) -> "ChainState":
        """Chaîne partant de l'état maximal."""
        return cls(data.maximal_state())

    @property
    def k(self) -> int:
        return len(self.heights)

    @property
    def interior_sites(self) -> int:
        return self.k * (self.grid.steps - 1)

    def is_singleton(self) -> bool:
        """Vrai si l'espace d'états n'a qu'un élément (aucun mouvement possible)."""
        steps = self.grid.steps
        return all(abs(h[-1] - h[0]) == steps for h in self.heights)

    def snapshot(self) -> EnsembleState:
        """Copie immuable de l'état courant."""
        paths = tuple(DiscretePath.from_indices(h) for h in self.heights)
        return EnsembleState(self.grid, paths, self.f, self.g)

    def key(self) -> Tuple[Tuple[int, ...], ...]:
        return tuple(tuple(h) for h in self.heights)

    def neighbours(self, curve: int, site: int) -> Tuple[float, float]:
        """Valeurs au-dessus et au-dessous de (curve, site), bords compris."""
        dx = self.grid.dx
        above = self._f[site] if curve == 0 else self.heights[curve - 1][site] * dx
        below = self._g[site] if curve == self.k - 1 else self.heights[curve + 1][site] * dx
        return above, below

    def try_update(self, curve: int, site: int, delta: int, uniform: float, hamiltonian: Hamiltonian) -> bool:
        """
        Applique un événement (site, δ, U) ; retourne True si la mise à jour est acceptée.
        """
        candidate = propose(self, curve, site, delta)
        if candidate is None:
            return False
        if delta == 0:
            return True
        log_ratio = acceptance_log_ratio(self, curve, site, candidate, hamiltonian)
        if log_ratio >= 0.0 or uniform <= math.exp(log_ratio):
            self.heights[curve][site] = candidate
            self.accepted += 1
            return True
        return False


def propose(state: ChainState, curve: int, site: int, delta: int) -> Optional[int]:
    """
    Candidat hauteur + δ au site (curve, site), ou None si un incrément voisin sort de {-1, 0, +1}.

    Args:
        state: État de la chaîne
        curve: Courbe (0..k-1)
        site: Temps de grille intérieur (0 < site < n²)
        delta: Pas proposé dans {-1, 0, +1}

    Returns:
        Nouvelle hauteur entière, ou None
    """
    if not 0 < site < state.grid.steps:
        raise DomainError(f"Le site {site} n'est pas intérieur (0 < r < {state.grid.steps})")
    if not 0 <= curve < state.k:
        raise DomainError(f"Courbe {curve} hors de 0..{state.k - 1}")
    path = state.heights[curve]
    candidate = path[site] + delta
    if abs(candidate - path[site - 1]) > 1 or abs(path[site + 1] - candidate) > 1:
        return None
    return candidate


def acceptance_log_ratio(state: ChainState, curve: int, site: int, candidate: int, hamiltonian: Hamiltonian) -> float:
    """
    Différence locale des log-poids entre l'état modifié et l'état courant.

    Args:
        state: État de la chaîne
        curve: Courbe (0..k-1)
        site: Temps de grille intérieur
        candidate: Hauteur proposée
        hamiltonian: Hamiltonien

    Returns:
        log W(après) - log W(avant)
    """
    dx = state.grid.dx
    above, below = state.neighbours(curve, site)
    old = state.heights[curve][site] * dx
    new = candidate * dx
    H = hamiltonian.scalar
    return -state.grid.dt * (
        H(_gap(above, new)) + H(_gap(new, below)) - H(_gap(above, old)) - H(_gap(old, below))
    )


@dataclass(frozen=True)
class EventRecord:
    """Événement consommé : site, pas proposé, uniforme et décision."""

    curve: int
    site: int
    delta: int
    uniform: float
    accepted: bool


class EventStream:
    """
    Flux d'événements (courbe, site, δ, U) tirés par blocs vectorisés.

    Site uniforme parmi les k·(n²-1) sites intérieurs (chaîne de sauts des horloges de taux 1).
    """

    def __init__(self, rng: np.random.Generator, k: int, steps: int, block: int = EVENT_BLOCK):
        interior = steps - 1
        if k < 1 or interior < 1:
            raise DomainError(f"Aucun site intérieur (k={k}, n²={steps})")
        self.rng = rng
        self.k = k
        self.interior = interior
        self.block = block
        self._events: List[Tuple[int, int, int, float]] = []
        self._position = 0
        self.consumed = 0

    def _refill(self) -> None:
        sites = self.rng.integers(0, self.k * self.interior, self.block)
        deltas = self.rng.integers(-1, 2, self.block)
        uniforms = self.rng.random(self.block)
        curves = (sites // self.interior).tolist()
        positions = (sites % self.interior + 1).tolist()
        self._events = list(zip(curves, positions, deltas.tolist(), uniforms.tolist()))
        self._position = 0

    def next_event(self) -> Tuple[int, int, int, float]:
        if self._position >= len(self._events):
            self._refill()
        event = self._events[self._position]
        self._position += 1
        self.consumed += 1
        return event

    def __iter__(self) -> Iterator[Tuple[int, int, int, float]]:
        while True:
            yield self.next_event()


def step(state: ChainState, stream: EventStream, hamiltonian: Hamiltonian) -> EventRecord:
    """
    Consomme un événement du flux et l'applique à la chaîne.

    Args:
        state: État de la chaîne
        stream: Flux d'événements
        hamiltonian: Hamiltonien

    Returns:
        Enregistrement de l'événement
    """
    curve, site, delta, uniform = stream.next_event()
    accepted = state.try_update(curve, site, delta, uniform, hamiltonian)
    return EventRecord(curve, site, delta, uniform, accepted)


@dataclass(frozen=True)
class RunConfig:
    """Budget d'une exécution : événements, graine, chauffe et espacement des échantillons."""

    event_budget: int
    seed: int
    burn_in: int = 0
    thinning: int = 1

    def __post_init__(self):
        if self.event_budget < 1 or self.thinning < 1 or self.burn_in < 0:
            raise DomainError(f"Budget MCMC invalide: {self}")
        if self.event_budget < self.burn_in:
            raise DomainError(f"event_budget={self.event_budget} < burn_in={self.burn_in}")

    @classmethod
    def for_samples(
        cls,
        data: EnsembleData,
        samples: int,
        seed: int,
        burn_in: Optional[int] = None,
        thinning: Optional[int] = None
    ) -> "RunConfig":
        """
        Budget pour un nombre d'échantillons donné ; chauffe 50·k·n² et espacement k·n² par défaut.
        """
        sites = data.k * data.grid.steps
        burn_in = 50 * sites if burn_in is None else burn_in
        thinning = sites if thinning is None else thinning
        return cls(burn_in + samples * thinning, seed, burn_in, thinning)

    @property
    def sample_count(self) -> int:
        return (self.event_budget - self.burn_in) // self.thinning


def sample_ensemble(
    data: EnsembleData,
    hamiltonian: Hamiltonian,
    config: RunConfig,
    rng: np.random.Generator,
    debug_checks: bool = False
) -> Iterator[EnsembleState]:
    """
    Échantillonneur à une chaîne : part de l'état maximal et produit les états espacés après chauffe.

    Args:
        data: Données de bord
        hamiltonian: Hamiltonien
        config: Budget d'exécution
        rng: Générateur aléatoire
        debug_checks: Valide H (preflight_hamiltonian) avant de lancer la chaîne

    Returns:
        Itérateur sur les états de l'ensemble
    """
    if debug_checks:
        preflight_hamiltonian(hamiltonian)
    return _iterate_chain(data, hamiltonian, config, rng)


def _iterate_chain(
    data: EnsembleData,
    hamiltonian: Hamiltonian,
    config: RunConfig,
    rng: np.random.Generator
) -> Iterator[EnsembleState]:
    chain = ChainState.from_data(data)
    if chain.is_singleton() or data.grid.steps < 2:
        logger.warning("Espace d'états réduit à un seul élément: la chaîne est trivialement stationnaire")
        snapshot = chain.snapshot()
        for _ in range(config.sample_count):
            yield snapshot
        return

    stream = EventStream(rng, chain.k, data.grid.steps)
    update = chain.try_update
    for _ in range(config.burn_in):
        update(*stream.next_event(), hamiltonian)
    for _ in range(config.sample_count):
        for _ in range(config.thinning):
            update(*stream.next_event(), hamiltonian)
        yield chain.snapshot()


def sample_state_keys(
    data: EnsembleData,
    hamiltonian: Hamiltonian,
    config: RunConfig,
    rng: np.random.Generator,
    debug_checks: bool = False
) -> Counter:
    """
    Comme sample_ensemble mais compte directement les états visités (clé = hauteurs).

    Returns:
        Compteur {hauteurs: occurrences}
    """
    if debug_checks:
        preflight_hamiltonian(hamiltonian)
    counts: Counter = Counter()
    chain = ChainState.from_data(data)
    if chain.is_singleton() or data.grid.steps < 2:
        logger.warning("Espace d'états réduit à un seul élément: la chaîne est trivialement stationnaire")
        counts[chain.key()] = config.sample_count
        return counts

    stream = EventStream(rng, chain.k, data.grid.steps)
    update = chain.try_update
    for _ in range(config.burn_in):
        update(*stream.next_event(), hamiltonian)
    for _ in range(config.sample_count):
        for _ in range(config.thinning):
            update(*stream.next_event(), hamiltonian)
        counts[chain.key()] += 1
    return counts


# ---------------------------------------------------------------------------
# Couplage monotone
# ---------------------------------------------------------------------------

@dataclass
class CoupledState:
    """Deux chaînes (bas, haut) sur la même grille, partageant le même flux d'événements."""

    bottom: ChainState
    top: ChainState

    @classmethod
    def from_data(cls, bottom: EnsembleData, top: EnsembleData) -> "CoupledState":
        """
        Construit le couple depuis les états maximaux, après vérification de l'ordre des données.
        """
        if bottom.grid != top.grid or bottom.k != top.k:
            raise DomainError("Les deux chaînes doivent partager la grille et k")
        if any(x > u for x, u in zip(bottom.entrance, top.entrance)) or \
                any(y > v for y, v in zip(bottom.exit, top.exit)):
            raise DomainError("Entrées/sorties non ordonnées: exigé x_i <= u_i et y_i <= v_i")
        if (bottom.f.as_array() > top.f.as_array()).any() or (bottom.g.as_array() > top.g.as_array()).any():
            raise DomainError("Bords non ordonnés: exigé f_bas <= f_haut et g_bas <= g_haut")
        coupled = cls(ChainState.from_data(bottom), ChainState.from_data(top))
        if coupled.first_violation() is not None:
            raise DomainError("États initiaux non ordonnés")
        return coupled

    def first_violation(self) -> Optional[Tuple[int, int]]:
        """Premier (courbe, site) où bas > haut, ou None."""
        for curve, (low, high) in enumerate(zip(self.bottom.heights, self.top.heights)):
            for site, (a, b) in enumerate(zip(low, high)):
                if a > b:
                    return curve, site
        return None


@dataclass
class CouplingResult:
    """Bilan d'une exécution couplée."""

    events: int
    violations: int
    accepted_bottom: int
    accepted_top: int
    first_violation_event: Optional[int] = None
    samples: List[Tuple[EnsembleState, EnsembleState]] = field(default_factory=list)

    def to_dict(self) -> Dict:
        return {
            "events": self.events,
            "violations": self.violations,
            "accepted_bottom": self.accepted_bottom,
            "accepted_top": self.accepted_top,
            "first_violation_event": self.first_violation_event,
            "samples": len(self.samples),
        }


def _write_trace(trace: Dict, trace_dir: Optional[Path]) -> Optional[str]:
    if trace_dir is None:
        return None
    path = Path(trace_dir) / "coupling_violation.json"
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(trace, f, indent=2, sort_keys=True)
    except OSError as e:
        logger.error(f"Impossible d'écrire la trace de violation: {e}", exc_info=True)
        raise
    return str(path)


def run_coupled(
    coupled: CoupledState,
    hamiltonian: Hamiltonian,
    config: RunConfig,
    rng: np.random.Generator,
    allow_nonconvex: bool = False,
    debug_checks: bool = False,
    trace_dir: Optional[Path] = None
) -> CouplingResult:
    """
    Fait évoluer les deux chaînes avec le même flux (site, δ, U) et vérifie l'ordre après chaque événement.

    Args:
        coupled: Couple ordonné
        hamiltonian: Hamiltonien (déclaré convexe)
        config: Budget d'événements, chauffe et espacement des échantillons
        rng: Générateur du flux partagé
        allow_nonconvex: Mode diagnostic : accepte H non convexe et compte les violations
        debug_checks: Valide H avant de lancer (preflight_hamiltonian) ; une convexité déclarée mais démentie devient non convexe
        trace_dir: Répertoire de la trace JSON en cas de violation

    Returns:
        Bilan de l'exécution
    """
    convex = hamiltonian.declared_convex
    if debug_checks:
        checks = preflight_hamiltonian(hamiltonian)
        if convex and not checks.convex:
            logger.warning(f"{hamiltonian.name} déclaré convexe mais le test du point milieu échoue")
            convex = False
    if not convex:
        if not allow_nonconvex:
            raise NonConvexHamiltonianError(
                f"Le couplage monotone exige un hamiltonien convexe ({hamiltonian.name})"
            )
        logger.warning(f"Couplage avec {hamiltonian.name} non convexe: violations comptées, non fatales")

    bottom, top = coupled.bottom, coupled.top
    result = CouplingResult(0, 0, 0, 0)
    if bottom.grid.steps < 2:
        logger.warning("Aucun site intérieur: couplage trivial")
        return result

    stream = EventStream(rng, bottom.k, bottom.grid.steps)
    recent: deque = deque(maxlen=TRACE_DEPTH)
    b_update, t_update = bottom.try_update, top.try_update
    low_heights, high_heights = bottom.heights, top.heights

    for index in range(config.event_budget):
        curve, site, delta, uniform = stream.next_event()
        b_update(curve, site, delta, uniform, hamiltonian)
        t_update(curve, site, delta, uniform, hamiltonian)
        recent.append((index, curve, site, delta, uniform))

        if low_heights[curve][site] > high_heights[curve][site]:
            result.violations += 1
            if result.first_violation_event is None:
                result.first_violation_event = index
            if not allow_nonconvex:
                trace = {
                    "event_index": index,
                    "curve": curve,
                    "site": site,
                    "delta": delta,
                    "uniform": uniform,
                    "bottom": bottom.heights,
                    "top": top.heights,
                    "recent_events": [list(e) for e in recent],
                }
                path = _write_trace(trace, trace_dir)
                logger.error(f"Violation de l'ordre à l'événement {index} (courbe {curve}, site {site})")
                raise CouplingViolationError(
                    f"Ordre rompu à l'événement {index}, courbe {curve}, site {site}", path
                )

        if index >= config.burn_in and (index + 1 - config.burn_in) % config.thinning == 0:
            result.samples.append((bottom.snapshot(), top.snapshot()))

    result.events = config.event_budget
    result.accepted_bottom = bottom.accepted
    result.accepted_top = top.accepted
    logger.info(
        f"Couplage terminé: {result.events} événements, {result.violations} violation(s), "
        f"acceptations bas/haut {result.accepted_bottom}/{result.accepted_top}"
    )
    return result


# ---------------------------------------------------------------------------
# Générateur exact
# ---------------------------------------------------------------------------

@dataclass
class GeneratorMatrix:
    """Matrice de taux Q sur les états énumérés, avec la loi exacte associée."""

    distribution: BoltzmannDistribution
    rates: np.ndarray


def build_generator(data: EnsembleData, hamiltonian: Hamiltonian, cap: int = DEFAULT_STATE_CAP) -> GeneratorMatrix:
    """
    Matrice de taux : (1/3)·min(1, W'/W) entre états différant d'un pas en un site, diagonale = -somme.

    Args:
        data: Données de bord
        hamiltonian: Hamiltonien
        cap: Taille maximale de l'espace d'états

    Returns:
        Générateur et loi exacte
    """
    distribution = exact_boltzmann_for(data, hamiltonian, cap)
    keys = [s.heights() for s in distribution.states]
    index = {key: m for m, key in enumerate(keys)}
    size = len(keys)
    rates = np.zeros((size, size))
    steps = data.grid.steps
    log_w = distribution.log_weights

    for m, key in enumerate(keys):
        heights = [list(h) for h in key]
        for curve in range(data.k):
            path = heights[curve]
            for site in range(1, steps):
                old = path[site]
                for delta in (-1, 1):
                    candidate = old + delta
                    if abs(candidate - path[site - 1]) > 1 or abs(path[site + 1] - candidate) > 1:
                        continue
                    path[site] = candidate
                    target = index[tuple(tuple(h) for h in heights)]
                    path[site] = old
                    rates[m, target] += min(1.0, math.exp(log_w[target] - log_w[m])) / 3.0
        rates[m, m] = -math.fsum(rates[m].tolist())

    logger.debug(f"Générateur construit: {size} états")
    return GeneratorMatrix(distribution, rates)


def stationary_distribution(rates: np.ndarray) -> np.ndarray:
    """
    Vecteur stationnaire : noyau de Qᵀ, normalisé en loi de probabilité.

    Args:
        rates: Générateur Q

    Returns:
        Loi stationnaire π
    """
    kernel = null_space(rates.T)
    if kernel.shape[1] != 1:
        raise StateSpaceError(f"Noyau de dimension {kernel.shape[1]}: chaîne non irréductible")
    vector = kernel[:, 0]
    vector = vector / vector.sum()
    return np.clip(vector, 0.0, None) / np.clip(vector, 0.0, None).sum()


def stationarity_residual(rates: np.ndarray, pi: np.ndarray) -> float:
    """max |Qᵀπ|."""
    return float(np.max(np.abs(rates.T @ pi)))


def detailed_balance_residual(rates: np.ndarray, pi: np.ndarray) -> float:
    """max |π_s q_{ss'} - π_{s'} q_{s's}|."""
    flows = pi[:, None] * rates
    return float(np.max(np.abs(flows - flows.T)))


def empirical_distribution(samples: Iterable) -> Dict[str, float]:
    """
    Fréquences empiriques par identifiant d'état.

    Args:
        samples: États (EnsembleState) ou identifiants

    Returns:
        {identifiant: fréquence}
    """
    counts: Counter = Counter(s if isinstance(s, str) else state_id(s) for s in samples)
    total = sum(counts.values())
    if total == 0:
        raise DomainError("Aucun échantillon")
    return {key: n / total for key, n in counts.items()}


def total_variation(p: Mapping[str, float], q: Mapping[str, float]) -> float:
    """Distance en variation totale (1/2)·Σ|p - q| sur l'union des supports."""
    keys = set(p) | set(q)
    return 0.5 * math.fsum(abs(p.get(key, 0.0) - q.get(key, 0.0)) for key in keys)


def domination_gap(bottom: BoltzmannDistribution, top: BoltzmannDistribution) -> float:
    """
    max sur (courbe, temps, niveau) de P_bas(Y ≥ h) - P_haut(Y ≥ h) ; <= 0 si le haut domine.

    Args:
        bottom: Loi exacte du bas
        top: Loi exacte du haut

    Returns:
        Écart maximal (négatif ou nul sous domination stochastique)
    """
    if bottom.data.grid != top.data.grid or bottom.data.k != top.data.k:
        raise DomainError("Les deux lois doivent partager la grille et k")
    low, high = bottom.heights_array(), top.heights_array()
    worst = -math.inf
    for curve in range(bottom.data.k):
        for time_index in range(bottom.data.grid.steps + 1):
            a, b = low[:, curve, time_index], high[:, curve, time_index]
            for level in np.union1d(a, b):
                gap = float(bottom.probabilities[a >= level].sum() - top.probabilities[b >= level].sum())
                worst = max(worst, gap)
    return worst
