"""
Monde discret : grilles, chemins à incréments {-1, 0, +1}, courbes de bord,
poids de Boltzmann discret, énumération exhaustive et lois exactes.
"""

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import logsumexp

from .bridge import standard_normal_cdf
from .hamiltonian import Hamiltonian, evaluate
from ..utils.errors import DomainError, StateSpaceError
from ..utils.logger import get_logger

logger = get_logger()

DEFAULT_STATE_CAP = 1_000_000

_SYMBOLS = {1: "+", 0: "0", -1: "-"}
_FROM_SYMBOL = {"+": 1, "0": 0, "-": -1}

CurveToken = Union[float, int, str, Callable[[np.ndarray], np.ndarray], "BoundaryCurve"]


@dataclass(frozen=True)
class Grid:
    """Grille (Δt, Δx) sur [a, b] à l'échelle n : Δt = (b-a)/n², Δx = √(3Δt/2)."""

    a: float
    b: float
    n: int
    dt: float = field(init=False)
    dx: float = field(init=False)

    def __post_init__(self):
        if not self.b > self.a:
            raise DomainError(f"Intervalle invalide: b={self.b} doit être > a={self.a}")
        if int(self.n) != self.n or self.n < 1:
            raise DomainError(f"L'échelle n doit être un entier >= 1 (reçu {self.n})")
        dt = (self.b - self.a) / self.n ** 2
        object.__setattr__(self, "dt", dt)
        object.__setattr__(self, "dx", math.sqrt(1.5 * dt))

    @property
    def steps(self) -> int:
        """Nombre de pas n²."""
        return self.n * self.n

    def times(self) -> np.ndarray:
        """Temps de grille a + m·Δt, m = 0..n²."""
        return self.a + np.arange(self.steps + 1) * self.dt


def make_grid(a: float, b: float, n: int) -> Grid:
    """
    Construit la grille de pas Δt = (b-a)/n².

    Args:
        a: Début de l'intervalle
        b: Fin de l'intervalle (> a)
        n: Échelle (>= 1)

    Returns:
        Grille
    """
    return Grid(float(a), float(b), int(n))


@dataclass(frozen=True)
class DiscretePath:
    """Chemin discret : indice de départ (valeur = indice·Δx) et incréments dans {-1, 0, +1}."""

    start_index: int
    increments: Tuple[int, ...]

    def __post_init__(self):
        if any(step not in (-1, 0, 1) for step in self.increments):
            raise DomainError(f"Incréments hors de {{-1, 0, +1}}: {self.increments}")

    @classmethod
    def from_indices(cls, indices: Sequence[int]) -> "DiscretePath":
        """Chemin à partir de ses hauteurs entières aux temps de grille."""
        heights = [int(h) for h in indices]
        return cls(heights[0], tuple(b - a for a, b in zip(heights, heights[1:])))

    @property
    def end_index(self) -> int:
        return self.start_index + sum(self.increments)

    def indices(self) -> List[int]:
        """Hauteurs entières aux n²+1 temps."""
        return list(itertools.accumulate(self.increments, initial=self.start_index))

    def values(self, dx: float) -> np.ndarray:
        """Valeurs réelles indice·Δx."""
        return np.asarray(self.indices(), dtype=float) * dx

    def symbols(self) -> str:
        return "".join(_SYMBOLS[step] for step in self.increments)


@dataclass(frozen=True)
class BoundaryCurve:
    """Courbe de bord évaluée aux temps de grille (finie, -inf ou +inf en chaque point)."""

    values: Tuple[float, ...]
    label: str = ""

    @classmethod
    def constant(cls, value: float, grid: Grid) -> "BoundaryCurve":
        return cls(tuple([float(value)] * (grid.steps + 1)), label=_format_token(float(value)))

    @classmethod
    def from_function(cls, function: Callable[[np.ndarray], np.ndarray], grid: Grid) -> "BoundaryCurve":
        """Évalue une courbe continue aux seuls temps de grille."""
        values = np.asarray(function(grid.times()), dtype=float)
        if values.shape != (grid.steps + 1,):
            raise DomainError("La courbe de bord doit renvoyer une valeur par temps de grille")
        return cls(tuple(float(v) for v in values), label=getattr(function, "__name__", "function"))

    @classmethod
    def from_token(cls, token: CurveToken, grid: Grid) -> "BoundaryCurve":
        """
        Convertit une valeur de configuration ("inf", "-inf", nombre, fonction) en courbe.

        Args:
            token: Jeton de configuration ou courbe déjà construite
            grid: Grille

        Returns:
            Courbe de bord
        """
        if isinstance(token, BoundaryCurve):
            if len(token.values) != grid.steps + 1:
                raise DomainError("Courbe de bord incompatible avec la grille")
            return token
        if callable(token):
            return cls.from_function(token, grid)
        try:
            value = float(token)
        except (TypeError, ValueError) as e:
            raise DomainError(f"Courbe de bord illisible: {token!r}") from e
        if math.isnan(value):
            raise DomainError("Courbe de bord NaN")
        return cls.constant(value, grid)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)

    def check_role(self, role: str) -> None:
        """
        Vérifie qu'une courbe +inf n'est utilisée qu'en haut (f), et -inf qu'en bas (g).

        Args:
            role: "f" (bord supérieur) ou "g" (bord inférieur)
        """
        values = self.as_array()
        if np.isnan(values).any():
            raise DomainError(f"Courbe de bord {role} contenant NaN")
        if role == "f" and (values == -np.inf).any():
            raise DomainError("Une courbe -inf n'est autorisée que comme bord inférieur g")
        if role == "g" and (values == np.inf).any():
            raise DomainError("Une courbe +inf n'est autorisée que comme bord supérieur f")


def _format_token(value: float) -> str:
    if value == math.inf:
        return "inf"
    if value == -math.inf:
        return "-inf"
    return repr(value)


@dataclass(frozen=True)
class EnsembleState:
    """k chemins discrets sur une grille commune, avec bords f (haut) et g (bas)."""

    grid: Grid
    paths: Tuple[DiscretePath, ...]
    f: BoundaryCurve
    g: BoundaryCurve

    def __post_init__(self):
        if not self.paths:
            raise DomainError("Un ensemble contient au moins une courbe")
        for path in self.paths:
            if len(path.increments) != self.grid.steps:
                raise DomainError(f"Chaque chemin doit avoir n² = {self.grid.steps} incréments")
        for curve in (self.f, self.g):
            if len(curve.values) != self.grid.steps + 1:
                raise DomainError("Courbe de bord incompatible avec la grille")
        self.f.check_role("f")
        self.g.check_role("g")

    @property
    def k(self) -> int:
        return len(self.paths)

    @property
    def entrance(self) -> Tuple[int, ...]:
        return tuple(p.start_index for p in self.paths)

    @property
    def exit(self) -> Tuple[int, ...]:
        return tuple(p.end_index for p in self.paths)

    def heights(self) -> Tuple[Tuple[int, ...], ...]:
        """Hauteurs entières, une ligne par courbe."""
        return tuple(tuple(p.indices()) for p in self.paths)

    def values(self) -> np.ndarray:
        """Matrice (k, n²+1) des valeurs réelles."""
        return np.asarray(self.heights(), dtype=float) * self.grid.dx


@dataclass(frozen=True)
class EnsembleData:
    """Données de bord d'un ensemble discret : grille, entrées/sorties (indices) et courbes f, g."""

    grid: Grid
    entrance: Tuple[int, ...]
    exit: Tuple[int, ...]
    f: BoundaryCurve
    g: BoundaryCurve

    def __post_init__(self):
        if len(self.entrance) != len(self.exit) or not self.entrance:
            raise DomainError("Entrées et sorties doivent avoir la même longueur k >= 1")
        self.f.check_role("f")
        self.g.check_role("g")

    @classmethod
    def build(
        cls,
        grid: Grid,
        entrance: Sequence[int],
        exit: Sequence[int],
        f: CurveToken = math.inf,
        g: CurveToken = -math.inf
    ) -> "EnsembleData":
        """Construit les données à partir de jetons de configuration."""
        return cls(
            grid,
            tuple(int(x) for x in entrance),
            tuple(int(y) for y in exit),
            BoundaryCurve.from_token(f, grid),
            BoundaryCurve.from_token(g, grid),
        )

    @property
    def k(self) -> int:
        return len(self.entrance)

    def is_singleton(self) -> bool:
        """Vrai si chaque courbe n'a qu'un seul chemin possible (|y - x| = n²)."""
        return all(abs(y - x) == self.grid.steps for x, y in zip(self.entrance, self.exit))

    def maximal_state(self) -> EnsembleState:
        """État initial formé des chemins maximaux de chaque courbe."""
        paths = tuple(maximal_path(self.grid, x, y) for x, y in zip(self.entrance, self.exit))
        return EnsembleState(self.grid, paths, self.f, self.g)


# ---------------------------------------------------------------------------
# Poids de Boltzmann
# ---------------------------------------------------------------------------

def interaction_gaps(upper: np.ndarray, lower: np.ndarray) -> np.ndarray:
    """
    Écarts lower - upper entre courbes consécutives, en réels étendus.

    Un bord supérieur +inf ou un bord inférieur -inf donne -inf ; un écart +inf est une erreur.
    """
    upper = np.asarray(upper, dtype=float)
    lower = np.asarray(lower, dtype=float)
    with np.errstate(invalid="ignore"):
        gaps = lower - upper
    gaps = np.where((upper == np.inf) | (lower == -np.inf), -np.inf, gaps)
    if (gaps == np.inf).any():
        raise DomainError("Écart +inf entre deux courbes: H n'est pas défini en +inf")
    return gaps


def log_weight_of_values(values: np.ndarray, f: np.ndarray, g: np.ndarray, dt: float, hamiltonian: Hamiltonian) -> float:
    """
    -Δt·Σ_i Σ_s H(Y_{i+1}(s) - Y_i(s)) avec Y_0 = f et Y_{k+1} = g, sommation compensée.

    Args:
        values: Matrice (k, T) des courbes
        f: Bord supérieur (T,)
        g: Bord inférieur (T,)
        dt: Pas de temps
        hamiltonian: Hamiltonien

    Returns:
        Log-poids (<= 0)
    """
    stacked = np.vstack([f, values, g])
    gaps = interaction_gaps(stacked[:-1], stacked[1:])
    energies = evaluate(hamiltonian, gaps)
    return -dt * math.fsum(np.ravel(energies).tolist())


def log_weight(state: EnsembleState, hamiltonian: Hamiltonian) -> float:
    """
    Log-poids de Boltzmann discret d'un état, somme sur les n²+1 temps de grille.

    Args:
        state: État de l'ensemble
        hamiltonian: Hamiltonien

    Returns:
        Log-poids (<= 0)
    """
    return log_weight_of_values(state.values(), state.f.as_array(), state.g.as_array(), state.grid.dt, hamiltonian)


# ---------------------------------------------------------------------------
# Énumération
# ---------------------------------------------------------------------------

def _iter_increments(steps: int, gap: int) -> Iterator[Tuple[int, ...]]:
    """Suites d'incréments de somme gap, dans l'ordre lexicographique décroissant (1 > 0 > -1)."""
    prefix: List[int] = []

    def walk(remaining: int, needed: int) -> Iterator[Tuple[int, ...]]:
        if remaining == 0:
            if needed == 0:
                yield tuple(prefix)
            return
        for step in (1, 0, -1):
            if abs(needed - step) <= remaining - 1:
                prefix.append(step)
                yield from walk(remaining - 1, needed - step)
                prefix.pop()

    if abs(gap) <= steps:
        yield from walk(steps, gap)


def enumerate_paths(grid: Grid, x_index: int, y_index: int) -> List[DiscretePath]:
    """
    Énumère tous les chemins de x_index à y_index.

    Args:
        grid: Grille
        x_index: Indice d'entrée
        y_index: Indice de sortie

    Returns:
        Liste des chemins, le maximal en premier (vide si |y - x| > n²)
    """
    return [DiscretePath(x_index, inc) for inc in _iter_increments(grid.steps, y_index - x_index)]


def maximal_path(grid: Grid, x_index: int, y_index: int) -> DiscretePath:
    """
    Chemin lexicographiquement maximal : des +1, un 0 éventuel, puis des -1.

    Args:
        grid: Grille
        x_index: Indice d'entrée
        y_index: Indice de sortie

    Returns:
        Chemin maximal
    """
    steps = grid.steps
    gap = y_index - x_index
    if abs(gap) > steps:
        raise StateSpaceError(f"Aucun chemin de {x_index} à {y_index} en {steps} pas")
    ups = (gap + steps) // 2
    flat = (gap + steps) % 2
    downs = (steps - gap) // 2
    return DiscretePath(x_index, (1,) * ups + (0,) * flat + (-1,) * downs)


def _log_path_counts(steps: int) -> np.ndarray:
    """
    Table log C(m, d) du nombre de chemins de m pas et de somme d, d décalé de steps.
    """
    width = 2 * steps + 1
    table = np.full((steps + 1, width), -np.inf)
    table[0, steps] = 0.0
    for m in range(1, steps + 1):
        prev = table[m - 1]
        shifted_up = np.concatenate(([-np.inf], prev[:-1]))
        shifted_down = np.concatenate((prev[1:], [-np.inf]))
        table[m] = np.logaddexp(np.logaddexp(shifted_up, prev), shifted_down)
    return table


def sample_free_paths(
    grid: Grid,
    x_index: int,
    y_index: int,
    size: int,
    rng: np.random.Generator
) -> np.ndarray:
    """
    Tirages exacts uniformes dans Ω(x, y) par pas successifs pondérés par les nombres de chemins.

    Args:
        grid: Grille
        x_index: Indice d'entrée
        y_index: Indice de sortie
        size: Nombre de chemins
        rng: Générateur aléatoire

    Returns:
        Hauteurs entières, tableau (size, n²+1)
    """
    steps = grid.steps
    if abs(y_index - x_index) > steps:
        raise StateSpaceError(f"Aucun chemin de {x_index} à {y_index} en {steps} pas")
    table = _log_path_counts(steps)
    heights = np.empty((size, steps + 1), dtype=np.int64)
    heights[:, 0] = x_index
    current = np.full(size, x_index, dtype=np.int64)
    moves = np.array([1, 0, -1])
    for j in range(steps):
        remaining = steps - j - 1
        # Besoin restant après chaque pas possible, colonne par pas (1, 0, -1)
        after = (y_index - current)[:, None] - moves[None, :]
        reachable = np.abs(after) <= remaining
        logs = np.where(reachable, table[remaining, np.clip(steps + after, 0, 2 * steps)], -np.inf)
        weights = np.exp(logs - logs.max(axis=1, keepdims=True))
        cumulative = np.cumsum(weights, axis=1)
        u = rng.random(size)[:, None] * cumulative[:, 2:]
        choice = (u >= cumulative[:, :2]).sum(axis=1)
        current = current + moves[choice]
        heights[:, j + 1] = current
    return heights


def lattice_ks_distance(indices: np.ndarray, dx: float, sigma: float, center: float = 0.0) -> float:
    """
    Distance de Kolmogorov-Smirnov entre un échantillon sur le réseau Δx·ℤ et N(center, σ²).

    Les deux fonctions de répartition sont comparées aux demi-points du réseau, où la
    répartition empirique d'une loi atomique est la bonne approximation de la loi continue.

    Args:
        indices: Indices entiers tirés
        dx: Pas du réseau
        sigma: Écart-type de la gaussienne cible
        center: Moyenne de la gaussienne cible

    Returns:
        Distance KS
    """
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size == 0:
        raise DomainError("Échantillon vide")
    lo, hi = int(idx.min()) - 1, int(idx.max()) + 1
    points = np.arange(lo, hi + 1)
    counts = np.bincount(idx - lo, minlength=points.size)
    empirical = np.cumsum(counts) / idx.size
    target = standard_normal_cdf(((points + 0.5) * dx - center) / sigma)
    return float(np.max(np.abs(empirical - target)))


# ---------------------------------------------------------------------------
# Lois exactes
# ---------------------------------------------------------------------------

def state_id(state: EnsembleState) -> str:
    """Identifiant d'état : symboles d'incréments (+, 0, -) par courbe, séparés par |."""
    return "|".join(p.symbols() for p in state.paths)


def parse_state_id(identifier: str, data: EnsembleData) -> EnsembleState:
    """
    Reconstruit un état à partir de son identifiant et des données de bord.

    Args:
        identifier: Identifiant produit par state_id
        data: Données de bord (entrées, courbes)

    Returns:
        État de l'ensemble
    """
    parts = identifier.split("|")
    if len(parts) != data.k:
        raise DomainError(f"Identifiant à {len(parts)} courbes pour k={data.k}")
    try:
        paths = tuple(
            DiscretePath(x, tuple(_FROM_SYMBOL[c] for c in part))
            for x, part in zip(data.entrance, parts)
        )
    except KeyError as e:
        raise DomainError(f"Symbole d'incrément inconnu dans {identifier!r}") from e
    state = EnsembleState(data.grid, paths, data.f, data.g)
    if state.exit != data.exit:
        raise DomainError(f"L'identifiant {identifier!r} ne respecte pas les sorties {data.exit}")
    return state


@dataclass
class BoltzmannDistribution:
    """Loi de Boltzmann exacte sur l'espace produit énuméré."""

    data: EnsembleData
    states: List[EnsembleState]
    log_weights: np.ndarray
    probabilities: np.ndarray
    # log E_free[W] : constante de normalisation sous la loi libre uniforme
    log_partition: float

    def __len__(self) -> int:
        return len(self.states)

    def state_ids(self) -> List[str]:
        return [state_id(s) for s in self.states]

    def as_dict(self) -> Dict[str, float]:
        """{identifiant: probabilité}."""
        return {sid: float(p) for sid, p in zip(self.state_ids(), self.probabilities)}

    def heights_array(self) -> np.ndarray:
        """Hauteurs entières, tableau (|Ω|, k, n²+1)."""
        return np.asarray([s.heights() for s in self.states], dtype=np.int64)

    def tail_probability(self, curve: int, time_index: int, level: int) -> float:
        """P(Y_curve(time) >= level) en indices de réseau."""
        heights = self.heights_array()[:, curve, time_index]
        return float(self.probabilities[heights >= level].sum())


def exact_boltzmann(
    grid: Grid,
    k: int,
    entrance: Sequence[int],
    exit: Sequence[int],
    f: CurveToken,
    g: CurveToken,
    hamiltonian: Hamiltonian,
    cap: int = DEFAULT_STATE_CAP
) -> BoltzmannDistribution:
    """
    Loi de Boltzmann discrète exacte par énumération du produit des espaces de chemins.

    Args:
        grid: Grille
        k: Nombre de courbes
        entrance: Indices d'entrée
        exit: Indices de sortie
        f: Bord supérieur
        g: Bord inférieur
        hamiltonian: Hamiltonien
        cap: Taille maximale de l'espace produit

    Returns:
        Loi exacte (probabilités normalisées en espace logarithmique)
    """
    if len(entrance) != k or len(exit) != k:
        raise DomainError(f"Il faut k={k} indices d'entrée et de sortie")
    data = EnsembleData.build(grid, entrance, exit, f, g)
    return exact_boltzmann_for(data, hamiltonian, cap)


def exact_boltzmann_for(data: EnsembleData, hamiltonian: Hamiltonian, cap: int = DEFAULT_STATE_CAP) -> BoltzmannDistribution:
    """Variante de exact_boltzmann prenant des données de bord déjà construites."""
    grid = data.grid
    sizes = []
    for x, y in zip(data.entrance, data.exit):
        if abs(y - x) > grid.steps:
            raise StateSpaceError(f"Espace d'états vide: |{y} - {x}| > n² = {grid.steps}")
        sizes.append(_count_paths(grid.steps, y - x))
    total = math.prod(sizes)
    if total > cap:
        raise StateSpaceError(
            f"Espace d'états de taille {total} > plafond {cap}: utiliser l'échantillonneur MCMC"
        )

    per_curve = [enumerate_paths(grid, x, y) for x, y in zip(data.entrance, data.exit)]
    f_values, g_values = data.f.as_array(), data.g.as_array()
    states: List[EnsembleState] = []
    log_weights = np.empty(total)
    for m, combo in enumerate(itertools.product(*per_curve)):
        state = EnsembleState(grid, tuple(combo), data.f, data.g)
        states.append(state)
        log_weights[m] = log_weight_of_values(state.values(), f_values, g_values, grid.dt, hamiltonian)

    log_total = float(logsumexp(log_weights))
    probabilities = np.exp(log_weights - log_total)
    probabilities /= math.fsum(probabilities.tolist())
    logger.debug(f"Loi exacte: {total} états, H={hamiltonian.name}")
    return BoltzmannDistribution(data, states, log_weights, probabilities, log_total - math.log(total))


def _count_paths(steps: int, gap: int) -> int:
    """Coefficient trinomial : nombre de chemins de steps pas et de somme gap."""
    gap = abs(gap)
    return sum(
        math.comb(steps, ups) * math.comb(steps - ups, ups - gap)
        for ups in range(gap, (steps + gap) // 2 + 1)
    )


def distribution_to_json(distribution: BoltzmannDistribution, path: Optional[Path] = None) -> str:
    """
    Sérialise une loi exacte en JSON {identifiant: probabilité}.

    Args:
        distribution: Loi exacte
        path: Fichier de destination optionnel

    Returns:
        Texte JSON
    """
    text = json.dumps(distribution.as_dict(), indent=2, sort_keys=True)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text + "\n", encoding="utf-8")
        logger.info(f"Loi exacte écrite dans {path}")
    return text


def partial_gibbs_check(
    distribution: BoltzmannDistribution,
    hamiltonian: Hamiltonian,
    curves: Tuple[int, int],
    window: Tuple[int, int]
) -> float:
    """
    Compare la loi conditionnelle d'une fenêtre (courbes × temps intérieurs) sachant
    l'extérieur à la loi discrète d'un ensemble posé sur cet extérieur comme données de bord.

    Args:
        distribution: Loi exacte
        hamiltonian: Hamiltonien
        curves: Courbes (première, dernière) de la fenêtre, indices à partir de 0
        window: Temps de grille (premier, dernier) de la fenêtre, strictement intérieurs

    Returns:
        Écart maximal entre les deux lois conditionnelles
    """
    data = distribution.data
    c_lo, c_hi = curves
    t_lo, t_hi = window
    if not 0 <= c_lo <= c_hi < data.k:
        raise DomainError(f"Courbes de fenêtre invalides: {curves}")
    if not 1 <= t_lo <= t_hi <= data.grid.steps - 1:
        raise DomainError(f"Temps de fenêtre invalides: {window}")

    heights = distribution.heights_array()
    dx, dt = data.grid.dx, data.grid.dt
    inside = np.zeros(heights.shape[1:], dtype=bool)
    inside[c_lo:c_hi + 1, t_lo:t_hi + 1] = True

    f_values, g_values = data.f.as_array(), data.g.as_array()
    groups: Dict[bytes, List[int]] = {}
    for m in range(len(distribution)):
        groups.setdefault(heights[m][~inside].tobytes(), []).append(m)

    worst = 0.0
    for members in groups.values():
        probs = distribution.probabilities[members]
        conditional = probs / probs.sum()

        local = np.empty(len(members))
        for j, m in enumerate(members):
            values = heights[m].astype(float) * dx
            stacked = np.vstack([f_values, values, g_values])[:, t_lo:t_hi + 1]
            # Interactions touchant la fenêtre : paires (c_lo-1, c_lo) ... (c_hi, c_hi+1)
            pairs = stacked[c_lo:c_hi + 3]
            energies = evaluate(hamiltonian, interaction_gaps(pairs[:-1], pairs[1:]))
            local[j] = -dt * math.fsum(np.ravel(energies).tolist())
        resampled = np.exp(local - logsumexp(local))
        worst = max(worst, float(np.max(np.abs(conditional - resampled))))
    return worst
