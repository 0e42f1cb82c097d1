"""
Observables de conditionnement : calendriers de paramètres, poids de Boltzmann continus
par quadrature, estimateur du ratio conditionné, limite de normalisation et événements de queue.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .bridge import (
    BridgeSpec,
    TwoTimeQuery,
    sample_bridge_on_grid,
    sample_conditioned_three_segments,
    sample_truncated_endpoint_pair,
)
from .hamiltonian import Hamiltonian, evaluate
from .lattice import interaction_gaps
from ..utils.errors import DomainError, ScheduleError
from ..utils.logger import get_logger

logger = get_logger()

Curve = Union[float, Callable[[np.ndarray], np.ndarray], None]

STEPS_PER_WINDOW = 256
SIDE_MIN_STEPS = 8
BATCH = 5000


# ---------------------------------------------------------------------------
# Calendriers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ObservableSchedule:
    """
    Paramètres dérivés d'une sonde au temps t1 : β = z/2, A = log(w)/λ, V = w^(-1/3),
    c, d = t1 ∓ β/H(A), a = c - w⁻², b = d + w⁻².
    """

    t1: float
    z: int
    lam: float
    w: float
    beta: float
    A: float
    V: float
    c: float
    d: float
    a: float
    b: float

    @property
    def level(self) -> float:
        """Niveau -A des deux contraintes."""
        return -self.A

    def query(self) -> TwoTimeQuery:
        return TwoTimeQuery(self.c, self.d, -self.A)

    def bridge(self, x: float, y: float) -> BridgeSpec:
        """Pont sur [a, b] de x à y."""
        return BridgeSpec(self.a, self.b, x, y)

    def to_dict(self) -> Dict[str, float]:
        return {
            "t1": self.t1, "z": self.z, "lambda": self.lam, "w": self.w, "beta": self.beta,
            "A": self.A, "V": self.V, "a": self.a, "b": self.b, "c": self.c, "d": self.d,
        }


def schedule(
    t1: float,
    z: int,
    lam: float,
    w: float,
    hamiltonian: Hamiltonian,
    interval: Optional[Tuple[float, float]] = None
) -> ObservableSchedule:
    """
    Calcule le calendrier de la sonde et vérifie l'admissibilité d - c ∈ [w^(-5/4), w^(-3/4)].

    Args:
        t1: Temps de la sonde
        z: Indice de l'observable (entier >= 1)
        lam: Taux λ > 0
        w: Échelle
        hamiltonian: Hamiltonien
        interval: Intervalle ambiant optionnel devant contenir [a, b]

    Returns:
        Calendrier
    """
    if int(z) != z or z < 1:
        raise DomainError(f"z doit être un entier >= 1 (reçu {z})")
    if lam <= 0 or w <= 1:
        raise DomainError(f"Exigé λ > 0 et w > 1 (reçu λ={lam}, w={w})")

    beta = z / 2.0
    A = math.log(w) / lam
    h_at_A = hamiltonian.scalar(A)
    if not h_at_A > 0:
        raise ScheduleError("H(A_w) > 0", f"H s'annule en A_w={A}")

    half = beta / h_at_A
    c, d = t1 - half, t1 + half
    a, b = c - w ** -2, d + w ** -2
    width = d - c
    if width < w ** -1.25:
        raise ScheduleError("d_w - c_w >= w^(-5/4)", f"Fenêtre {width:.6g} trop étroite pour w={w}")
    if width > w ** -0.75:
        raise ScheduleError("d_w - c_w <= w^(-3/4)", f"Fenêtre {width:.6g} trop large pour w={w}")
    if interval is not None and not (interval[0] <= a and b <= interval[1]):
        raise ScheduleError("[a_w, b_w] ⊂ intervalle ambiant", f"[{a}, {b}] sort de {interval}")

    return ObservableSchedule(t1, int(z), lam, w, beta, A, w ** (-1.0 / 3.0), c, d, a, b)


def multi_schedule(
    times: Sequence[float],
    zs: Sequence[int],
    lam: float,
    w: float,
    hamiltonian: Hamiltonian,
    interval: Tuple[float, float]
) -> List[ObservableSchedule]:
    """
    Calendriers de plusieurs sondes, avec la condition de disjonction
    2[w⁻² + β/H(A_w)] < plus petit écart entre temps consécutifs et bords, β = max z/2.

    Args:
        times: Temps de sonde strictement croissants
        zs: Indices des observables
        lam: Taux λ
        w: Échelle
        hamiltonian: Hamiltonien
        interval: Intervalle ambiant

    Returns:
        Liste de calendriers
    """
    if len(times) != len(zs) or not times:
        raise DomainError("Il faut autant d'indices z que de temps de sonde")
    if any(t2 <= t1 for t1, t2 in zip(times, times[1:])):
        raise DomainError("Les temps de sonde doivent être strictement croissants")

    schedules = [schedule(t, z, lam, w, hamiltonian, interval) for t, z in zip(times, zs)]
    beta = max(zs) / 2.0
    spread = 2.0 * (w ** -2 + beta / hamiltonian.scalar(math.log(w) / lam))
    points = [interval[0], *times, interval[1]]
    min_gap = min(t2 - t1 for t1, t2 in zip(points, points[1:]))
    if not spread < min_gap:
        raise ScheduleError(
            "2[w^-2 + β/H(A_w)] < écart minimal",
            f"Fenêtres de largeur {spread:.6g} non disjointes (écart minimal {min_gap:.6g})"
        )
    return schedules


# ---------------------------------------------------------------------------
# Poids continus
# ---------------------------------------------------------------------------

def _curve_values(curve: Curve, times: np.ndarray) -> np.ndarray:
    """Valeurs d'une courbe déterministe (constante, fonction, ou None pour -inf) aux temps donnés."""
    if curve is None:
        return np.full(times.shape, -np.inf)
    if callable(curve):
        values = np.asarray(curve(times), dtype=float)
        if values.shape != times.shape:
            raise DomainError("La courbe doit renvoyer une valeur par temps")
        return values
    return np.full(times.shape, float(curve))


def _steps(dt: Union[float, np.ndarray], count: int) -> np.ndarray:
    steps = np.broadcast_to(np.asarray(dt, dtype=float), (count,)) if np.ndim(dt) == 0 else np.asarray(dt, float)
    if steps.shape != (count,):
        raise DomainError(f"{steps.shape[0]} pas de quadrature pour {count + 1} points")
    return steps


def interaction_log_weight(
    upper: np.ndarray,
    lower: np.ndarray,
    hamiltonian: Hamiltonian,
    dt: Union[float, np.ndarray]
) -> Union[float, np.ndarray]:
    """
    -∫ H(lower - upper) par la somme de Riemann à gauche.

    Args:
        upper: Courbe du haut (T,) ou (S, T)
        lower: Courbe du bas (T,) ou (S, T)
        hamiltonian: Hamiltonien
        dt: Pas scalaire ou tableau des T-1 pas

    Returns:
        Log-poids, scalaire ou tableau (S,)
    """
    upper = np.asarray(upper, dtype=float)
    lower = np.asarray(lower, dtype=float)
    if upper.shape[-1] != lower.shape[-1]:
        raise DomainError(f"Grilles incompatibles: {upper.shape[-1]} et {lower.shape[-1]} points")
    upper, lower = np.broadcast_arrays(upper, lower)
    steps = _steps(dt, upper.shape[-1] - 1)
    energies = evaluate(hamiltonian, interaction_gaps(upper, lower))
    result = -(energies[..., :-1] @ steps)
    return float(result) if np.ndim(result) == 0 else result


def continuum_log_weight(
    path_values: np.ndarray,
    lower_values: np.ndarray,
    hamiltonian: Hamiltonian,
    dt: Union[float, np.ndarray]
) -> Union[float, np.ndarray]:
    """
    -∫ H(lower(u) - Q(u)) du par la somme de Riemann à gauche.

    Args:
        path_values: Trajectoire(s) Q aux temps de quadrature, (T,) ou (S, T)
        lower_values: Courbe inférieure aux mêmes temps (T,)
        hamiltonian: Hamiltonien
        dt: Pas scalaire ou tableau des T-1 pas

    Returns:
        Log-poids (<= 0)
    """
    return interaction_log_weight(path_values, lower_values, hamiltonian, dt)


def ensemble_log_weight(
    paths: np.ndarray,
    hamiltonian: Hamiltonian,
    dt: Union[float, np.ndarray],
    top: Optional[np.ndarray] = None,
    bottom: Optional[np.ndarray] = None
) -> np.ndarray:
    """
    Somme des interactions entre courbes consécutives (et avec les bords fournis).

    Args:
        paths: Trajectoires (S, k, T), courbe 0 en haut
        hamiltonian: Hamiltonien
        dt: Pas de quadrature
        top: Bord supérieur (T,), +inf si absent
        bottom: Bord inférieur (T,), -inf si absent

    Returns:
        Log-poids (S,)
    """
    total = np.zeros(paths.shape[0])
    if top is not None:
        total += interaction_log_weight(top, paths[:, 0], hamiltonian, dt)
    for i in range(paths.shape[1] - 1):
        total += interaction_log_weight(paths[:, i], paths[:, i + 1], hamiltonian, dt)
    if bottom is not None:
        total += interaction_log_weight(paths[:, -1], bottom, hamiltonian, dt)
    return total


# ---------------------------------------------------------------------------
# Grilles et tirages
# ---------------------------------------------------------------------------

def segment_grid(breaks: Sequence[float], steps: Sequence[int]) -> np.ndarray:
    """Grille uniforme par morceaux passant par tous les points de rupture."""
    pieces = [np.linspace(u, v, m + 1)[:-1] for u, v, m in zip(breaks, breaks[1:], steps)]
    return np.concatenate(pieces + [np.asarray([breaks[-1]], dtype=float)])


def window_grid(sched: ObservableSchedule, steps_per_window: int = STEPS_PER_WINDOW) -> np.ndarray:
    """
    Grille de quadrature sur [a, b] contenant c et d, de pas cible (d - c)/steps_per_window
    et de densité doublée : 2·⌈longueur/pas⌉ sous-intervalles par segment.
    """
    target = (sched.d - sched.c) / steps_per_window
    breaks = (sched.a, sched.c, sched.d, sched.b)
    steps = [max(SIDE_MIN_STEPS, math.ceil(2.0 * (v - u) / target)) for u, v in zip(breaks, breaks[1:])]
    return segment_grid(breaks, steps)


def _plain_paths(spec: BridgeSpec, times: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    """Ponts libres sur une grille allant de p à q inclus."""
    out = np.empty((size, times.size))
    out[:, 0] = spec.x
    out[:, -1] = spec.y
    out[:, 1:-1] = sample_bridge_on_grid(spec, times[1:-1], rng, size=size)
    return out


def _conditioned_paths(
    spec: BridgeSpec,
    query: TwoTimeQuery,
    times: np.ndarray,
    size: int,
    rng: np.random.Generator
) -> np.ndarray:
    """Ponts conditionnés à Q(c) <= r et Q(d) <= r, tirés exactement en trois segments."""
    v_c, v_d = sample_truncated_endpoint_pair(spec, query.c, query.d, query.r, rng, size=size)
    return sample_conditioned_three_segments(spec, query.c, query.d, v_c, v_d, times, rng)


def _batches(total: int, batch: int):
    done = 0
    while done < total:
        size = min(batch, total - done)
        yield size
        done += size


def _mean_var(values: np.ndarray) -> Tuple[float, float]:
    """Moyenne (sommation compensée) et variance empirique."""
    mean = math.fsum(values.tolist()) / values.size
    var = float(np.var(values, ddof=1)) if values.size > 1 else 0.0
    return mean, var


# ---------------------------------------------------------------------------
# Estimations
# ---------------------------------------------------------------------------

@dataclass
class RatioEstimate:
    """Ratio de deux moyennes Monte-Carlo indépendantes, erreur type par la méthode delta."""

    numerator_mean: float
    numerator_var: float
    numerator_samples: int
    denominator_mean: float
    denominator_var: float
    denominator_samples: int

    @property
    def ratio(self) -> float:
        if not self.denominator_mean > 0:
            return math.nan
        return self.numerator_mean / self.denominator_mean

    @property
    def stderr(self) -> float:
        if not self.denominator_mean > 0 or not self.numerator_mean > 0:
            return math.nan
        rel = (
            self.numerator_var / (self.numerator_samples * self.numerator_mean ** 2)
            + self.denominator_var / (self.denominator_samples * self.denominator_mean ** 2)
        )
        return abs(self.ratio) * math.sqrt(rel)

    @classmethod
    def from_weights(cls, numerator: np.ndarray, denominator: np.ndarray) -> "RatioEstimate":
        if numerator.size == 0 or denominator.size == 0:
            raise DomainError("Aucun échantillon effectif")
        n_mean, n_var = _mean_var(numerator)
        d_mean, d_var = _mean_var(denominator)
        if not d_mean > 0:
            raise DomainError("Poids tous nuls au dénominateur: aucun échantillon effectif")
        return cls(n_mean, n_var, numerator.size, d_mean, d_var, denominator.size)

    @staticmethod
    def _pool(parts: Sequence[Tuple[float, float, int]]) -> Tuple[float, float, int]:
        total = sum(n for _, _, n in parts)
        mean = math.fsum(m * n for m, _, n in parts) / total
        within = math.fsum((n - 1) * v for _, v, n in parts)
        between = math.fsum(n * (m - mean) ** 2 for m, _, n in parts)
        return mean, (within + between) / max(total - 1, 1), total

    @classmethod
    def combine(cls, estimates: Sequence["RatioEstimate"]) -> "RatioEstimate":
        """
        Regroupe les moments de plusieurs répliques (ordre fixe, sommation compensée).

        Args:
            estimates: Estimations des répliques

        Returns:
            Estimation regroupée
        """
        if not estimates:
            raise DomainError("Aucune estimation à regrouper")
        num = cls._pool([(e.numerator_mean, e.numerator_var, e.numerator_samples) for e in estimates])
        den = cls._pool([(e.denominator_mean, e.denominator_var, e.denominator_samples) for e in estimates])
        return cls(num[0], num[1], num[2], den[0], den[1], den[2])

    def to_record(self, w: Optional[float] = None, predicted: Optional[float] = None, seed: Optional[int] = None) -> Dict:
        return {
            "w": w,
            "ratio": self.ratio,
            "stderr": self.stderr,
            "predicted": predicted,
            "n_samples": self.numerator_samples + self.denominator_samples,
            "seed": seed,
        }


def predicted_limit(z: float, lam: float, l2_value: float) -> float:
    """
    Limite exp(-z·exp(λ·L2)) du ratio conditionné.

    Args:
        z: Indice de l'observable
        lam: Taux λ
        l2_value: Valeur de la courbe inférieure au temps de sonde (-inf permis)

    Returns:
        Probabilité limite
    """
    return math.exp(-z * math.exp(lam * l2_value))


def _check_spans(spec: BridgeSpec, sched: ObservableSchedule) -> None:
    if abs(spec.p - sched.a) > 1e-12 or abs(spec.q - sched.b) > 1e-12:
        raise DomainError(f"Le pont doit couvrir [a_w, b_w] = [{sched.a}, {sched.b}]")
    if not (math.isfinite(spec.x) and math.isfinite(spec.y)):
        raise DomainError("Extrémités du pont infinies")


def estimate_conditioned_ratio(
    spec: BridgeSpec,
    sched: ObservableSchedule,
    lower_curve: Curve,
    hamiltonian: Hamiltonian,
    samples: int,
    rng: np.random.Generator,
    plain_samples: Optional[int] = None,
    steps_per_window: int = STEPS_PER_WINDOW,
    batch: int = BATCH
) -> RatioEstimate:
    """
    Estime P_H(Q(c) <= -A, Q(d) <= -A)/F(-A) par l'identité E_libre[W | F]/E_libre[W].

    Args:
        spec: Pont sur [a_w, b_w]
        sched: Calendrier de la sonde
        lower_curve: Courbe inférieure déterministe (constante, fonction ou None pour -inf)
        hamiltonian: Hamiltonien
        samples: Tirages conditionnés (numérateur)
        rng: Générateur aléatoire
        plain_samples: Tirages libres (dénominateur), samples par défaut
        steps_per_window: Pas de quadrature par fenêtre [c, d]
        batch: Taille des lots

    Returns:
        Estimation du ratio
    """
    _check_spans(spec, sched)
    times = window_grid(sched, steps_per_window)
    dt = np.diff(times)
    lower = _curve_values(lower_curve, times)
    query = sched.query()

    numerator = []
    for size in _batches(samples, batch):
        paths = _conditioned_paths(spec, query, times, size, rng)
        numerator.append(np.exp(continuum_log_weight(paths, lower, hamiltonian, dt)))
    denominator = []
    for size in _batches(plain_samples or samples, batch):
        paths = _plain_paths(spec, times, size, rng)
        denominator.append(np.exp(continuum_log_weight(paths, lower, hamiltonian, dt)))

    estimate = RatioEstimate.from_weights(np.concatenate(numerator), np.concatenate(denominator))
    logger.debug(f"Ratio w={sched.w}: {estimate.ratio:.6f} ± {estimate.stderr:.2e} ({times.size} points)")
    return estimate


def _self_normalized(values: np.ndarray, weights: np.ndarray) -> Tuple[float, float]:
    """Moyenne pondérée Σw·v/Σw et sa variance par échantillon (méthode delta)."""
    weight_mean = math.fsum(weights.tolist()) / weights.size
    if not weight_mean > 0:
        return math.nan, math.nan
    estimate = math.fsum((weights * values).tolist()) / weights.size / weight_mean
    residual = weights * (values - estimate) / weight_mean
    return estimate, float(np.mean(residual ** 2))


def estimate_ensemble_ratio(
    entrance: Sequence[float],
    exit: Sequence[float],
    sched: ObservableSchedule,
    lower_curve: Curve,
    hamiltonian: Hamiltonian,
    samples: int,
    rng: np.random.Generator,
    plain_samples: Optional[int] = None,
    steps_per_window: int = STEPS_PER_WINDOW,
    batch: int = BATCH
) -> RatioEstimate:
    """
    Ratio à k courbes : P_H(toutes sous -A en c et d)/F_H, sous f = +inf et au-dessus de la courbe inférieure.

    Calculé comme [E[W_tot | F]/E[W_int | F]]·[E[W_int]/E[W_tot]] sur des ponts libres
    (W_int : interactions entre courbes, W_tot : W_int et l'interaction avec la courbe inférieure).

    Args:
        entrance: Valeurs d'entrée des k courbes en a_w
        exit: Valeurs de sortie en b_w
        sched: Calendrier de la sonde
        lower_curve: Courbe inférieure déterministe
        hamiltonian: Hamiltonien
        samples: Tirages conditionnés
        rng: Générateur aléatoire
        plain_samples: Tirages libres
        steps_per_window: Pas de quadrature par fenêtre
        batch: Taille des lots

    Returns:
        Estimation du ratio (se réduit à estimate_conditioned_ratio pour k = 1)
    """
    if len(entrance) != len(exit) or not entrance:
        raise DomainError("Entrées et sorties doivent avoir la même longueur k >= 1")
    specs = [sched.bridge(x, y) for x, y in zip(entrance, exit)]
    for spec in specs:
        _check_spans(spec, sched)
    times = window_grid(sched, steps_per_window)
    dt = np.diff(times)
    lower = _curve_values(lower_curve, times)
    query = sched.query()

    def weights(conditioned: bool) -> Tuple[np.ndarray, np.ndarray]:
        total, inner = [], []
        for size in _batches(samples if conditioned else (plain_samples or samples), batch):
            if conditioned:
                paths = np.stack([_conditioned_paths(s, query, times, size, rng) for s in specs], axis=1)
            else:
                paths = np.stack([_plain_paths(s, times, size, rng) for s in specs], axis=1)
            log_inner = ensemble_log_weight(paths, hamiltonian, dt)
            log_lower = interaction_log_weight(paths[:, -1], lower, hamiltonian, dt)
            inner.append(np.exp(log_inner))
            total.append(np.exp(log_inner + log_lower))
        return np.concatenate(total), np.concatenate(inner)

    cond_total, cond_inner = weights(True)
    plain_total, plain_inner = weights(False)

    # Rapports W_tot/W_int = interaction avec la courbe inférieure, pondérés par W_int
    with np.errstate(invalid="ignore", divide="ignore"):
        cond_lower = np.where(cond_inner > 0, cond_total / cond_inner, 0.0)
        plain_lower = np.where(plain_inner > 0, plain_total / plain_inner, 0.0)
    num_mean, num_var = _self_normalized(cond_lower, cond_inner)
    den_mean, den_var = _self_normalized(plain_lower, plain_inner)
    if math.isnan(num_mean) or math.isnan(den_mean) or not den_mean > 0:
        raise DomainError("Poids d'interaction tous nuls: aucun échantillon effectif")
    return RatioEstimate(num_mean, num_var, cond_total.size, den_mean, den_var, plain_total.size)


@dataclass
class NormalizationEstimate:
    """Estimation de E_H[exp(-∫ H(g - Q_k))] sur un intervalle."""

    p: float
    q: float
    estimate: float
    stderr: float
    samples: int

    @property
    def length(self) -> float:
        return self.q - self.p

    def to_record(self) -> Dict:
        return {"length": self.length, "estimate": self.estimate, "stderr": self.stderr, "n_samples": self.samples}


def normalization_limit_estimate(
    intervals: Sequence[Tuple[float, float]],
    entrance: Sequence[float],
    exit: Sequence[float],
    lower_curve: Curve,
    hamiltonian: Hamiltonian,
    samples: int,
    rng: np.random.Generator,
    quadrature_points: int = 256,
    batch: int = BATCH
) -> List[NormalizationEstimate]:
    """
    Estime E_H[exp(-∫ H(g - Q_k))] pour des intervalles de longueur décroissante.

    Sous la loi à k courbes (f = +inf), c'est E_libre[W_int·W_g]/E_libre[W_int] ;
    pour k = 1, la simple moyenne de W_g sous des ponts libres.

    Args:
        intervals: Intervalles (p, q) de longueurs strictement décroissantes
        entrance: Valeurs d'entrée des k courbes
        exit: Valeurs de sortie
        lower_curve: Courbe g
        hamiltonian: Hamiltonien
        samples: Tirages par intervalle
        rng: Générateur aléatoire
        quadrature_points: Sous-intervalles de quadrature
        batch: Taille des lots

    Returns:
        Estimations, dans l'ordre des intervalles
    """
    if len(entrance) != len(exit) or not entrance:
        raise DomainError("Entrées et sorties doivent avoir la même longueur k >= 1")
    lengths = [q - p for p, q in intervals]
    if any(l2 >= l1 for l1, l2 in zip(lengths, lengths[1:])):
        raise DomainError("Les longueurs d'intervalle doivent décroître strictement")

    results = []
    for p, q in intervals:
        specs = [BridgeSpec(p, q, x, y) for x, y in zip(entrance, exit)]
        times = np.linspace(p, q, quadrature_points + 1)
        dt = (q - p) / quadrature_points
        lower = _curve_values(lower_curve, times)
        lower_w, inner_w = [], []
        for size in _batches(samples, batch):
            paths = np.stack([_plain_paths(s, times, size, rng) for s in specs], axis=1)
            inner_w.append(np.exp(ensemble_log_weight(paths, hamiltonian, dt)))
            lower_w.append(np.exp(interaction_log_weight(paths[:, -1], lower, hamiltonian, dt)))
        estimate, var = _self_normalized(np.concatenate(lower_w), np.concatenate(inner_w))
        results.append(NormalizationEstimate(p, q, estimate, math.sqrt(var / samples), samples))
        logger.debug(f"Normalisation sur [{p}, {q}]: {estimate:.6f}")
    return results


@dataclass
class ProbabilityEstimate:
    """Probabilité estimée par échantillonnage d'importance autonormalisé."""

    value: float
    stderr: float
    samples: int
    effective_samples: float

    def to_record(self) -> Dict:
        return {"value": self.value, "stderr": self.stderr, "n_samples": self.samples,
                "effective_samples": self.effective_samples}


def multi_curve_F_estimate(
    entrance: Sequence[float],
    exit: Sequence[float],
    p: float,
    q: float,
    query: TwoTimeQuery,
    hamiltonian: Hamiltonian,
    samples: int,
    rng: np.random.Generator,
    f: Curve = math.inf,
    g: Curve = None,
    quadrature_points: int = 256,
    batch: int = BATCH
) -> ProbabilityEstimate:
    """
    F à k courbes : E_libre[1{toutes sous r en c et d}·W]/E_libre[W], W = interactions
    entre courbes consécutives et avec les bords f, g.

    Args:
        entrance: Valeurs d'entrée en p
        exit: Valeurs de sortie en q
        p: Début de l'intervalle
        q: Fin de l'intervalle
        query: Temps c < d et niveau r
        hamiltonian: Hamiltonien
        samples: Nombre de tirages
        rng: Générateur aléatoire
        f: Bord supérieur (+inf par défaut)
        g: Bord inférieur (None : -inf)
        quadrature_points: Sous-intervalles de quadrature
        batch: Taille des lots

    Returns:
        Estimation ; une variance dégénérée est signalée sans erreur
    """
    if len(entrance) != len(exit) or not entrance:
        raise DomainError("Entrées et sorties doivent avoir la même longueur k >= 1")
    specs = [BridgeSpec(p, q, x, y) for x, y in zip(entrance, exit)]
    query.validate(specs[0])

    segment = (q - p) / quadrature_points
    breaks = (p, query.c, query.d, q)
    times = segment_grid(breaks, [max(1, math.ceil((v - u) / segment)) for u, v in zip(breaks, breaks[1:])])
    dt = np.diff(times)
    ic, id_ = int(np.searchsorted(times, query.c)), int(np.searchsorted(times, query.d))
    top = None if f is None or (np.isscalar(f) and f == math.inf) else _curve_values(f, times)
    bottom = None if g is None else _curve_values(g, times)

    hits, weights = [], []
    for size in _batches(samples, batch):
        paths = np.stack([_plain_paths(s, times, size, rng) for s in specs], axis=1)
        below = np.all((paths[:, :, ic] <= query.r) & (paths[:, :, id_] <= query.r), axis=1)
        hits.append(below.astype(float))
        weights.append(np.exp(ensemble_log_weight(paths, hamiltonian, dt, top, bottom)))
    hits_all, weights_all = np.concatenate(hits), np.concatenate(weights)

    value, var = _self_normalized(hits_all, weights_all)
    total = weights_all.sum()
    effective = float(total ** 2 / np.sum(weights_all ** 2)) if total > 0 else 0.0
    if math.isnan(value) or var == 0.0:
        logger.warning(f"Estimation de F dégénérée (valeur {value}, variance {var})")
    stderr = math.sqrt(var / samples) if not math.isnan(var) else math.nan
    return ProbabilityEstimate(value, stderr, samples, effective)


# ---------------------------------------------------------------------------
# Événements de queue
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TailWindow:
    """
    Fenêtre symétrique [-a_n, a_n] : b_n = n^(-b_exponent), a_n = b_n + n⁻²,
    W_n = log(n)/λ, V_n = n^(-1/3).
    """

    n: int
    lam: float
    a: float
    b: float
    W: float
    V: float

    def query(self) -> TwoTimeQuery:
        return TwoTimeQuery(-self.b, self.b, -self.W)


def tail_window(n: int, lam: float, b_exponent: float = 0.75) -> TailWindow:
    """
    Args:
        n: Indice (>= 2)
        lam: Taux λ > 0
        b_exponent: Exposant de b_n, dans [3/4, 5/4]

    Returns:
        Fenêtre
    """
    if n < 2 or lam <= 0:
        raise DomainError(f"Exigé n >= 2 et λ > 0 (reçu n={n}, λ={lam})")
    if not 0.75 <= b_exponent <= 1.25:
        raise DomainError(f"b_n doit rester dans [n^(-5/4), n^(-3/4)] (exposant {b_exponent})")
    b = n ** -b_exponent
    return TailWindow(n, lam, b + n ** -2.0, b, math.log(n) / lam, n ** (-1.0 / 3.0))


@dataclass
class TailEventEstimate:
    """Fréquence conditionnelle de A_nᶜ ∪ D_nᶜ ∪ E_nᶜ sachant F_n."""

    n: int
    frequency: float
    stderr: float
    samples: int
    event_failures: Dict[str, float] = field(default_factory=dict)

    def to_record(self) -> Dict:
        record = {"n": self.n, "frequency": self.frequency, "stderr": self.stderr, "n_samples": self.samples}
        record.update({f"fail_{name}": value for name, value in sorted(self.event_failures.items())})
        return record

    @classmethod
    def combine(cls, estimates: Sequence["TailEventEstimate"]) -> "TailEventEstimate":
        """
        Regroupe des répliques non pondérées d'un même n (fréquences pondérées par les effectifs).

        Args:
            estimates: Estimations des répliques

        Returns:
            Estimation regroupée
        """
        if not estimates:
            raise DomainError("Aucune estimation à regrouper")
        total = sum(e.samples for e in estimates)
        frequency = math.fsum(e.frequency * e.samples for e in estimates) / total
        names = sorted({name for e in estimates for name in e.event_failures})
        failures = {
            name: math.fsum(e.event_failures.get(name, 0.0) * e.samples for e in estimates) / total
            for name in names
        }
        stderr = math.sqrt(frequency * (1.0 - frequency) / total)
        return cls(estimates[0].n, frequency, stderr, total, failures)


def _tail_grid(window: TailWindow, side_points: int, middle_points: int) -> Tuple[np.ndarray, slice, slice, slice]:
    breaks = (-window.a, -window.b, window.b, window.a)
    times = segment_grid(breaks, [side_points - 1, middle_points - 1, side_points - 1])
    left = slice(0, side_points)
    middle = slice(side_points - 1, side_points + middle_points - 1)
    right = slice(side_points + middle_points - 2, times.size)
    return times, left, middle, right


def _classify(paths: np.ndarray, window: TailWindow, M: float, V: float, slices) -> Dict[str, np.ndarray]:
    """Échecs des événements A (gauche), D (droite) et E (milieu), courbe par courbe réunies."""
    left, middle, right = slices
    low_side, high_side = -window.W - 1.0, M + 1.0

    def side_fail(part: np.ndarray) -> np.ndarray:
        return ((part < low_side) | (part > high_side)).any(axis=-1)

    centre = paths[..., middle]
    fail_e = ((centre < -window.W - 2.0 * V) | (centre > -window.W + 2.0 * V)).any(axis=-1)
    fail_a, fail_d = side_fail(paths[..., left]), side_fail(paths[..., right])
    if paths.ndim == 3:
        fail_a, fail_d, fail_e = fail_a.any(axis=1), fail_d.any(axis=1), fail_e.any(axis=1)
    return {"A": fail_a, "D": fail_d, "E": fail_e}


def tail_event_conditional(
    window: TailWindow,
    M: float,
    x: float,
    y: float,
    samples: int,
    rng: np.random.Generator,
    v_override: Optional[float] = None,
    side_points: int = 64,
    middle_points: int = 512,
    batch: int = BATCH
) -> TailEventEstimate:
    """
    Fréquence de A_nᶜ ∪ D_nᶜ ∪ E_nᶜ sous le pont libre conditionné à F_n, tiré directement.

    Args:
        window: Fenêtre symétrique
        M: Borne des extrémités
        x: Valeur en -a_n, dans [-M, M]
        y: Valeur en a_n, dans [-M, M]
        samples: Nombre de tirages conditionnés
        rng: Générateur aléatoire
        v_override: Remplace V_n (relâchement des événements)
        side_points: Points de grille par côté
        middle_points: Points de grille au milieu
        batch: Taille des lots

    Returns:
        Estimation de la fréquence
    """
    if abs(x) > M or abs(y) > M:
        raise DomainError(f"Extrémités hors de [-M, M]: x={x}, y={y}, M={M}")
    spec = BridgeSpec(-window.a, window.a, x, y)
    times, *slices = _tail_grid(window, side_points, middle_points)
    V = window.V if v_override is None else v_override
    query = window.query()

    failures = {"A": 0, "D": 0, "E": 0}
    total = 0
    for size in _batches(samples, batch):
        paths = _conditioned_paths(spec, query, times, size, rng)
        fails = _classify(paths, window, M, V, slices)
        for name, mask in fails.items():
            failures[name] += int(mask.sum())
        total += int((fails["A"] | fails["D"] | fails["E"]).sum())

    frequency = total / samples
    stderr = math.sqrt(frequency * (1.0 - frequency) / samples)
    logger.debug(f"Événements de queue n={window.n}: {frequency:.5f} ± {stderr:.1e}")
    return TailEventEstimate(window.n, frequency, stderr, samples, {k: v / samples for k, v in failures.items()})


def tail_event_conditional_ensemble(
    window: TailWindow,
    hamiltonian: Hamiltonian,
    M: float,
    entrance: Sequence[float],
    exit: Sequence[float],
    samples: int,
    rng: np.random.Generator,
    v_override: Optional[float] = None,
    side_points: int = 64,
    middle_points: int = 512,
    batch: int = BATCH
) -> TailEventEstimate:
    """
    Version à k courbes sous la loi H (f = +inf, g = -inf) : ponts conditionnés individuellement
    à F_n, pondérés par les interactions entre courbes consécutives.

    Args:
        window: Fenêtre symétrique
        hamiltonian: Hamiltonien λ-exponentiel
        M: Borne des extrémités
        entrance: Valeurs en -a_n
        exit: Valeurs en a_n
        samples: Nombre de tirages
        rng: Générateur aléatoire
        v_override: Remplace V_n
        side_points: Points de grille par côté
        middle_points: Points de grille au milieu
        batch: Taille des lots

    Returns:
        Estimation autonormalisée de la fréquence
    """
    if len(entrance) != len(exit) or not entrance:
        raise DomainError("Entrées et sorties doivent avoir la même longueur k >= 1")
    if any(abs(v) > M for v in (*entrance, *exit)):
        raise DomainError(f"Extrémités hors de [-M, M] (M={M})")
    specs = [BridgeSpec(-window.a, window.a, x, y) for x, y in zip(entrance, exit)]
    times, *slices = _tail_grid(window, side_points, middle_points)
    dt = np.diff(times)
    V = window.V if v_override is None else v_override
    query = window.query()

    indicators = {"A": [], "D": [], "E": []}
    weights = []
    for size in _batches(samples, batch):
        paths = np.stack([_conditioned_paths(s, query, times, size, rng) for s in specs], axis=1)
        for name, mask in _classify(paths, window, M, V, slices).items():
            indicators[name].append(mask)
        weights.append(np.exp(ensemble_log_weight(paths, hamiltonian, dt)))
    w_all = np.concatenate(weights)
    masks = {name: np.concatenate(parts).astype(float) for name, parts in indicators.items()}
    any_fail = np.maximum(np.maximum(masks["A"], masks["D"]), masks["E"])

    frequency, var = _self_normalized(any_fail, w_all)
    if math.isnan(frequency):
        raise DomainError("Poids d'interaction tous nuls: aucun échantillon effectif")
    per_event = {name: _self_normalized(mask, w_all)[0] for name, mask in masks.items()}
    return TailEventEstimate(window.n, frequency, math.sqrt(var / samples), samples, per_event)
