"""Ponts browniens : noyaux, moments, échantillonneurs exacts, formule du maximum, ratio de Mills et probabilité F."""

import math
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import erfcx, ndtr, ndtri

from ..utils.errors import DomainError
from ..utils.logger import get_logger

logger = get_logger()

ArrayLike = Union[float, np.ndarray]

# Seuil (en écarts-types) au-delà duquel la loi normale tronquée est tirée par rejet exponentiel
TAIL_THRESHOLD = 6.0
GIBBS_SWEEPS = 32
MILLS_C0 = 2.0
SIMPSON_TOL = 1e-10
_SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class BridgeSpec:
    """Pont brownien de B(p) = x à B(q) = y, coefficient de diffusion 1."""

    p: float
    q: float
    x: float
    y: float

    def __post_init__(self):
        if not self.q > self.p:
            raise DomainError(f"Pont invalide: q={self.q} doit être > p={self.p}")

    @property
    def length(self) -> float:
        return self.q - self.p


@dataclass(frozen=True)
class TwoTimeQuery:
    """Requête {B(c) <= r et B(d) <= r}."""

    c: float
    d: float
    r: float

    def validate(self, spec: BridgeSpec) -> None:
        """Vérifie p < c < d < q."""
        if not spec.p < self.c < self.d < spec.q:
            raise DomainError(f"Temps invalides: exigé p < c < d < q, reçu {spec.p}, {self.c}, {self.d}, {spec.q}")


class MillsRatio(NamedTuple):
    """Ratio de Mills et ses bornes à constante c0."""

    ratio: float
    lower_bound: float
    upper_bound: float


def standard_normal_cdf(x: ArrayLike) -> ArrayLike:
    """Φ(x) via erfc (précis dans la queue gauche)."""
    return ndtr(x)


def standard_normal_sf(x: ArrayLike) -> ArrayLike:
    """1 - Φ(x) sans annulation."""
    return ndtr(-np.asarray(x, dtype=float))


def heat_kernel(t: float, x: float, y: float) -> float:
    """
    Densité gaussienne de transition exp(-(x-y)²/(2t)) / sqrt(2πt).

    Args:
        t: Temps > 0
        x: Point de départ
        y: Point d'arrivée

    Returns:
        Valeur du noyau
    """
    if t <= 0:
        raise DomainError(f"Le noyau de la chaleur exige t > 0 (reçu {t})")
    return math.exp(-(x - y) ** 2 / (2.0 * t)) / math.sqrt(2.0 * math.pi * t)


def _check_times(spec: BridgeSpec, times: Sequence[float]) -> np.ndarray:
    ts = np.asarray(times, dtype=float)
    if ts.ndim != 1:
        raise DomainError("Les temps doivent former une liste à une dimension")
    if ts.size == 0:
        return ts
    if np.any(np.diff(ts) <= 0):
        raise DomainError("Les temps doivent être strictement croissants")
    if ts[0] <= spec.p or ts[-1] >= spec.q:
        raise DomainError(f"Temps hors de ({spec.p}, {spec.q}): [{ts[0]}, {ts[-1]}]")
    return ts


def bridge_mean_cov(spec: BridgeSpec, times: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    """
    Moyenne et covariance du pont aux temps donnés.

    Args:
        spec: Pont
        times: Temps strictement croissants dans (p, q)

    Returns:
        (moyennes, matrice de covariance)
    """
    ts = _check_times(spec, times)
    mean = spec.x + (ts - spec.p) / spec.length * (spec.y - spec.x)
    lo = np.minimum.outer(ts, ts)
    hi = np.maximum.outer(ts, ts)
    cov = (lo - spec.p) * (spec.q - hi) / spec.length
    return mean, cov


def _sample_segment(
    p: float,
    q: float,
    x: np.ndarray,
    y: np.ndarray,
    times: np.ndarray,
    rng: np.random.Generator
) -> np.ndarray:
    """
    Échantillonnage séquentiel gaussien conditionnel d'un pont aux temps intérieurs.

    x et y sont des vecteurs (un pont par ligne) ; retourne un tableau (len(x), len(times)).
    """
    size = x.shape[0]
    out = np.empty((size, times.size))
    prev_t = p
    prev_v = x.astype(float, copy=True)
    for j, t in enumerate(times):
        remaining = q - prev_t
        step = t - prev_t
        mean = prev_v + (step / remaining) * (y - prev_v)
        sd = math.sqrt(step * (q - t) / remaining)
        prev_v = mean + sd * rng.standard_normal(size)
        out[:, j] = prev_v
        prev_t = t
    return out


def sample_bridge_on_grid(
    spec: BridgeSpec,
    times: Sequence[float],
    rng: np.random.Generator,
    size: Optional[int] = None
) -> np.ndarray:
    """
    Tire le pont aux temps intérieurs donnés (extrémités jamais tirées).

    Args:
        spec: Pont
        times: Temps strictement croissants dans (p, q)
        rng: Générateur aléatoire
        size: Nombre de ponts (None : un seul, résultat 1-D)

    Returns:
        Valeurs, de forme (len(times),) ou (size, len(times))
    """
    ts = _check_times(spec, times)
    n = 1 if size is None else size
    values = _sample_segment(spec.p, spec.q, np.full(n, spec.x), np.full(n, spec.y), ts, rng)
    return values[0] if size is None else values


def bridge_max_on_grid(
    spec: BridgeSpec,
    grid_points: int,
    samples: int,
    rng: np.random.Generator,
    batch: int = 10000
) -> np.ndarray:
    """
    Maximum du pont sur une grille uniforme de grid_points points (extrémités comprises).

    Le maximum courant est mis à jour pas à pas, sans stocker les trajectoires.

    Args:
        spec: Pont
        grid_points: Nombre de points de grille (>= 2)
        samples: Nombre de ponts
        rng: Générateur aléatoire
        batch: Taille des lots

    Returns:
        Tableau des maxima discrets
    """
    if grid_points < 2:
        raise DomainError("Il faut au moins 2 points de grille")
    times = np.linspace(spec.p, spec.q, grid_points)[1:-1]
    maxima = np.empty(samples)
    done = 0
    while done < samples:
        n = min(batch, samples - done)
        prev_t = spec.p
        prev_v = np.full(n, spec.x)
        running = np.full(n, max(spec.x, spec.y))
        for t in times:
            remaining = spec.q - prev_t
            step = t - prev_t
            mean = prev_v + (step / remaining) * (spec.y - prev_v)
            prev_v = mean + math.sqrt(step * (spec.q - t) / remaining) * rng.standard_normal(n)
            np.maximum(running, prev_v, out=running)
            prev_t = t
        maxima[done:done + n] = running
        done += n
        logger.debug(f"Maxima de ponts: {done}/{samples}")
    return maxima


def max_exceedance_prob(T: float, a: float, beta: float) -> float:
    """
    P(max du pont 0 -> a sur [0, T] >= β) = exp(-2β(β - a)/T).

    Args:
        T: Durée > 0
        a: Valeur finale
        beta: Niveau, β > max(a, 0)

    Returns:
        Probabilité de dépassement
    """
    if T <= 0:
        raise DomainError(f"Durée T > 0 exigée (reçu {T})")
    if not beta > max(a, 0.0):
        raise DomainError(f"Formule valable seulement pour β > max(a, 0) (β={beta}, a={a})")
    return math.exp(-2.0 * beta * (beta - a) / T)


def min_exceedance_prob(T: float, a: float, beta: float) -> float:
    """
    P(min du pont 0 -> -a sur [0, T] <= -β), égale à max_exceedance_prob(T, a, β) par symétrie.
    """
    return max_exceedance_prob(T, a, beta)


def mills_ratio(x: float, c0: float = MILLS_C0) -> MillsRatio:
    """
    Ratio de Mills (1 - Φ(x))/φ(x) et bornes 1/(c0(1+x)), c0/(1+x).

    Calculé comme sqrt(π/2)·erfcx(x/√2), stable jusqu'à x = 40 et au-delà.

    Args:
        x: Point x >= 0
        c0: Constante des bornes (> 1)

    Returns:
        (ratio, borne inférieure, borne supérieure)
    """
    if x < 0:
        raise DomainError(f"Ratio de Mills défini ici pour x >= 0 (reçu {x})")
    ratio = math.sqrt(math.pi / 2.0) * float(erfcx(x / _SQRT2))
    return MillsRatio(ratio, 1.0 / (c0 * (1.0 + x)), c0 / (1.0 + x))


# ---------------------------------------------------------------------------
# Lois normales tronquées
# ---------------------------------------------------------------------------

def _tail_exponential_rejection(alpha: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """
    Tire Z ~ N(0,1) conditionné à Z >= alpha (alpha grand) par proposition exponentielle translatée.
    """
    out = np.empty_like(alpha)
    pending = np.arange(alpha.size)
    rate = 0.5 * (alpha + np.sqrt(alpha * alpha + 4.0))
    while pending.size:
        a = alpha[pending]
        lam = rate[pending]
        z = a + rng.exponential(size=pending.size) / lam
        accept = rng.random(pending.size) <= np.exp(-0.5 * (z - lam) ** 2)
        out[pending[accept]] = z[accept]
        pending = pending[~accept]
    return out


def sample_truncated_normal_above(
    mean: np.ndarray,
    sd: np.ndarray,
    upper: float,
    rng: np.random.Generator
) -> np.ndarray:
    """
    Tire N(mean, sd²) conditionné à <= upper, composante par composante.

    Inverse de la fonction de répartition dans le cœur, rejet exponentiel au-delà de 6 écarts-types.

    Args:
        mean: Moyennes
        sd: Écarts-types (> 0)
        upper: Borne supérieure
        rng: Générateur aléatoire

    Returns:
        Échantillons <= upper
    """
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    sd = np.broadcast_to(np.asarray(sd, dtype=float), mean.shape)
    u = (upper - mean) / sd
    z = np.empty_like(mean)

    bulk = u >= -TAIL_THRESHOLD
    if bulk.any():
        cap = ndtr(u[bulk])
        z[bulk] = ndtri(rng.random(int(bulk.sum())) * cap)
    tail = ~bulk
    if tail.any():
        z[tail] = -_tail_exponential_rejection(-u[tail], rng)

    values = mean + sd * z
    # Arrondi de ndtri près de Φ(u) : on ramène sur la borne
    return np.minimum(values, upper)


def sample_truncated_normal_below(
    mean: np.ndarray,
    sd: np.ndarray,
    lower: float,
    rng: np.random.Generator
) -> np.ndarray:
    """Tire N(mean, sd²) conditionné à >= lower (par symétrie)."""
    return -sample_truncated_normal_above(-np.asarray(mean, dtype=float), sd, -lower, rng)


def sample_truncated_endpoint_pair(
    spec: BridgeSpec,
    c: float,
    d: float,
    level: float,
    rng: np.random.Generator,
    size: Optional[int] = None,
    sweeps: int = GIBBS_SWEEPS
) -> Tuple[ArrayLike, ArrayLike]:
    """
    Tire (B(c), B(d)) conditionné à B(c) <= level et B(d) <= level.

    Balayages de Gibbs sur les deux coordonnées avec conditionnelles normales tronquées exactes.

    Args:
        spec: Pont
        c: Premier temps intérieur
        d: Second temps intérieur
        level: Niveau de troncature
        rng: Générateur aléatoire
        size: Nombre de paires (None : une seule)
        sweeps: Balayages de chauffe par échantillon

    Returns:
        (v_c, v_d), tous deux <= level
    """
    TwoTimeQuery(c, d, level).validate(spec)
    mean, cov = bridge_mean_cov(spec, [c, d])
    m1, m2 = mean
    s11, s12, s22 = cov[0, 0], cov[0, 1], cov[1, 1]
    n = 1 if size is None else size

    sd1_given = math.sqrt(s11 - s12 * s12 / s22)
    sd2_given = math.sqrt(s22 - s12 * s12 / s11)

    # Départ : marginale tronquée de B(c), puis conditionnelle de B(d)
    v1 = sample_truncated_normal_above(np.full(n, m1), math.sqrt(s11), level, rng)
    v2 = sample_truncated_normal_above(m2 + s12 / s11 * (v1 - m1), sd2_given, level, rng)
    for _ in range(sweeps):
        v1 = sample_truncated_normal_above(m1 + s12 / s22 * (v2 - m2), sd1_given, level, rng)
        v2 = sample_truncated_normal_above(m2 + s12 / s11 * (v1 - m1), sd2_given, level, rng)

    if size is None:
        return float(v1[0]), float(v2[0])
    return v1, v2


def _locate(times: np.ndarray, t: float, label: str) -> int:
    idx = int(np.searchsorted(times, t))
    for candidate in (idx - 1, idx, idx + 1):
        if 0 <= candidate < times.size and abs(times[candidate] - t) <= 1e-14 * max(1.0, abs(t)):
            return candidate
    raise DomainError(f"La grille ne contient pas le temps {label}={t}")


def sample_conditioned_three_segments(
    spec: BridgeSpec,
    c: float,
    d: float,
    v_c: ArrayLike,
    v_d: ArrayLike,
    grid_times: Sequence[float],
    rng: np.random.Generator
) -> np.ndarray:
    """
    Trajectoire complète à partir de trois ponts indépendants [p,c], [c,d], [d,q].

    Args:
        spec: Pont global (x en p, y en q)
        c: Premier temps de conditionnement
        d: Second temps de conditionnement
        v_c: Valeur(s) imposée(s) en c
        v_d: Valeur(s) imposée(s) en d
        grid_times: Grille croissante dans [p, q] contenant c et d
        rng: Générateur aléatoire

    Returns:
        Valeurs sur la grille, (len(grid),) pour des scalaires, (size, len(grid)) sinon
    """
    TwoTimeQuery(c, d, 0.0).validate(spec)
    ts = np.asarray(grid_times, dtype=float)
    if np.any(np.diff(ts) <= 0) or ts[0] < spec.p or ts[-1] > spec.q:
        raise DomainError("La grille doit être strictement croissante et contenue dans [p, q]")
    ic = _locate(ts, c, "c")
    id_ = _locate(ts, d, "d")

    scalar = np.ndim(v_c) == 0 and np.ndim(v_d) == 0
    vc = np.atleast_1d(np.asarray(v_c, dtype=float))
    vd = np.atleast_1d(np.asarray(v_d, dtype=float))
    vc, vd = np.broadcast_arrays(vc, vd)
    n = vc.shape[0]

    out = np.empty((n, ts.size))
    out[:, ic] = vc
    out[:, id_] = vd

    segments = (
        (spec.p, c, np.full(n, spec.x), vc, ts[:ic]),
        (c, d, vc, vd, ts[ic + 1:id_]),
        (d, spec.q, vd, np.full(n, spec.y), ts[id_ + 1:]),
    )
    offsets = (0, ic + 1, id_ + 1)
    for (left, right, start, end, seg_times), offset in zip(segments, offsets):
        inner = seg_times[(seg_times > left) & (seg_times < right)]
        # Extrémités éventuelles p et q présentes dans la grille
        if seg_times.size and seg_times[0] == left:
            out[:, offset] = start
            offset += 1
        if inner.size:
            out[:, offset:offset + inner.size] = _sample_segment(left, right, start, end, inner, rng)
        if seg_times.size and seg_times[-1] == right:
            out[:, offset + inner.size] = end

    return out[0] if scalar else out


# ---------------------------------------------------------------------------
# Probabilité F par quadrature adaptative
# ---------------------------------------------------------------------------

def _phi(s: float) -> float:
    return math.exp(-0.5 * s * s) / math.sqrt(2.0 * math.pi)


def _Phi(s: float) -> float:
    return 0.5 * math.erfc(-s / _SQRT2)


def _adaptive_simpson(f, a: float, b: float, tol: float, max_depth: int = 50) -> float:
    """Simpson adaptatif itératif avec correction de Richardson."""
    fa, fm, fb = f(a), f(0.5 * (a + b)), f(b)
    whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    stack = [(a, b, fa, fm, fb, whole, tol, 0)]
    total: List[float] = []
    while stack:
        a, b, fa, fm, fb, whole, eps, depth = stack.pop()
        m = 0.5 * (a + b)
        lm, rm = 0.5 * (a + m), 0.5 * (m + b)
        flm, frm = f(lm), f(rm)
        left = (m - a) / 6.0 * (fa + 4.0 * flm + fm)
        right = (b - m) / 6.0 * (fm + 4.0 * frm + fb)
        delta = left + right - whole
        if depth >= max_depth or abs(delta) <= 15.0 * eps:
            total.append(left + right + delta / 15.0)
        else:
            stack.append((a, m, fa, flm, fm, left, 0.5 * eps, depth + 1))
            stack.append((m, b, fm, frm, fb, right, 0.5 * eps, depth + 1))
    return math.fsum(total)


def bivariate_below_prob(mean: Sequence[float], cov: np.ndarray, r: float, tol: float = SIMPSON_TOL) -> float:
    """
    P(X1 <= r, X2 <= r) pour un vecteur gaussien non dégénéré.

    L'intégrale intérieure est Φ en forme close ; l'intégrale extérieure est un Simpson adaptatif
    sur [-40, h] découpé en panneaux.

    Args:
        mean: (m1, m2)
        cov: Matrice 2x2
        r: Niveau
        tol: Tolérance absolue

    Returns:
        Probabilité
    """
    s1, s2 = math.sqrt(cov[0, 0]), math.sqrt(cov[1, 1])
    rho = cov[0, 1] / (s1 * s2)
    h = (r - mean[0]) / s1
    k = (r - mean[1]) / s2
    if h < -38.5 or k < -38.5:
        return 0.0
    h = min(h, 40.0)
    scale = math.sqrt(1.0 - rho * rho)

    def integrand(s: float) -> float:
        return _phi(s) * _Phi((k - rho * s) / scale)

    lo = -40.0
    panels = 64
    width = (h - lo) / panels
    pieces = [
        _adaptive_simpson(integrand, lo + i * width, lo + (i + 1) * width, tol / panels)
        for i in range(panels)
    ]
    return min(1.0, max(0.0, math.fsum(pieces)))


def two_time_below_prob(spec: BridgeSpec, query: TwoTimeQuery, tol: float = SIMPSON_TOL) -> float:
    """
    F(r; p,q; c,d; x,y) = P(B(c) <= r et B(d) <= r) par quadrature déterministe.

    Args:
        spec: Pont
        query: Temps c < d et niveau r
        tol: Tolérance absolue

    Returns:
        Probabilité F
    """
    query.validate(spec)
    mean, cov = bridge_mean_cov(spec, [query.c, query.d])
    return bivariate_below_prob(mean, cov, query.r, tol)
