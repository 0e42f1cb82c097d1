"""Hamiltoniens d'interaction, catalogue intégré et vérifications numériques des conditions λ-exponentielles."""

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..utils.errors import DomainError
from ..utils.logger import get_logger

logger = get_logger()

ArrayLike = Union[float, np.ndarray]

DEFAULT_GRID_POINTS = 2001


@dataclass(frozen=True)
class Hamiltonian:
    """
    Fonction continue H: [-inf, inf) -> [0, inf).

    Les réels étendus sont des flottants IEEE ; -inf est un argument valide dont la
    valeur est fournie explicitement par value_at_minus_infinity (jamais obtenue par
    dépassement de capacité), +inf est rejeté.
    """

    name: str
    function: Callable[[np.ndarray], np.ndarray] = field(repr=False, compare=False)
    value_at_minus_infinity: float = 0.0
    lam: Optional[float] = None
    declared_convex: bool = True
    scalar_function: Optional[Callable[[float], float]] = field(default=None, repr=False, compare=False)

    def __call__(self, x: ArrayLike) -> ArrayLike:
        return evaluate(self, x)

    def scalar(self, x: float) -> float:
        """
        Évaluation scalaire rapide (boucle MCMC).

        Args:
            x: Réel étendu (float, éventuellement -inf)

        Returns:
            H(x)
        """
        if x == -math.inf:
            return self.value_at_minus_infinity
        if x == math.inf or x != x:
            raise DomainError(f"Argument hors du domaine [-inf, inf) pour {self.name}: {x}")
        if self.scalar_function is not None:
            return self.scalar_function(x)
        return float(self.function(np.asarray([x], dtype=float))[0])

    @classmethod
    def custom(
        cls,
        name: str,
        function: Callable[[np.ndarray], np.ndarray],
        value_at_minus_infinity: float = 0.0,
        declared_convex: bool = False,
        lam: Optional[float] = None
    ) -> "Hamiltonian":
        """
        Construit un hamiltonien hors catalogue (tests, diagnostics).

        Args:
            name: Nom affiché
            function: Fonction vectorisée sur les réels finis
            value_at_minus_infinity: Valeur en -inf
            declared_convex: Convexité déclarée par l'utilisateur
            lam: Taux exponentiel asymptotique éventuel

        Returns:
            Hamiltonien
        """
        return cls(name, function, value_at_minus_infinity, lam, declared_convex)


def evaluate(hamiltonian: Hamiltonian, x: ArrayLike) -> ArrayLike:
    """
    Évalue H sur un scalaire ou un tableau de réels étendus.

    Args:
        hamiltonian: Hamiltonien
        x: Argument(s) dans [-inf, inf)

    Returns:
        H(x), de même forme que x
    """
    arr = np.asarray(x, dtype=float)
    flat = np.atleast_1d(arr)
    if np.isnan(flat).any():
        raise DomainError(f"Argument NaN pour {hamiltonian.name}")
    if (flat == np.inf).any():
        raise DomainError(f"+inf est exclu du domaine de {hamiltonian.name}")

    out = np.empty_like(flat)
    finite = np.isfinite(flat)
    out[~finite] = hamiltonian.value_at_minus_infinity
    if finite.any():
        out[finite] = hamiltonian.function(flat[finite])

    if arr.ndim == 0:
        return float(out[0])
    return out.reshape(arr.shape)


# ---------------------------------------------------------------------------
# Catalogue
# ---------------------------------------------------------------------------

def zero() -> Hamiltonian:
    """H = 0 (mouvements browniens libres)."""
    return Hamiltonian("zero", np.zeros_like, 0.0, None, True, lambda x: 0.0)


def exponential(lam: float) -> Hamiltonian:
    """
    H(x) = exp(λx).

    Args:
        lam: Taux λ > 0

    Returns:
        Hamiltonien λ-exponentiel
    """
    if lam <= 0:
        raise DomainError(f"Le taux λ doit être positif (reçu {lam})")
    return Hamiltonian(
        f"exponential:{lam!r}",
        lambda x: np.exp(lam * x),
        0.0,
        lam,
        True,
        lambda x: math.exp(lam * x) if lam * x < 709.0 else math.inf
    )


def kpz(t: float) -> Hamiltonian:
    """
    Hamiltonien de la ligne KPZ au temps t : exp(t^(1/3) x).

    Args:
        t: Temps t > 0

    Returns:
        exponential(t^(1/3)) renommé
    """
    if t <= 0:
        raise DomainError(f"Le temps KPZ doit être positif (reçu {t})")
    lam = t ** (1.0 / 3.0)
    base = exponential(lam)
    return Hamiltonian(f"kpz:{t!r}", base.function, 0.0, lam, True, base.scalar_function)


def poly_exp() -> Hamiltonian:
    """H(x) = (x² + 4) exp(x), λ = 1."""
    def scalar(x: float) -> float:
        return (x * x + 4.0) * math.exp(x) if x < 709.0 else math.inf

    return Hamiltonian("poly_exp", lambda x: (x * x + 4.0) * np.exp(x), 0.0, 1.0, True, scalar)


def exp_plus_square(lam: float) -> Hamiltonian:
    """
    H(x) = exp(λx) + x² 1{x >= 0}.

    Args:
        lam: Taux λ > 0

    Returns:
        Hamiltonien
    """
    if lam <= 0:
        raise DomainError(f"Le taux λ doit être positif (reçu {lam})")

    def scalar(x: float) -> float:
        head = math.exp(lam * x) if lam * x < 709.0 else math.inf
        return head + (x * x if x >= 0.0 else 0.0)

    return Hamiltonian(
        f"exp_plus_square:{lam!r}",
        lambda x: np.exp(lam * x) + np.where(x >= 0.0, x * x, 0.0),
        0.0,
        lam,
        True,
        scalar
    )


def exp_mixture(lam: float, c0: float, terms: Sequence[Tuple[float, float]] = ()) -> Hamiltonian:
    """
    H(x) = C0 exp(λx) + Σ Ci exp(λi x) avec λ > max λi > 0 et coefficients positifs.

    Args:
        lam: Taux dominant λ
        c0: Coefficient dominant C0
        terms: Couples (Ci, λi)

    Returns:
        Hamiltonien λ-exponentiel (le rapport H(x+y)/H(y) tend vers exp(λx))
    """
    terms = tuple((float(c), float(rate)) for c, rate in terms)
    if lam <= 0 or c0 <= 0:
        raise DomainError(f"exp_mixture: λ et C0 doivent être positifs (λ={lam}, C0={c0})")
    for c, rate in terms:
        if c <= 0 or rate <= 0 or rate >= lam:
            raise DomainError(f"exp_mixture: terme invalide C={c}, λi={rate} (exigé C > 0, 0 < λi < λ)")

    def function(x: np.ndarray) -> np.ndarray:
        total = c0 * np.exp(lam * x)
        for c, rate in terms:
            total = total + c * np.exp(rate * x)
        return total

    suffix = "".join(f":{c!r}@{rate!r}" for c, rate in terms)
    return Hamiltonian(f"exp_mixture:{lam!r}:{c0!r}{suffix}", function, 0.0, lam, True)


CATALOG: Dict[str, Callable[..., Hamiltonian]] = {
    "zero": zero,
    "exponential": exponential,
    "kpz": kpz,
    "poly_exp": poly_exp,
    "exp_plus_square": exp_plus_square,
    "exp_mixture": exp_mixture,
}


def parse_hamiltonian(text: str) -> Hamiltonian:
    """
    Construit un hamiltonien du catalogue depuis sa chaîne de configuration.

    Formats : "zero", "poly_exp", "exponential:<λ>", "kpz:<t>", "exp_plus_square:<λ>",
    "exp_mixture:<λ>:<C0>[:<Ci>@<λi>...]".

    Args:
        text: Chaîne de configuration

    Returns:
        Hamiltonien
    """
    parts = [p.strip() for p in str(text).strip().split(':')]
    name, args = parts[0], parts[1:]
    if name not in CATALOG:
        raise DomainError(f"Hamiltonien inconnu: '{text}' (catalogue: {', '.join(sorted(CATALOG))})")

    try:
        if name in ("zero", "poly_exp"):
            if args:
                raise DomainError(f"'{name}' ne prend pas de paramètre")
            return CATALOG[name]()
        if name == "exp_mixture":
            if len(args) < 2:
                raise DomainError("exp_mixture attend au moins <λ>:<C0>")
            terms = []
            for term in args[2:]:
                coefficient, rate = term.split('@')
                terms.append((float(coefficient), float(rate)))
            return exp_mixture(float(args[0]), float(args[1]), terms)
        if len(args) != 1:
            raise DomainError(f"'{name}' attend exactement un paramètre")
        return CATALOG[name](float(args[0]))
    except ValueError as e:
        if isinstance(e, DomainError):
            raise
        raise DomainError(f"Paramètre illisible dans '{text}': {e}") from e


# ---------------------------------------------------------------------------
# Vérifications numériques
# ---------------------------------------------------------------------------

def lambda_exponential_deviation(
    hamiltonian: Hamiltonian,
    lam: float,
    M: float,
    y: float,
    grid_points: int = DEFAULT_GRID_POINTS
) -> float:
    """
    Écart max sur x ∈ [-M, M] entre H(x+y)/H(y) et exp(λx).

    Args:
        hamiltonian: Hamiltonien testé
        lam: Taux λ
        M: Demi-largeur de la fenêtre
        y: Décalage
        grid_points: Nombre de points de la grille uniforme

    Returns:
        Écart maximal (>= 0)
    """
    h_y = float(evaluate(hamiltonian, y))
    if h_y <= 0.0:
        raise DomainError(f"H({y}) = {h_y} : division impossible, {hamiltonian.name} s'annule en y")
    xs = np.linspace(-M, M, grid_points)
    ratio = np.asarray(evaluate(hamiltonian, xs + y)) / h_y
    return float(np.max(np.abs(ratio - np.exp(lam * xs))))


@dataclass
class DeviationTrend:
    """Écarts λ-exponentiels le long d'une échelle de décalages y."""

    ys: List[float]
    deviations: List[float]

    def nonincreasing(self, tol: float = 1e-9) -> bool:
        """Vrai si les écarts ne croissent pas (à tol près)."""
        return all(b <= a + tol for a, b in zip(self.deviations, self.deviations[1:]))

    def strictly_decreasing(self) -> bool:
        """Vrai si les écarts décroissent strictement."""
        return all(b < a for a, b in zip(self.deviations, self.deviations[1:]))


def lambda_exponential_trend(
    hamiltonian: Hamiltonian,
    lam: float,
    M: float,
    ys: Sequence[float],
    grid_points: int = DEFAULT_GRID_POINTS
) -> DeviationTrend:
    """
    Tendance de la condition λ-exponentielle : on rapporte la suite des écarts, sans vitesse imposée.

    Args:
        hamiltonian: Hamiltonien testé
        lam: Taux λ
        M: Demi-largeur de la fenêtre
        ys: Décalages croissants
        grid_points: Points de grille

    Returns:
        Tendance des écarts
    """
    deviations = [lambda_exponential_deviation(hamiltonian, lam, M, y, grid_points) for y in ys]
    logger.debug(f"Écarts λ-exponentiels de {hamiltonian.name}: {deviations}")
    return DeviationTrend(list(ys), deviations)


def check_convexity(hamiltonian: Hamiltonian, lo: float, hi: float, grid_points: int = 201) -> bool:
    """
    Convexité au point milieu sur toutes les paires de la grille.

    Args:
        hamiltonian: Hamiltonien testé
        lo: Borne inférieure de la fenêtre
        hi: Borne supérieure de la fenêtre
        grid_points: Nombre de points (>= 3)

    Returns:
        True si H((x+y)/2) <= (H(x)+H(y))/2 + tol pour toutes les paires
    """
    if not lo < hi:
        raise DomainError(f"Fenêtre de convexité vide: [{lo}, {hi}]")
    if grid_points < 3:
        raise DomainError(f"Au moins 3 points requis (reçu {grid_points})")

    xs = np.linspace(lo, hi, grid_points)
    values = np.asarray(evaluate(hamiltonian, xs))
    midpoints = np.asarray(evaluate(hamiltonian, 0.5 * (xs[:, None] + xs[None, :])))
    chords = 0.5 * (values[:, None] + values[None, :])
    tol = 1e-12 * max(1.0, float(np.max(values)), float(np.max(midpoints)))
    return bool(np.all(midpoints <= chords + tol))


def check_continuity(
    hamiltonian: Hamiltonian,
    lo: float,
    hi: float,
    grid_points: int = DEFAULT_GRID_POINTS,
    h: float = 1e-6
) -> float:
    """
    Module de continuité empirique max |H(x+h) - H(x)| sur la grille.

    Args:
        hamiltonian: Hamiltonien testé
        lo: Borne inférieure
        hi: Borne supérieure
        grid_points: Nombre de points
        h: Pas de perturbation

    Returns:
        Plus grande variation observée
    """
    xs = np.linspace(lo, hi, grid_points)
    return float(np.max(np.abs(np.asarray(evaluate(hamiltonian, xs + h)) - np.asarray(evaluate(hamiltonian, xs)))))


def minus_infinity_gap(hamiltonian: Hamiltonian, x: float = -1e6) -> float:
    """|H(-inf) - H(x)| pour x très négatif."""
    return abs(hamiltonian.value_at_minus_infinity - float(evaluate(hamiltonian, x)))


@dataclass
class HamiltonianReport:
    """Résultat des trois vérifications de la définition λ-exponentielle."""

    name: str
    nonnegative: bool
    continuity_modulus: float
    convex: bool
    minus_infinity_gap: float
    trend: Optional[DeviationTrend]

    @property
    def passed(self) -> bool:
        ok = self.nonnegative and self.convex and self.minus_infinity_gap <= 1e-12
        if self.trend is not None:
            ok = ok and self.trend.nonincreasing()
        return ok

    def to_dict(self) -> Dict:
        return {
            "name": self.name,
            "nonnegative": self.nonnegative,
            "continuity_modulus": self.continuity_modulus,
            "convex": self.convex,
            "minus_infinity_gap": self.minus_infinity_gap,
            "ys": self.trend.ys if self.trend else None,
            "deviations": self.trend.deviations if self.trend else None,
            "passed": self.passed,
        }


def validate_hamiltonian(
    hamiltonian: Hamiltonian,
    lo: float = -10.0,
    hi: float = 10.0,
    M: float = 2.0,
    ys: Sequence[float] = (10.0, 20.0, 40.0, 80.0)
) -> HamiltonianReport:
    """
    Lance toutes les vérifications numériques sur une fenêtre.

    Args:
        hamiltonian: Hamiltonien testé
        lo: Borne inférieure de la fenêtre
        hi: Borne supérieure de la fenêtre
        M: Demi-largeur pour l'écart λ-exponentiel
        ys: Échelle de décalages

    Returns:
        Rapport de validation
    """
    xs = np.linspace(lo, hi, DEFAULT_GRID_POINTS)
    nonnegative = bool(np.all(np.asarray(evaluate(hamiltonian, xs)) >= 0.0))
    trend = None
    if hamiltonian.lam is not None:
        trend = lambda_exponential_trend(hamiltonian, hamiltonian.lam, M, ys)

    report = HamiltonianReport(
        name=hamiltonian.name,
        nonnegative=nonnegative,
        continuity_modulus=check_continuity(hamiltonian, lo, hi),
        convex=check_convexity(hamiltonian, lo, hi),
        minus_infinity_gap=max(minus_infinity_gap(hamiltonian, -1e3), minus_infinity_gap(hamiltonian, -1e6)),
        trend=trend,
    )
    if hamiltonian.declared_convex and not report.convex:
        logger.warning(f"{hamiltonian.name} est déclaré convexe mais échoue au test de convexité sur [{lo}, {hi}]")
    logger.info(f"Validation de {hamiltonian.name}: {'OK' if report.passed else 'ÉCHEC'}")
    return report
