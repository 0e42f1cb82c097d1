"""Hiérarchie d'exceptions de gibbs-lines."""

from typing import Optional


class GibbsLinesError(Exception):
    """Erreur de base de la bibliothèque."""


class DomainError(GibbsLinesError, ValueError):
    """Précondition mathématique violée (temps hors intervalle, x = +inf, grille invalide...)."""


class ScheduleError(DomainError):
    """Paramètres d'observable non admissibles (w en dessous de W0)."""

    def __init__(self, inequality: str, message: str):
        """
        Args:
            inequality: Inégalité d'admissibilité qui échoue
            message: Message détaillé
        """
        super().__init__(f"{message} [{inequality}]")
        self.inequality = inequality


class NonConvexHamiltonianError(DomainError):
    """Couplage monotone demandé avec un hamiltonien non convexe."""


class StateSpaceError(GibbsLinesError):
    """Espace d'états vide ou trop grand pour une énumération exacte."""


class CouplingViolationError(GibbsLinesError):
    """L'ordre ponctuel entre les deux chaînes couplées a été rompu."""

    def __init__(self, message: str, trace_path: Optional[str] = None):
        super().__init__(message)
        self.trace_path = trace_path


class ConfigError(GibbsLinesError):
    """Configuration d'expérience invalide."""
