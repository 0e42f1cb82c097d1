"""gibbs-lines - Simulation d'ensembles de lignes gibbsiens H-browniens."""

__version__ = "1.0.0"
