"""
Fixtures partagées : générateur déterministe, instance à 19 états, répertoires temporaires.
"""

import os
import tempfile

# Les logs de test ne doivent pas polluer data/logs (le logger est créé à l'import)
os.environ.setdefault("GIBBS_LINES_LOG_DIR", os.path.join(tempfile.gettempdir(), "gibbs_lines_test_logs"))

import pytest

from src.core.hamiltonian import exponential
from src.core.lattice import EnsembleData, make_grid
from src.utils.seeding import seed_policy


# ============================================================================
# Fixtures
# ============================================================================

@pytest.fixture
def rng():
    """Générateur reproductible."""
    return seed_policy(12345, 0)


@pytest.fixture
def grid_n2():
    """Grille [0, 1] à l'échelle n = 2 (4 pas, dt = 1/4)."""
    return make_grid(0.0, 1.0, 2)


@pytest.fixture
def small_instance(grid_n2):
    """k = 1, x = y = 0, f = +inf, g = -2 : 19 états."""
    return EnsembleData.build(grid_n2, [0], [0], "inf", "-2")


@pytest.fixture
def exp1():
    return exponential(1.0)


@pytest.fixture
def out_dir(tmp_path, monkeypatch):
    """Répertoire de sortie isolé, aussi exposé via GIBBS_LINES_OUT."""
    path = tmp_path / "runs"
    monkeypatch.setenv("GIBBS_LINES_OUT", str(path))
    return path
