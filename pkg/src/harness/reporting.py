"""Rapports d'expérience, critères d'acceptation et exports CSV/JSON."""

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np

from .. import __version__
from ..core.lattice import EnsembleState
from ..utils.errors import DomainError
from ..utils.logger import get_logger

logger = get_logger()

REPORT_FILE = "report.json"
TIMING_FILE = "timing.json"


def _token(value: float) -> str:
    """Valeur décimale pleine précision ; inf et -inf en jetons."""
    if value == math.inf:
        return "inf"
    if value == -math.inf:
        return "-inf"
    return repr(float(value))


def jsonable(value: Any) -> Any:
    """Convertit récursivement en types JSON ; les flottants non finis deviennent des jetons."""
    if isinstance(value, dict):
        return {str(k): jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(v) for v in value]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return _token(value)
        return value
    if isinstance(value, Path):
        return str(value)
    return value


@dataclass
class Criterion:
    """Critère d'acceptation : valeur mesurée, seuil et verdict."""

    passed: bool
    value: Any
    threshold: Any

    def to_dict(self) -> Dict[str, Any]:
        return {"passed": bool(self.passed), "value": self.value, "threshold": self.threshold}


@dataclass
class ExperimentReport:
    """Résultat d'une expérience, déterministe pour une configuration donnée."""

    experiment: str
    seed: int
    config: Dict[str, Any]
    criteria: Dict[str, Criterion] = field(default_factory=dict)
    metrics: Dict[str, Any] = field(default_factory=dict)
    wall_clock: Optional[float] = None

    @property
    def passed(self) -> bool:
        return bool(self.criteria) and all(c.passed for c in self.criteria.values())

    def add(self, name: str, passed: bool, value: Any, threshold: Any) -> None:
        """Enregistre un critère et journalise son verdict."""
        self.criteria[name] = Criterion(bool(passed), value, threshold)
        status = "OK" if passed else "ÉCHEC"
        logger.info(f"[{self.experiment}] {name}: {status} (valeur={value}, seuil={threshold})")

    def to_dict(self) -> Dict[str, Any]:
        return jsonable({
            "experiment": self.experiment,
            "passed": self.passed,
            "criteria": {name: c.to_dict() for name, c in self.criteria.items()},
            "metrics": self.metrics,
            "config": self.config,
            "seed": self.seed,
            "version": __version__,
        })

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"

    def write(self, out_dir: Path, report_name: str = REPORT_FILE) -> Path:
        """
        Écrit report.json (octet pour octet reproductible) et timing.json à part.

        Args:
            out_dir: Répertoire de sortie
            report_name: Nom du fichier de rapport

        Returns:
            Chemin du rapport
        """
        path = Path(out_dir) / report_name
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(self.to_json(), encoding="utf-8")
            if self.wall_clock is not None:
                timing = {"experiment": self.experiment, "wall_clock_seconds": self.wall_clock}
                (path.parent / TIMING_FILE).write_text(json.dumps(timing, indent=2) + "\n", encoding="utf-8")
        except OSError as e:
            logger.error(f"Impossible d'écrire le rapport {path}: {e}", exc_info=True)
            raise
        logger.info(f"Rapport écrit dans {path}")
        return path


# ---------------------------------------------------------------------------
# Critères de tendance
# ---------------------------------------------------------------------------

def nonincreasing_within(values: Sequence[float], errors: Sequence[float], sigma: float = 2.0) -> bool:
    """Chaque hausse entre termes consécutifs reste sous sigma·√(se_j² + se_{j+1}²)."""
    return all(
        b - a <= sigma * math.hypot(ea, eb)
        for a, b, ea, eb in zip(values, values[1:], errors, errors[1:])
    )


def nondecreasing_within(values: Sequence[float], errors: Sequence[float], sigma: float = 2.0) -> bool:
    """Chaque baisse entre termes consécutifs reste sous sigma·√(se_j² + se_{j+1}²)."""
    return nonincreasing_within([-v for v in values], errors, sigma)


def strictly_decreasing_within(values: Sequence[float], errors: Sequence[float], sigma: float = 2.0) -> bool:
    """
    Décroissance stricte aux erreurs près : hausses consécutives < sigma·√(se_j² + se_{j+1}²)
    et dernier terme strictement sous le premier.
    """
    if len(values) < 2:
        return True
    rises_ok = all(
        b - a < sigma * math.hypot(ea, eb) or b < a
        for a, b, ea, eb in zip(values, values[1:], errors, errors[1:])
    )
    return rises_ok and values[-1] < values[0]


# ---------------------------------------------------------------------------
# Exports
# ---------------------------------------------------------------------------

def export_paths(
    states: Iterable[EnsembleState],
    path: Path,
    include_boundaries: bool = False
) -> int:
    """
    Écrit des états en CSV : en-tête time,curve_1..curve_k (f et g en option), un bloc par état.

    Args:
        states: États à écrire
        path: Fichier de destination
        include_boundaries: Ajoute les colonnes f (avant) et g (après)

    Returns:
        Nombre de lignes de données écrites
    """
    path = Path(path)
    rows = 0
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            header_written = False
            for state in states:
                if not header_written:
                    header = ["time"] + [f"curve_{i + 1}" for i in range(state.k)]
                    if include_boundaries:
                        header = ["time", "f"] + header[1:] + ["g"]
                    writer.writerow(header)
                    header_written = True
                values = state.values()
                f_values, g_values = state.f.values, state.g.values
                for m, t in enumerate(state.grid.times()):
                    row = [_token(v) for v in values[:, m]]
                    if include_boundaries:
                        row = [_token(f_values[m])] + row + [_token(g_values[m])]
                    writer.writerow([_token(t)] + row)
                    rows += 1
    except OSError as e:
        logger.error(f"Impossible d'écrire {path}: {e}", exc_info=True)
        raise
    logger.info(f"{rows} lignes de trajectoires écrites dans {path}")
    return rows


def read_paths(path: Path) -> List[Dict[str, np.ndarray]]:
    """
    Relit un CSV de trajectoires ; un nouveau bloc commence quand le temps revient en arrière.

    Args:
        path: Fichier CSV

    Returns:
        Liste de blocs {colonne: valeurs}
    """
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        blocks: List[List[List[float]]] = []
        previous = math.inf
        for row in reader:
            values = [float(v) for v in row]
            # Temps strictement croissants dans un bloc
            if values[0] <= previous:
                blocks.append([])
            blocks[-1].append(values)
            previous = values[0]
    return [
        {name: np.asarray([r[j] for r in block]) for j, name in enumerate(header)}
        for block in blocks
    ]


def export_rows(rows: Sequence[Dict[str, Any]], path: Path) -> None:
    """
    Écrit des enregistrements plats en CSV (colonnes dans l'ordre du premier enregistrement).

    Args:
        rows: Enregistrements
        path: Fichier de destination
    """
    if not rows:
        raise DomainError("Aucun enregistrement à écrire")
    path = Path(path)
    columns = list(rows[0].keys())
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(columns)
            for row in rows:
                writer.writerow([
                    _token(row[c]) if isinstance(row[c], float) else row[c] for c in columns
                ])
    except OSError as e:
        logger.error(f"Impossible d'écrire {path}: {e}", exc_info=True)
        raise
    logger.info(f"{len(rows)} enregistrements écrits dans {path}")
