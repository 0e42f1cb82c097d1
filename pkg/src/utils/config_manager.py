"""Module de gestion de la configuration des expériences."""

import copy
import json
import sys
from pathlib import Path
from typing import Any, Dict, Optional

from packaging import version

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError
from .logger import get_logger

logger = get_logger()

CONFIG_VERSION = "1.0.0"

EXPERIMENT_IDS = ("E1", "E2", "E3", "E4", "E5", "E6", "E7")


class ConfigManager:
    """Gestionnaire de configuration : valeurs par défaut, profil d'expérience, fichier TOML, options CLI."""

    DEFAULT_CONFIG: Dict[str, Any] = {
        "version": CONFIG_VERSION,
        "general": {
            "hamiltonian": "exponential:1.0",
            "debug_checks": False
        },
        "run": {
            "experiment": "E1",
            "seed": 20240611,
            "workers": 1,
            "replicas": 8
        },
        "output": {
            "dir": None,
            "report": "report.json",
            "data": "data.csv"
        },
        "geometry": {
            "a": 0.0,
            "b": 1.0,
            "n": 2
        },
        "data": {
            "k": 1,
            "entrance": [0],
            "exit": [0],
            "f": "inf",
            "g": "-2"
        },
        "mcmc": {
            "event_budget": 100000,
            "burn_in": None,
            "thinning": None,
            "samples": 10000,
            "state_cap": 1000000
        },
        "monte_carlo": {
            # Taille des lots des estimateurs par ponts (E5, E6, E7) ; fait partie du flux aléatoire
            "batch": 5000
        }
    }

    # Profils reproduisant les instances des critères d'acceptation
    EXPERIMENT_DEFAULTS: Dict[str, Dict[str, Any]] = {
        "E1": {
            "criteria": {"stationarity_tol": 1e-10, "detailed_balance_tol": 1e-12, "expected_states": 19}
        },
        "E2": {
            "mcmc": {"samples": 100000, "thinning": 16, "burn_in": 2000},
            "criteria": {"tv_threshold": 0.02}
        },
        "E3": {
            "geometry": {"n": 4},
            "data": {"k": 2, "entrance": [0, -1], "exit": [0, -1], "f": "inf", "g": "-2"},
            "coupling": {"entrance": [1, 0], "exit": [2, 0], "f": "inf", "g": "-1", "allow_nonconvex": False},
            "mcmc": {"event_budget": 1000000, "burn_in": 0, "thinning": 1000},
            "criteria": {"max_violations": 0}
        },
        "E4": {
            "bridge_max": {"T": 1.0, "a": 0.0, "beta": 1.0, "grid_points": 4096, "samples": 100000},
            "mills": {"c0": 2.0, "x_max": 20.0, "step": 0.5},
            "two_time": {
                "mc_samples": 1000000,
                "cases": [
                    [0.0, 1.0, 0.0, 0.0, 0.3333333333333333, 0.6666666666666666, 0.0],
                    [0.0, 1.0, 0.0, 0.0, 0.25, 0.75, -0.5],
                    [0.0, 2.0, 1.0, -1.0, 0.5, 1.5, 0.2],
                    [-1.0, 1.0, 0.5, 0.5, -0.2, 0.4, 0.3],
                    [0.0, 1.0, -0.3, 0.8, 0.1, 0.9, 1.0]
                ]
            },
            "criteria": {"max_rel_tol": 0.05, "sigma": 3.0}
        },
        "E5": {
            "normalization": {"k": 1, "entrance": [0.0], "exit": [0.0], "lower": 0.0, "center": 0.0,
                              "j_min": 2, "j_max": 10, "samples": 10000, "quadrature_points": 256},
            "criteria": {"sigma": 2.0, "final_min": 0.99}
        },
        "E6": {
            "observable": {"t1": 0.0, "z": 2, "w_ladder": [100.0, 1000.0, 10000.0], "lower": 0.0,
                           "x": 0.0, "y": 0.0, "conditioned_samples": 100000, "plain_samples": 100000,
                           "steps_per_window": 256},
            "lambda_check": {"M_exact": 2.0, "y_exact": [10.0, 20.0, 40.0, 80.0],
                             "reference": "exp_plus_square:1.0", "M": 1.0, "ys": [10.0, 20.0, 30.0],
                             "exact_tol": 1e-12, "final_max": 1e-3},
            "criteria": {"rel_tol": 0.05, "sigma": 3.0}
        },
        "E7": {
            "tail": {"lambda": 1.0, "M": 1.0, "x": 0.0, "y": 0.0, "n_ladder": [8, 16, 32, 64],
                     "samples": 10000, "b_exponent": 0.75, "side_points": 64, "middle_points": 512},
            "weak": {"n": 16, "samples": 100000, "x_index": 0, "y_index": 0},
            "criteria": {"sigma": 2.0, "ks_threshold": 0.02}
        }
    }

    def __init__(self, config_file: Optional[str] = None, experiment: Optional[str] = None):
        """
        Initialise le gestionnaire de configuration.

        Args:
            config_file: Chemin d'un fichier TOML (optionnel)
            experiment: Identifiant d'expérience (E1..E7) dont le profil est appliqué
        """
        self.config_file = Path(config_file) if config_file else None
        self.config: Dict[str, Any] = copy.deepcopy(self.DEFAULT_CONFIG)
        self.load(experiment)

    def load(self, experiment: Optional[str] = None) -> None:
        """
        Construit la configuration : défauts, puis profil d'expérience, puis fichier TOML.

        Args:
            experiment: Identifiant d'expérience forcé (prioritaire sur le fichier)
        """
        loaded: Dict[str, Any] = {}
        if self.config_file is not None:
            if not self.config_file.exists():
                raise ConfigError(f"Fichier de configuration introuvable: {self.config_file}")
            try:
                with open(self.config_file, 'rb') as f:
                    loaded = tomllib.load(f)
            except tomllib.TOMLDecodeError as e:
                raise ConfigError(f"Fichier TOML invalide {self.config_file}: {e}") from e
            logger.info(f"Configuration chargée depuis {self.config_file}")

        self._check_version(loaded.get("version", CONFIG_VERSION))

        experiment = experiment or loaded.get("run", {}).get("experiment") or self.config["run"]["experiment"]
        if experiment not in EXPERIMENT_IDS:
            raise ConfigError(f"Expérience inconnue: {experiment} (attendu: {', '.join(EXPERIMENT_IDS)})")

        profile = self.EXPERIMENT_DEFAULTS.get(experiment, {})
        self.config = self._merge_configs(self.config, copy.deepcopy(profile))
        self.config = self._merge_configs(self.config, loaded)
        self.config["run"]["experiment"] = experiment
        logger.debug(f"Profil {experiment} appliqué")

    def _check_version(self, declared: Any) -> None:
        """
        Vérifie que la version du fichier est compatible (même version majeure).

        Args:
            declared: Version déclarée dans le fichier
        """
        try:
            declared_v = version.parse(str(declared))
        except version.InvalidVersion as e:
            raise ConfigError(f"Version de configuration illisible: {declared}") from e
        if declared_v.major != version.parse(CONFIG_VERSION).major:
            raise ConfigError(f"Version de configuration {declared} incompatible avec {CONFIG_VERSION}")

    def _merge_configs(self, default: Dict, loaded: Dict) -> Dict:
        """
        Fusionne deux dictionnaires de configuration.

        Args:
            default: Configuration de base
            loaded: Configuration prioritaire

        Returns:
            Configuration fusionnée
        """
        result = dict(default)
        for key, value in loaded.items():
            if key in result and isinstance(result[key], dict) and isinstance(value, dict):
                result[key] = self._merge_configs(result[key], value)
            else:
                result[key] = value
        return result

    def get(self, key_path: str, default: Any = None) -> Any:
        """
        Récupère une valeur de configuration par chemin.

        Args:
            key_path: Chemin de la clé (ex: "mcmc.event_budget")
            default: Valeur par défaut si la clé n'existe pas

        Returns:
            Valeur de configuration
        """
        value: Any = self.config
        for key in key_path.split('.'):
            if isinstance(value, dict) and key in value:
                value = value[key]
            else:
                return default
        return value

    def require(self, key_path: str) -> Any:
        """
        Comme get, mais une clé absente est une erreur de configuration.

        Args:
            key_path: Chemin de la clé

        Returns:
            Valeur de configuration
        """
        value = self.get(key_path)
        if value is None:
            raise ConfigError(f"Clé de configuration manquante: {key_path}")
        return value

    def set(self, key_path: str, value: Any) -> None:
        """
        Définit une valeur de configuration par chemin.

        Args:
            key_path: Chemin de la clé (ex: "run.seed")
            value: Valeur à définir
        """
        keys = key_path.split('.')
        config = self.config
        for key in keys[:-1]:
            if key not in config or not isinstance(config[key], dict):
                config[key] = {}
            config = config[key]
        config[keys[-1]] = value

    def apply_overrides(self, overrides: Dict[str, Any]) -> None:
        """
        Applique les options de ligne de commande (les valeurs None sont ignorées).

        Args:
            overrides: {chemin: valeur}
        """
        for key_path, value in overrides.items():
            if value is not None:
                self.set(key_path, value)
                logger.debug(f"Option appliquée: {key_path}={value}")

    def positive_int(self, key_path: str) -> int:
        """
        Lit un budget entier strictement positif.

        Args:
            key_path: Chemin de la clé

        Returns:
            Entier > 0
        """
        value = self.require(key_path)
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value or value <= 0:
            raise ConfigError(f"{key_path} doit être un entier positif (reçu {value!r})")
        return int(value)

    def as_dict(self) -> Dict[str, Any]:
        """
        Copie profonde de la configuration résolue (provenance des rapports).

        Returns:
            Dictionnaire de configuration
        """
        return copy.deepcopy(self.config)

    def save(self, path: Path) -> None:
        """
        Sauvegarde la configuration résolue en JSON.

        Args:
            path: Fichier de destination
        """
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(self.config, f, indent=2, sort_keys=True, ensure_ascii=False)
        logger.debug(f"Configuration résolue sauvegardée dans {path}")
