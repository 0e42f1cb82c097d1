"""Point d'entrée principal de la CLI gibbs-lines."""

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Dict, List, Optional

from dotenv import find_dotenv, load_dotenv

from src import __version__
from src.core.hamiltonian import parse_hamiltonian, validate_hamiltonian
from src.core.mcmc import CoupledState, RunConfig, run_coupled, sample_ensemble
from src.harness.experiments import DEFAULT_OUT, OUT_ENV, ExperimentConfig, run_experiment
from src.harness.reporting import export_paths, jsonable
from src.utils.config_manager import EXPERIMENT_IDS, ConfigManager
from src.utils.errors import ConfigError, CouplingViolationError, DomainError, GibbsLinesError
from src.utils.logger import LOG_DIR_ENV, get_logger
from src.utils.seeding import seed_policy

logger = get_logger()

EXIT_PASS = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2


def build_parser() -> argparse.ArgumentParser:
    """Construit l'analyseur de la ligne de commande."""
    parser = argparse.ArgumentParser(
        prog="gibbs-lines",
        description="Simulation et vérification numérique d'ensembles de lignes gibbsiens H-browniens"
    )
    parser.add_argument('--version', action='version', version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument('--config', help="Fichier de configuration TOML")
        p.add_argument('--seed', type=int, help="Graine maître")
        p.add_argument('--out', help="Répertoire de sortie (défaut: $GIBBS_LINES_OUT ou data/runs)")
        p.add_argument('--debug', action='store_true', help="Logs DEBUG sur la console et vérifications numériques")

    run = sub.add_parser("run", help="Exécuter une expérience du catalogue")
    run.add_argument("experiment", choices=EXPERIMENT_IDS)
    common(run)
    run.add_argument('--workers', type=int, help="Nombre de threads pour les répliques")

    sample = sub.add_parser("sample", help="Échantillonner un ensemble discret vers CSV")
    common(sample)
    sample.add_argument('--samples', type=int, help="Nombre d'états à écrire")

    couple = sub.add_parser("couple", help="Démonstration du couplage monotone")
    common(couple)
    couple.add_argument('--events', type=int, help="Nombre d'événements partagés")
    couple.add_argument('--allow-nonconvex', action='store_true',
                        help="Mode diagnostic: compter les violations au lieu d'échouer")

    ham = sub.add_parser("hamiltonian", help="Vérifier un hamiltonien du catalogue")
    ham.add_argument("name", help='Nom du catalogue, ex. "exponential:1.0"')
    ham.add_argument('--out', help="Fichier JSON du rapport")
    ham.add_argument('--debug', action='store_true')
    return parser


def _load(args: argparse.Namespace, experiment: Optional[str]) -> ConfigManager:
    manager = ConfigManager(args.config, experiment=experiment)
    overrides: Dict[str, object] = {
        "run.seed": args.seed,
        "output.dir": args.out,
        "run.workers": getattr(args, "workers", None),
    }
    if args.debug:
        overrides["general.debug_checks"] = True
    manager.apply_overrides(overrides)
    return manager


def _output_dir(manager: ConfigManager, name: str) -> Path:
    return Path(manager.get("output.dir") or os.environ.get(OUT_ENV) or DEFAULT_OUT) / name


def cmd_run(args: argparse.Namespace) -> int:
    manager = _load(args, args.experiment)
    report = run_experiment(manager)
    print(json.dumps({"experiment": report.experiment, "passed": report.passed}, sort_keys=True))
    return EXIT_PASS if report.passed else EXIT_FAIL


def cmd_sample(args: argparse.Namespace) -> int:
    manager = _load(args, None)
    manager.apply_overrides({"mcmc.samples": args.samples})
    cfg = ExperimentConfig.from_manager(manager)
    data = cfg.ensemble_data()
    run = RunConfig.for_samples(
        data, cfg.count("mcmc.samples"), cfg.seed, cfg.get("mcmc.burn_in"), cfg.get("mcmc.thinning")
    )
    path = _output_dir(manager, "sample") / manager.get("output.data", "data.csv")
    rows = export_paths(
        sample_ensemble(data, cfg.hamiltonian, run, seed_policy(cfg.seed, 0), debug_checks=cfg.debug_checks),
        path, include_boundaries=True
    )
    print(json.dumps({"path": str(path), "rows": rows}))
    return EXIT_PASS


def cmd_couple(args: argparse.Namespace) -> int:
    manager = _load(args, "E3")
    manager.apply_overrides({"mcmc.event_budget": args.events})
    cfg = ExperimentConfig.from_manager(manager)
    out_dir = _output_dir(manager, "couple")
    coupled = CoupledState.from_data(cfg.ensemble_data("data"), cfg.ensemble_data("coupling"))
    run = RunConfig(
        cfg.count("mcmc.event_budget"), cfg.seed,
        int(cfg.get("mcmc.burn_in") or 0), int(cfg.get("mcmc.thinning") or 1000)
    )
    try:
        result = run_coupled(
            coupled, cfg.hamiltonian, run, seed_policy(cfg.seed, 0),
            allow_nonconvex=args.allow_nonconvex or bool(cfg.get("coupling.allow_nonconvex", False)),
            debug_checks=cfg.debug_checks, trace_dir=out_dir,
        )
    except CouplingViolationError as e:
        logger.error(f"Couplage rompu: {e} (trace: {e.trace_path})")
        return EXIT_FAIL
    states = [s for pair in result.samples for s in pair]
    if states:
        export_paths(states, out_dir / manager.get("output.data", "data.csv"), include_boundaries=True)
    print(json.dumps(jsonable(result.to_dict()), sort_keys=True))
    return EXIT_PASS if result.violations == 0 else EXIT_FAIL


def cmd_hamiltonian(args: argparse.Namespace) -> int:
    try:
        hamiltonian = parse_hamiltonian(args.name)
    except DomainError as e:
        raise ConfigError(str(e)) from e
    report = validate_hamiltonian(hamiltonian)
    text = json.dumps(jsonable(report.to_dict()), indent=2, sort_keys=True)
    if args.out:
        path = Path(args.out)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text + "\n", encoding="utf-8")
        logger.info(f"Rapport de validation écrit dans {path}")
    print(text)
    return EXIT_PASS if report.passed else EXIT_FAIL


COMMANDS = {
    "run": cmd_run,
    "sample": cmd_sample,
    "couple": cmd_couple,
    "hamiltonian": cmd_hamiltonian,
}


def load_environment() -> None:
    """
    Charge le .env du répertoire courant (ou d'un parent), puis redirige le fichier
    de log si GIBBS_LINES_LOG_DIR est défini : le logger existe déjà à ce stade.
    """
    env_file = find_dotenv(usecwd=True)
    if env_file:
        load_dotenv(env_file)
        logger.debug(f"Variables d'environnement chargées depuis {env_file}")
    log_dir = os.environ.get(LOG_DIR_ENV)
    if log_dir:
        logger.set_log_dir(log_dir)


def main(argv: Optional[List[str]] = None) -> int:
    """Fonction principale ; retourne le code de sortie (0 succès, 1 critère en échec, 2 configuration)."""
    load_environment()
    args = build_parser().parse_args(argv)
    if args.debug:
        logger.set_debug_mode(True)

    logger.info("=" * 60)
    logger.info(f"gibbs-lines v{__version__} - commande '{args.command}'")
    logger.info("=" * 60)

    try:
        return COMMANDS[args.command](args)
    except (ConfigError, DomainError) as e:
        logger.error(f"Configuration invalide: {e}")
        return EXIT_CONFIG
    except GibbsLinesError as e:
        logger.error(f"Erreur: {e}", exc_info=True)
        return EXIT_CONFIG
    except Exception as e:
        logger.error(f"Erreur fatale: {e}", exc_info=True)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
