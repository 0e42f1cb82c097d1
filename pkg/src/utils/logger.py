"""Module de logging pour gibbs-lines."""

import logging
import os
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import Optional, Union

LOG_DIR_ENV = "GIBBS_LINES_LOG_DIR"
DEFAULT_LOG_DIR = "data/logs"

# Les workers du pool de répliques sont des threads nommés replica-<i>
LOG_FORMAT = '[%(asctime)s] [%(levelname)s] [%(threadName)s] %(message)s'
DATE_FORMAT = '%Y-%m-%d %H:%M:%S'


class AppLogger:
    """Gestionnaire de logs de la bibliothèque et de la CLI."""

    def __init__(self, log_dir: Optional[str] = None, log_file: str = "gibbs_lines.log"):
        """
        Initialise le système de logging.

        Args:
            log_dir: Répertoire des fichiers de logs (par défaut $GIBBS_LINES_LOG_DIR ou data/logs)
            log_file: Nom du fichier de log principal
        """
        self.log_dir = Path(log_dir or os.environ.get(LOG_DIR_ENV, DEFAULT_LOG_DIR))
        self.log_file = self.log_dir / log_file
        self.formatter = logging.Formatter(LOG_FORMAT, datefmt=DATE_FORMAT)

        self.logger = logging.getLogger("GibbsLines")
        self.logger.setLevel(logging.DEBUG)
        self.logger.propagate = False

        # Éviter la duplication des handlers
        if not self.logger.handlers:
            self._add_file_handler()
            console_handler = logging.StreamHandler()
            console_handler.setLevel(logging.INFO)
            console_handler.setFormatter(self.formatter)
            self.logger.addHandler(console_handler)

    def _add_file_handler(self) -> None:
        """Ajoute le handler fichier (rotation 10 MB × 5) dans log_dir."""
        try:
            self.log_dir.mkdir(parents=True, exist_ok=True)
            file_handler = RotatingFileHandler(
                self.log_file,
                maxBytes=10 * 1024 * 1024,  # 10 MB
                backupCount=5,
                encoding='utf-8'
            )
        except OSError:
            # Répertoire en lecture seule : on se contente de la console
            return
        file_handler.setLevel(logging.DEBUG)
        file_handler.setFormatter(self.formatter)
        self.logger.addHandler(file_handler)

    def _file_handlers(self):
        return [h for h in self.logger.handlers if isinstance(h, RotatingFileHandler)]

    def set_log_dir(self, log_dir: Union[str, Path]) -> None:
        """
        Redirige le fichier de log vers un autre répertoire.

        Le singleton est créé à l'import des modules ; la CLI appelle cette méthode
        une fois le .env chargé.

        Args:
            log_dir: Nouveau répertoire
        """
        log_dir = Path(log_dir)
        if log_dir == self.log_dir and self._file_handlers():
            return
        for handler in self._file_handlers():
            self.logger.removeHandler(handler)
            handler.close()
        self.log_dir = log_dir
        self.log_file = log_dir / self.log_file.name
        self._add_file_handler()

    def info(self, message: str) -> None:
        """Log un message de niveau INFO."""
        self.logger.info(message)

    def warning(self, message: str) -> None:
        """Log un message de niveau WARNING."""
        self.logger.warning(message)

    def error(self, message: str, exc_info: bool = False) -> None:
        """
        Log un message de niveau ERROR.

        Args:
            message: Message d'erreur
            exc_info: Inclure les informations d'exception
        """
        self.logger.error(message, exc_info=exc_info)

    def debug(self, message: str) -> None:
        """Log un message de niveau DEBUG."""
        self.logger.debug(message)

    def set_debug_mode(self, enabled: bool) -> None:
        """
        Active ou désactive le mode debug sur la console.

        Args:
            enabled: True pour activer le mode debug
        """
        level = logging.DEBUG if enabled else logging.INFO
        for handler in self.logger.handlers:
            # RotatingFileHandler hérite de StreamHandler : on ne touche qu'à la console
            if isinstance(handler, logging.StreamHandler) and not isinstance(handler, RotatingFileHandler):
                handler.setLevel(level)


# Instance globale du logger
_logger_instance: Optional[AppLogger] = None


def get_logger() -> AppLogger:
    """
    Récupère l'instance unique du logger.

    Returns:
        Instance du logger
    """
    global _logger_instance
    if _logger_instance is None:
        _logger_instance = AppLogger()
    return _logger_instance
