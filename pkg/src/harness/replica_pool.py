"""Module d'exécution parallèle des répliques indépendantes."""

import queue
import threading
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

from ..utils.logger import get_logger

logger = get_logger()


class ReplicaPool:
    """
    Pool fixe de threads exécutant une tâche par identifiant de flux.

    Les résultats sont rendus dans l'ordre des identifiants, quel que soit le nombre de workers ;
    une exception dans une réplique arrête le pool et est relancée chez l'appelant.
    """

    def __init__(self, workers: int = 1):
        """
        Initialise le pool.

        Args:
            workers: Nombre de threads (>= 1)
        """
        self.workers = max(1, int(workers))
        self.is_running = False
        self.threads: List[threading.Thread] = []
        self._tasks: "queue.Queue[Optional[Tuple[int, int]]]" = queue.Queue()
        self._results: Dict[int, Any] = {}
        self._errors: List[Tuple[int, BaseException]] = []
        self._lock = threading.Lock()
        self._stop_event = threading.Event()

    def _worker_loop(self, task: Callable[[int], Any]) -> None:
        """Boucle d'un worker (exécutée dans un thread)."""
        while not self._stop_event.is_set():
            item = self._tasks.get()
            if item is None:
                break
            position, stream_id = item
            try:
                result = task(stream_id)
            except BaseException as e:  # relancée dans le thread appelant
                with self._lock:
                    self._errors.append((stream_id, e))
                self._stop_event.set()
                break
            with self._lock:
                self._results[position] = result

    def map(self, task: Callable[[int], Any], stream_ids: Sequence[int]) -> List[Any]:
        """
        Exécute task(stream_id) pour chaque identifiant.

        Args:
            task: Fonction d'une réplique
            stream_ids: Identifiants de flux

        Returns:
            Résultats dans l'ordre de stream_ids
        """
        if self.is_running:
            raise RuntimeError("Le pool est déjà en cours d'exécution")
        ids = list(stream_ids)
        self._results = {}
        self._errors = []
        self._stop_event.clear()

        if self.workers == 1 or len(ids) <= 1:
            return [task(stream_id) for stream_id in ids]

        self.is_running = True
        for position, stream_id in enumerate(ids):
            self._tasks.put((position, stream_id))
        count = min(self.workers, len(ids))
        for _ in range(count):
            self._tasks.put(None)

        self.threads = [
            threading.Thread(target=self._worker_loop, args=(task,), daemon=True, name=f"replica-{i}")
            for i in range(count)
        ]
        for thread in self.threads:
            thread.start()
        logger.debug(f"{len(ids)} répliques lancées sur {count} workers")
        self.stop()

        if self._errors:
            stream_id, error = self._errors[0]
            logger.error(f"Échec de la réplique {stream_id}: {error}")
            raise error
        return [self._results[position] for position in range(len(ids))]

    def stop(self) -> None:
        """Attend la fin des workers et vide la file."""
        for thread in self.threads:
            thread.join()
        self.threads = []
        while not self._tasks.empty():
            try:
                self._tasks.get_nowait()
            except queue.Empty:
                break
        self.is_running = False
