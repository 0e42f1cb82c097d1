"""Politique de graines : dérivation déterministe de flux aléatoires indépendants."""

import numpy as np

from .errors import DomainError


def seed_policy(master_seed: int, stream_id: int) -> np.random.Generator:
    """
    Dérive un flux aléatoire à partir d'une graine maître et d'un identifiant de flux.

    La fonction de découpage est celle de numpy.random.SeedSequence : le couple
    (master_seed, stream_id) est haché en un état PCG64. Deux couples distincts
    donnent des états distincts, et un même couple redonne exactement le même flux.

    Args:
        master_seed: Graine maître (entier non négatif, 64 bits)
        stream_id: Identifiant du flux (entier non négatif)

    Returns:
        Générateur numpy indépendant
    """
    if master_seed < 0 or stream_id < 0:
        raise DomainError(f"Graine et identifiant de flux doivent être positifs: {master_seed}, {stream_id}")
    sequence = np.random.SeedSequence(entropy=master_seed, spawn_key=(stream_id,))
    return np.random.Generator(np.random.PCG64(sequence))


def stream_ids(base: int, count: int) -> list:
    """
    Identifiants de flux consécutifs réservés à une famille de répliques.

    Args:
        base: Premier identifiant
        count: Nombre de répliques

    Returns:
        Liste [base, base+1, ..., base+count-1]
    """
    return list(range(base, base + count))
