"""
Seeded random streams.

A run seed feeds a numpy SeedSequence; each species gets its own spawned child
(index 0 for rho, 1 for eta), so changing N never perturbs the eta draws.
"""

from typing import Dict

import numpy as np

SPECIES_STREAMS = ("rho", "eta")


def species_generators(seed: int) -> Dict[str, np.random.Generator]:
    children = np.random.SeedSequence(seed).spawn(len(SPECIES_STREAMS))
    return {
        name: np.random.Generator(np.random.PCG64(child))
        for name, child in zip(SPECIES_STREAMS, children)
    }


def species_generator(seed: int, species: str) -> np.random.Generator:
    try:
        return species_generators(seed)[species]
    except KeyError:
        raise ValueError(f"Unknown species stream: {species}")
