"""
Seeded random streams.

Every random draw in mvcat (simulated predictors and responses, nonzero row positions, fold shuffles, prox
self-test instances) goes through a numpy Generator built here. Streams are derived from a single integer seed
with numpy's SeedSequence, so replicate r of an experiment gets the same substream whether replicates run one at
a time or on eight threads.

Functions:
    make_rng(seed: int | np.random.SeedSequence | None = None) -> np.random.Generator
    spawn_seeds(seed: int, count: int) -> list[np.random.SeedSequence]
    spawn_generators(seed: int, count: int) -> list[np.random.Generator]
    choose_without_replacement(rng: np.random.Generator, population: int, count: int) -> np.ndarray
"""

import os

import numpy as np
from dotenv import load_dotenv

from mvcat.error.mvcat_error import DomainError

load_dotenv()

#######################
# Constants definitions
#######################

DEFAULT_SEED: int = int(os.getenv("MVCAT_SEED", "0"))


######################
# Function definitions
######################


def make_rng(seed: int | np.random.SeedSequence | None = None) -> np.random.Generator:
    """
    Build a PCG64 generator.

    Args:
        seed (int | SeedSequence | None, optional): Integer seed or an already spawned SeedSequence.
            None uses MVCAT_SEED (default 0), never OS entropy, so every command is reproducible.

    Raises:
        DomainError: If the integer seed is negative.

    Returns:
        np.random.Generator: The generator.

    Examples:
        >>> make_rng(7).integers(0, 10, 3).tolist() == make_rng(7).integers(0, 10, 3).tolist()
        True
    """

    if seed is None:
        seed = DEFAULT_SEED
    if isinstance(seed, (int, np.integer)) and seed < 0:
        raise DomainError("Seed must be a nonnegative integer", argument="seed", value=seed)
    sequence = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(int(seed))
    return np.random.Generator(np.random.PCG64(sequence))


def spawn_seeds(seed: int, count: int) -> list[np.random.SeedSequence]:
    """
    Derive count independent child seed sequences from one integer seed.

    Child i depends only on (seed, i), so substreams can be consumed in any order or in parallel.

    Args:
        seed (int): Root seed.
        count (int): Number of children.

    Raises:
        DomainError: If count is negative or seed is negative.

    Returns:
        list[SeedSequence]: The children, in index order.
    """

    if count < 0:
        raise DomainError("Number of streams must be nonnegative", argument="count", value=count)
    if seed < 0:
        raise DomainError("Seed must be a nonnegative integer", argument="seed", value=seed)
    return np.random.SeedSequence(seed).spawn(count)


def spawn_generators(seed: int, count: int) -> list[np.random.Generator]:
    """Same as spawn_seeds, wrapped in generators."""
    return [make_rng(child) for child in spawn_seeds(seed, count)]


def choose_without_replacement(rng: np.random.Generator, population: int, count: int) -> np.ndarray:
    """
    Draw count distinct integers uniformly from range(population), in draw order.

    Args:
        rng (np.random.Generator): Source of randomness.
        population (int): Size of the population.
        count (int): Number of draws.

    Raises:
        DomainError: If count exceeds the population.

    Returns:
        np.ndarray: Integer array of length count.
    """

    if not 0 <= count <= population:
        raise DomainError(
            f"Cannot draw {count} distinct values from a population of {population}", argument="count", value=count
        )
    return rng.choice(population, size=count, replace=False)
