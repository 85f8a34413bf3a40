"""
Deterministic random streams.

Every simulator works on fixed-size batches of paths. Batch b of a simulator
draws from a counter-based Philox stream keyed by (master seed, simulator key,
batch index), so a given path is reproducible regardless of worker count or
the order in which batches complete. Streams belong to batches, not to
single paths: path i draws from batch i // batch_size, and a run is only
reproduced under the same batch_size.
"""

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Sequence, Tuple, TypeVar

import numpy as np
import structlog

from .domain import ConfigurationError

logger = structlog.get_logger(__name__)

T = TypeVar("T")

MAX_SEED = 2**64 - 1

# Stream namespaces, one per simulator family
WBM_STREAM = 1
SNOWB_STREAM = 2
TRACE_STREAM = 3
BARRIER_STREAM = 4
LAPLACE_STREAM = 5
RANDOM_WALK_STREAM = 6


def check_seed(seed: int) -> int:
    if isinstance(seed, bool) or int(seed) != seed or not 0 <= seed <= MAX_SEED:
        raise ConfigurationError(f"Seed must be an integer in [0, 2**64), got {seed!r}")
    return int(seed)


def stream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for the counter key under a master seed."""
    sequence = np.random.SeedSequence(check_seed(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(sequence))


def batch_bounds(n_items: int, batch_size: int) -> List[Tuple[int, int, int]]:
    """(batch index, start, stop) triples covering range(n_items)."""
    if batch_size <= 0:
        raise ConfigurationError(f"batch_size must be positive, got {batch_size}")
    return [
        (index, start, min(start + batch_size, n_items))
        for index, start in enumerate(range(0, n_items, batch_size))
    ]


def run_batches(
    simulate: Callable[[np.random.Generator, int, int], T],
    n_items: int,
    batch_size: int,
    seed: int,
    key: Sequence[int],
    workers: int = 1,
) -> List[T]:
    """
    Run `simulate(rng, start, count)` over all batches.

    Results come back in batch order whatever the worker count.
    """
    bounds = batch_bounds(n_items, batch_size)

    def _one(bound: Tuple[int, int, int]) -> T:
        index, start, stop = bound
        rng = stream(seed, *key, index)
        return simulate(rng, start, stop - start)

    logger.debug("run_batches", n_items=n_items, batches=len(bounds), workers=workers)
    if workers <= 1 or len(bounds) == 1:
        return [_one(bound) for bound in bounds]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_one, bounds))
