"""
Counter-based random streams and block-parallel execution.

A run is split into fixed-size blocks of trials. Block k of stream s draws
from a Philox generator keyed by the run seed whose counter starts at
(0, 0, k, s); the low counter words advance while drawing, so blocks never
overlap and each block's numbers do not depend on which worker produced them.
"""

from concurrent.futures import ThreadPoolExecutor, as_completed
from typing import Callable, Dict, List, Tuple, TypeVar
import logging

import numpy as np

from config import config

logger = logging.getLogger(__name__)

T = TypeVar("T")

# Stream tags keep independent consumers of one seed apart.
STREAM_TRIALS = 1
STREAM_LHV = 2
STREAM_SETTINGS = 3
STREAM_BOHM = 4
STREAM_PROBES = 5

_MAX_KEY = 2**128


def block_generator(seed: int, stream: int, block: int) -> np.random.Generator:
    """Return the generator owning (seed, stream, block)."""
    if seed < 0 or seed >= _MAX_KEY:
        raise ValueError(f"seed must be in [0, 2**128), got {seed}")
    if stream < 0 or block < 0:
        raise ValueError("stream and block indices must be non-negative")
    bit_generator = np.random.Philox(key=seed, counter=[0, 0, block, stream])
    return np.random.Generator(bit_generator)


def block_ranges(n: int, block_size: int | None = None) -> List[Tuple[int, int]]:
    """Split [0, n) into consecutive (start, stop) blocks."""
    size = block_size or config.block_size
    if size < 1:
        raise ValueError("block_size must be at least 1")
    return [(start, min(start + size, n)) for start in range(0, n, size)]


def run_blocks(
    work: Callable[[int, int, int], T],
    n: int,
    threads: int = 1,
    block_size: int | None = None,
) -> List[T]:
    """
    Evaluate work(block_index, start, stop) for every block of [0, n).

    Results come back in block order whatever the worker count, which is what
    makes seeded outputs identical across --threads settings.
    """
    ranges = block_ranges(n, block_size)
    if threads <= 1 or len(ranges) <= 1:
        return [work(k, start, stop) for k, (start, stop) in enumerate(ranges)]

    logger.debug(f"Running {len(ranges)} blocks on {threads} threads")
    results: Dict[int, T] = {}
    with ThreadPoolExecutor(max_workers=threads) as executor:
        futures = {
            executor.submit(work, k, start, stop): k
            for k, (start, stop) in enumerate(ranges)
        }
        for future in as_completed(futures):
            results[futures[future]] = future.result()
    return [results[k] for k in range(len(ranges))]


def uniforms(seed: int, stream: int, n: int, width: int, threads: int = 1,
             block_size: int | None = None) -> np.ndarray:
    """An (n, width) array of U[0, 1) draws assembled block by block."""

    def draw(block: int, start: int, stop: int) -> np.ndarray:
        return block_generator(seed, stream, block).random((stop - start, width))

    parts = run_blocks(draw, n, threads=threads, block_size=block_size)
    if not parts:
        return np.empty((0, width))
    return np.concatenate(parts, axis=0)
