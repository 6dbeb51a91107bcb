"""Counter-based random streams keyed by ``(seed, tag, block)``.

Paths are simulated in fixed-size blocks; each block draws from its own
Philox stream, so results do not depend on scheduling or worker count.
"""

from __future__ import annotations

import zlib

import numpy as np

from .._validation import ValidationError

BLOCK_SIZE = 4096


def _tag_key(tag):
    return zlib.crc32(str(tag).encode("utf-8"))


def stream(seed, tag, index=0):
    if seed is None or int(seed) < 0:
        raise ValidationError("a nonnegative integer seed is required")
    ss = np.random.SeedSequence([int(seed), _tag_key(tag), int(index)])
    return np.random.Generator(np.random.Philox(ss))


def block_bounds(num_paths, block_size=BLOCK_SIZE):
    return [(b, a, min(a + block_size, num_paths))
            for b, a in enumerate(range(0, num_paths, block_size))]


def _run_block(func, seed, tag, b, n):
    return func(stream(seed, tag, b), n, b)


def map_blocks(func, num_paths, seed, tag, n_jobs=1, block_size=BLOCK_SIZE):
    """Apply ``func(rng, n, block_index)`` per block; results come back in block order."""
    bounds = block_bounds(num_paths, block_size)
    if n_jobs == 1 or len(bounds) == 1:
        return [_run_block(func, seed, tag, b, c - a) for b, a, c in bounds]
    from joblib import Parallel, delayed

    return Parallel(n_jobs=n_jobs)(
        delayed(_run_block)(func, seed, tag, b, c - a) for b, a, c in bounds
    )
