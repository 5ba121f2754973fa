"""Named, deterministic random substreams derived from one master seed.

Every random draw in a run comes from ``substream(seed, stage, *key)``. The
key identifies the unit of work (a block of replications, a block of prior
draws), never the worker that happens to execute it, so results do not
depend on scheduling or on the number of workers.
"""
from __future__ import annotations

import zlib

import numpy as np

STAGE_CLASSROOM = 1
STAGE_SEMESTER = 2

#: Replications / prior draws generated from one substream.
CLASSROOM_BLOCK = 250
SEMESTER_BLOCK = 10_000

MAX_SEED = 2**64 - 1


def check_seed(seed) -> int:
    if isinstance(seed, bool) or not isinstance(seed, (int, np.integer)):
        raise TypeError(f"seed must be an integer, got {seed!r}")
    seed = int(seed)
    if not 0 <= seed <= MAX_SEED:
        raise ValueError(f"seed must fit in an unsigned 64-bit integer, got {seed}")
    return seed


def label_key(label: str) -> int:
    """Stable integer for a string key (``hash`` is salted per process)."""
    return zlib.crc32(label.encode("utf-8"))


def substream(seed: int, stage: int, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=check_seed(seed), spawn_key=(stage, *map(int, key)))
    return np.random.Generator(np.random.PCG64(ss))


def block_sizes(total: int, block: int) -> list:
    full, rest = divmod(total, block)
    return [block] * full + ([rest] if rest else [])
