"""Per-replication random streams.

Every replication draws from its own Philox stream keyed by
``(seed, stream, replication)`` through :class:`numpy.random.SeedSequence`
spawn keys, so replications can run in any order or on any worker and still
produce the same numbers.
"""

import numpy as np

STREAMS = {"ctmc": 0, "noise": 1, "per_queue": 2}


def bit_generator(seed, replication=0, stream="ctmc"):
    """Fresh bit generator for one replication of one named stream."""
    if seed < 0 or seed >= 2**64:
        raise ValueError("seed must be a 64-bit unsigned integer")
    key = (STREAMS[stream], int(replication))
    return np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=key))


def generator(seed, replication=0, stream="ctmc"):
    return np.random.Generator(bit_generator(seed, replication, stream))
