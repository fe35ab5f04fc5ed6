"""Splittable seeded random streams.

Every random draw in the package goes through :func:`substream`, which keys a
``numpy.random.SeedSequence`` by the master seed plus a tuple of integers.
Streams with different keys are statistically independent, and a stream's
output never depends on which other streams were consumed before it.
"""

import numpy as np

# variable tags for per-dimension streams
TAG_Z = 1
TAG_EPS_X = 2
TAG_EPS_Y = 3
TAG_C1 = 11
TAG_C2 = 12
TAG_C3 = 13
TAG_SIGMA1 = 14
TAG_SIGMA2 = 15

# tags for training / evaluation streams
TAG_INIT = 101
TAG_SHUFFLE = 102
TAG_NOISE = 103
TAG_EVAL = 104
TAG_NAIVE = 105
TAG_SWEEP = 106

_UINT64_MASK = (1 << 64) - 1


def check_seed(seed):
    seed = int(seed)
    if seed < 0 or seed > _UINT64_MASK:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return seed


def substream(seed, *keys):
    """Return an independent ``Generator`` for ``(seed, *keys)``."""
    ss = np.random.SeedSequence(check_seed(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.PCG64(ss))


def derive_seed(seed, *keys):
    """Derive a child uint64 seed, for handing to another seeded routine."""
    ss = np.random.SeedSequence(check_seed(seed), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0])
