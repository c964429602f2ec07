"""Keyed deterministic RNG streams.

Every random decision in the simulator draws from a generator keyed by the
experiment seed plus integer tags identifying the purpose, client, round etc.
Distinct keys give independent streams; identical keys replay bitwise, so
results never depend on call order or worker scheduling.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1

# Stream purpose tags. Values are arbitrary but frozen: changing one changes
# every artifact downstream.
TAG_INIT = 1          # model weight init
TAG_BLOBS = 2         # synthetic dataset noise
TAG_DIRICHLET = 3     # label-skew partition
TAG_FEATURE_SKEW = 4  # per-client feature transforms
TAG_PUBLIC_SPLIT = 5  # public/private split
TAG_LOCAL_PUBLIC = 6  # per-client public shard sampling
TAG_SELECT = 7        # per-round client selection
TAG_CLIENT = 8        # per-client local seed stream
TAG_TEST_SPLIT = 9    # held-out split
TAG_ADVERSARY = 10    # black-box adversary init/training
TAG_EVAL_ATTACK = 11  # adversarial test set generation
TAG_LOCAL_UPDATE = 12 # shuffling/batching inside local updates
TAG_EXCHANGE_ATTACK = 13  # local public adversarial generation
TAG_WARMUP = 14       # optional server warmup on public data
TAG_BASELINE_ADV = 15 # baseline private adversarial subset/regeneration


def _norm(key: int) -> int:
    return int(key) & _MASK64


def rng_from(*keys: int) -> np.random.Generator:
    """Generator for the stream identified by the given key tuple."""
    return np.random.default_rng([_norm(k) for k in keys])


def derive_seed(*keys: int) -> int:
    """Collapse a key tuple into a single 63-bit seed."""
    return int(rng_from(*keys).integers(0, 1 << 63))
