"""Small shared helpers: seed derivation and worker-pool sizing."""

from __future__ import annotations

import os

import numpy as np


def derive_seed(*keys):
    """Deterministic 63-bit child seed from integer keys.

    Used to give replicates and scenario draws independent streams that are
    reproducible from a single master seed.
    """
    ss = np.random.SeedSequence([int(k) & 0x7FFFFFFFFFFFFFFF for k in keys])
    return int(ss.generate_state(1, np.uint64)[0] & 0x7FFFFFFFFFFFFFFF)


def resolve_threads(default_cap=4):
    """Worker count: MRFMFM_THREADS when set, else min(cap, cpu count)."""
    env = os.environ.get("MRFMFM_THREADS")
    if env:
        value = int(env)
        if value < 1:
            raise ValueError(f"MRFMFM_THREADS must be >= 1, got {env}")
        return value
    return max(1, min(default_cap, os.cpu_count() or 1))
