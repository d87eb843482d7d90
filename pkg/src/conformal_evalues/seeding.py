"""Keyed random streams.

Every random draw in the package comes from a generator keyed by
``(master_seed, *key, purpose)``, so streams never depend on execution order
and adding a new purpose tag never perturbs existing streams.
"""
import zlib

import numpy as np


def _tag(purpose):
    return zlib.crc32(purpose.encode("utf-8"))


def keyed_rng(master_seed, *key, purpose="default"):
    """Return a counter-based (Philox) generator for the given key."""
    spawn_key = tuple(int(k) for k in key) + (_tag(purpose),)
    seq = np.random.SeedSequence(entropy=int(master_seed) % 2**64, spawn_key=spawn_key)
    return np.random.Generator(np.random.Philox(seq))


def keyed_seed(master_seed, *key, purpose="default"):
    """Derive a 63-bit integer seed from a key (for APIs taking plain ints)."""
    spawn_key = tuple(int(k) for k in key) + (_tag(purpose),)
    seq = np.random.SeedSequence(entropy=int(master_seed) % 2**64, spawn_key=spawn_key)
    return int(seq.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
