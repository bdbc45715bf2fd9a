"""Deterministic seed derivation.

All randomness flows from one master seed. A child seed is the first eight
bytes of ``sha256(repr((master, *keys)))`` so results never depend on the
order in which instances are executed.
"""
from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(master: int, *keys) -> int:
    payload = repr((int(master),) + tuple(keys)).encode()
    return int.from_bytes(hashlib.sha256(payload).digest()[:8], "little")


def derive_rng(master: int, *keys) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, *keys))


def digest_arrays(*arrays, extra: str = "") -> str:
    """Short content hash of float arrays (shape and bytes)."""
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(np.asarray(a, dtype=np.float64))
        h.update(repr(a.shape).encode())
        h.update(a.tobytes())
    h.update(extra.encode())
    return h.hexdigest()[:16]
