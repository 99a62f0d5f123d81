"""Deterministic seed derivation and random generator construction.

Every random stream in the package is a numpy PCG64 generator whose 64-bit
seed is derived from a parent seed plus stream labels via SplitMix64 mixing.
Rerunning any stage with the same parent seed therefore reproduces it
exactly, and independent stages (per-sample, per-subject, per-strategy)
get statistically independent streams.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def splitmix64(state: int) -> int:
    """One SplitMix64 finalization step (Steele et al. mixing constants)."""
    z = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def _to_u64(part: int | str) -> int:
    if isinstance(part, str):
        digest = hashlib.blake2b(part.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "little")
    return part & _MASK64


def mix(seed: int, *parts: int | str) -> int:
    """Derive a child 64-bit seed from a parent seed and stream labels.

    String labels are hashed to 64 bits first, so ``mix(s, "warmup", 3)``
    names a stream that cannot collide with ``mix(s, "finetune", 3)``
    except with negligible probability.
    """
    state = splitmix64(_to_u64(seed))
    for part in parts:
        state = splitmix64(state ^ _to_u64(part))
    return state


def make_rng(seed: int, *parts: int | str) -> np.random.Generator:
    """PCG64 generator for the stream named by (seed, *parts)."""
    return np.random.Generator(np.random.PCG64(mix(seed, *parts)))
