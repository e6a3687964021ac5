"""Seed derivation.

Every random stream in the package is derived from a single global seed and a
string label (usually a canonical architecture ID), so results do not depend
on evaluation order.
"""

import hashlib

import numpy as np

MASK64 = (1 << 64) - 1

# SplitMix64 increment (golden-ratio constant) and the two finalizer multipliers.
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
MIX_MUL_1 = 0xBF58476D1CE4E5B9
MIX_MUL_2 = 0x94D049BB133111EB


def splitmix64(x: int) -> int:
    z = (x + GOLDEN_GAMMA) & MASK64
    z = ((z ^ (z >> 30)) * MIX_MUL_1) & MASK64
    z = ((z ^ (z >> 27)) * MIX_MUL_2) & MASK64
    return z ^ (z >> 31)


def label_hash(label: str) -> int:
    """First 8 bytes of SHA-256 of ``label`` as a big-endian integer."""
    return int.from_bytes(hashlib.sha256(label.encode("utf-8")).digest()[:8], "big")


def derive_seed(global_seed: int, label) -> int:
    """Mix ``global_seed`` with a string or integer label into a 64-bit seed."""
    if isinstance(label, str):
        label = label_hash(label)
    return splitmix64((splitmix64(int(global_seed) & MASK64) ^ (int(label) & MASK64)) & MASK64)


def rng_for(global_seed: int, label) -> np.random.Generator:
    return np.random.default_rng(derive_seed(global_seed, label))
