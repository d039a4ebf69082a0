"""Seeded pseudo-random generator for fold splits and synthetic corpora.

A plain 64-bit linear congruential generator (multiplier 6364136223846793005,
increment 1442695040888963407, modulus 2**64). Nothing clever, but fully
specified, so shuffles and synthesized datasets reproduce bit-exactly from a
seed on any platform or language.
"""

from __future__ import annotations

from typing import MutableSequence

import numpy as np

MULTIPLIER = 6364136223846793005
INCREMENT = 1442695040888963407
_MASK = (1 << 64) - 1


class Lcg64:
    """state' = (state * MULTIPLIER + INCREMENT) mod 2**64.

    Derived draws use the high bits only; the low bits of a power-of-two
    modulus LCG have short periods.
    """

    def __init__(self, seed: int):
        self.state = seed & _MASK

    def next_u64(self) -> int:
        self.state = (self.state * MULTIPLIER + INCREMENT) & _MASK
        return self.state

    def next_float(self) -> float:
        """Uniform in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) * 2.0**-53

    def next_below(self, n: int) -> int:
        """Uniform-ish integer in [0, n): top 32 bits modulo n."""
        if n < 1:
            raise ValueError(f"next_below needs n >= 1, got {n}")
        return (self.next_u64() >> 32) % n

    def shuffle(self, items: MutableSequence) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.next_below(i + 1)
            items[i], items[j] = items[j], items[i]


# skip-ahead coefficients: state_{k} = a**k * state_0 + c * (a**(k-1) + ... + 1)
_BLOCK_COEFFS: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _block_coeffs(n: int) -> tuple[np.ndarray, np.ndarray]:
    cached = _BLOCK_COEFFS.get(n)
    if cached is None:
        a = np.empty(n, dtype=np.uint64)
        c = np.empty(n, dtype=np.uint64)
        ak, ck = 1, 0
        for k in range(n):
            ak = (ak * MULTIPLIER) & _MASK
            ck = (ck * MULTIPLIER + INCREMENT) & _MASK
            a[k] = ak
            c[k] = ck
        cached = (a, c)
        _BLOCK_COEFFS[n] = cached
    return cached


def uniform_block(seed: int, n: int) -> np.ndarray:
    """n floats in [0, 1): the same stream Lcg64(seed) would produce, but
    generated in one vectorized skip-ahead step (uint64 arithmetic wraps
    mod 2**64 by construction)."""
    a, c = _block_coeffs(n)
    with np.errstate(over="ignore"):
        states = a * np.uint64(seed & _MASK) + c
    return (states >> np.uint64(11)).astype(np.float64) * 2.0**-53
