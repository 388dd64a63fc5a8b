"""xorshift64* generator (Marsaglia shift triple 12/25/27, Vigna multiplier).

Deterministic and seedable so ORAM traces replay exactly; not suitable
for cryptographic use.  State is a 1-element uint64 array so compiled
kernels can advance it in place.
"""

import numpy as np
from numba import njit

U64 = np.uint64
_MULT = U64(0x2545F4914F6CDD1D)
_ZERO_SEED_SUBSTITUTE = 0x9E3779B97F4A7C15


def new_state(seed: int) -> np.ndarray:
    seed = int(seed) & ((1 << 64) - 1)
    return np.array([seed or _ZERO_SEED_SUBSTITUTE], dtype=np.uint64)


@njit(inline="always")
def next_u64(state):
    x = state[0]
    x ^= x >> U64(12)
    x ^= x << U64(25)
    x ^= x >> U64(27)
    state[0] = x
    return x * _MULT


@njit(inline="always")
def next_bits(state, bits):
    """Top ``bits`` bits of the next output (bits in 1..63)."""
    return next_u64(state) >> U64(64 - bits)


@njit(cache=True)
def _draw(state, bits, n):
    out = np.empty(n, np.uint64)
    for i in range(n):
        out[i] = next_bits(state, bits)
    return out


def draw_bits(state: np.ndarray, bits: int, n: int) -> np.ndarray:
    return _draw(state, bits, n)
