"""Branch-free primitives over unsigned 64-bit words.

The ``k_*`` functions are compiled helpers meant to be inlined into other
kernels; they take and return ``np.uint64``.  The plain-named functions are
the Python surface and accept ordinary ints.

A mask is a word that is either all zeros (false) or all ones (true).
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .trace import InstrumentedBuffer, emit_read, emit_write, kernel_log

U64 = np.uint64
WORD_MASK = (1 << 64) - 1
TRUE = WORD_MASK
FALSE = 0


@njit(inline="always")
def k_select(c, a, b):
    return (a & c) | (b & ~c)


@njit(inline="always")
def k_greater(a, b):
    # borrow out of (b - a) is set iff a > b
    d = b - a
    borrow = ((~b & a) | (~(b ^ a) & d)) >> U64(63)
    return U64(0) - borrow


@njit(inline="always")
def k_equal(a, b):
    d = a ^ b
    nonzero = (d | (U64(0) - d)) >> U64(63)
    return U64(0) - (nonzero ^ U64(1))


@njit(inline="always")
def k_min(a, b):
    return k_select(k_greater(a, b), b, a)


@njit(inline="always")
def k_max(a, b):
    return k_select(k_greater(a, b), a, b)


@njit(inline="always")
def k_bool(bit):
    """Mask from a 0/1 word."""
    return U64(0) - (bit & U64(1))


@njit(inline="always")
def k_lex_greater(a, b, nkey):
    """Mask: row ``a`` > row ``b`` comparing the first ``nkey`` lanes lexicographically."""
    gt = U64(0)
    eq = ~U64(0)
    for l in range(nkey):
        gt = gt | (eq & k_greater(a[l], b[l]))
        eq = eq & k_equal(a[l], b[l])
    return gt


# -- Python surface ---------------------------------------------------------

@njit(cache=True)
def _select(c, a, b):
    return k_select(c, a, b)


@njit(cache=True)
def _greater(a, b):
    return k_greater(a, b)


@njit(cache=True)
def _equal(a, b):
    return k_equal(a, b)


def _w(x: int) -> np.uint64:
    return U64(int(x) & WORD_MASK)


def mask(flag: bool) -> int:
    return TRUE if flag else FALSE


def o_select(c: int, a: int, b: int) -> int:
    """``a`` when mask ``c`` is true, else ``b``; both operands are consumed."""
    return int(_select(_w(c), _w(a), _w(b)))


def o_greater(a: int, b: int) -> int:
    return int(_greater(_w(a), _w(b)))


def o_equal(a: int, b: int) -> int:
    return int(_equal(_w(a), _w(b)))


def o_min(a: int, b: int) -> int:
    return o_select(o_greater(a, b), b, a)


def o_max(a: int, b: int) -> int:
    return o_select(o_greater(a, b), a, b)


@njit(cache=True)
def _move(data, tag, log, i, c, src):
    emit_read(log, tag, i)
    cur = data[i]
    emit_write(log, tag, i)
    data[i] = k_select(c, src, cur)


@njit(cache=True)
def _swap(data, tag, log, i, j, c):
    emit_read(log, tag, i)
    x = data[i]
    emit_read(log, tag, j)
    y = data[j]
    t = (x ^ y) & c
    emit_write(log, tag, i)
    data[i] = x ^ t
    emit_write(log, tag, j)
    data[j] = y ^ t


def o_move(c: int, buf: InstrumentedBuffer, i: int, src: int) -> None:
    """Store ``src`` into slot ``i`` when ``c`` is true; the slot is always rewritten."""
    buf._check(i)
    with kernel_log(2, buf) as log:
        _move(buf.data, buf.tag, log, i, _w(c), _w(src))


def o_swap(c: int, buf: InstrumentedBuffer, i: int, j: int) -> None:
    """Exchange slots ``i`` and ``j`` when ``c`` is true; both are always rewritten."""
    buf._check(i)
    buf._check(j)
    with kernel_log(4, buf) as log:
        _swap(buf.data, buf.tag, log, i, j, _w(c))


@njit(cache=True)
def k_array_read(data, tag, log, i):
    acc = U64(0)
    for j in range(data.shape[0]):
        emit_read(log, tag, j)
        acc = k_select(k_equal(U64(j), i), data[j], acc)
    return acc


@njit(cache=True)
def k_array_write(data, tag, log, i, v):
    for j in range(data.shape[0]):
        emit_read(log, tag, j)
        cur = data[j]
        emit_write(log, tag, j)
        data[j] = k_select(k_equal(U64(j), i), v, cur)


def o_array_read(buf: InstrumentedBuffer, i: int) -> int:
    """Read element ``i`` by scanning the whole buffer.

    An out-of-range index yields 0 rather than an error.
    """
    with kernel_log(len(buf), buf) as log:
        return int(k_array_read(buf.data, buf.tag, log, _w(i)))


def o_array_write(buf: InstrumentedBuffer, i: int, v: int) -> None:
    """Rewrite every element, changing only element ``i`` (no-op when out of range)."""
    with kernel_log(2 * len(buf), buf) as log:
        k_array_write(buf.data, buf.tag, log, _w(i), _w(v))
