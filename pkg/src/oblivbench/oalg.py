"""Compute-intensive oblivious algorithms and their unprotected twins.

* bitonic sort over fixed-width records (Batcher's network)
* Levenshtein distance with public lengths
* Floyd-Warshall all-pairs shortest paths with saturating addition

Each oblivious entry point records into the active trace session (if any)
through buffers it creates for its inputs.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .oprim import k_equal, k_greater, k_min, k_select
from .trace import InstrumentedBuffer, close_log, emit_exchange, emit_read, emit_write, open_log

U64 = np.uint64
KEY_MAX = (1 << 64) - 1
INF = 1 << 62


def comparator_count(n: int) -> int:
    """Compare-exchanges in Batcher's bitonic network for ``n`` = 2**k inputs."""
    if n < 2:
        return 0
    k = n.bit_length() - 1
    return n * k * (k + 1) // 4


def next_pow2(n: int) -> int:
    return 1 if n <= 1 else 1 << (n - 1).bit_length()


# -- bitonic sort -----------------------------------------------------------

@njit(inline="always")
def k_rows_greater(a, i, b, j, nkey):
    """Mask: a[i] > b[j] on the first ``nkey`` lanes, lexicographically."""
    gt = U64(0)
    eq = ~U64(0)
    for l in range(nkey):
        x = a[i, l]
        y = b[j, l]
        gt = gt | (eq & k_greater(x, y))
        eq = eq & k_equal(x, y)
    return gt


@njit(inline="always")
def k_compare_exchange(data, i, j, nkey, up, tag, log):
    """Order rows i < j ascending when ``up`` else descending."""
    emit_exchange(log, tag, i, j)
    # descending swaps whenever not greater; swapping equal rows is a no-op
    c = k_rows_greater(data, i, data, j, nkey) ^ (U64(up) - U64(1))
    for l in range(data.shape[1]):
        x = data[i, l]
        y = data[j, l]
        t = (x ^ y) & c
        data[i, l] = x ^ t
        data[j, l] = y ^ t


@njit(cache=True)
def k_bitonic_sort_flat(data, ascending, tag, log):
    """Bitonic sort of a 1-D key array of power-of-two length."""
    n = data.shape[0]
    count = 0
    size = 2
    while size <= n:
        stride = size // 2
        while stride > 0:
            for lo in range(0, n, 2 * stride):
                flip = U64(((lo & size) == 0) == ascending) - U64(1)
                a = data[lo:lo + stride]
                b = data[lo + stride:lo + 2 * stride]
                for i in range(stride):
                    emit_exchange(log, tag, lo + i, lo + i + stride)
                    x = a[i]
                    y = b[i]
                    t = (x ^ y) & (k_greater(x, y) ^ flip)
                    a[i] = x ^ t
                    b[i] = y ^ t
                count += stride
            stride //= 2
        size *= 2
    return count


@njit(cache=True)
def k_bitonic_sort(data, nkey, ascending, tag, log):
    n = data.shape[0]
    count = 0
    size = 2
    while size <= n:
        stride = size // 2
        while stride > 0:
            for lo in range(0, n, 2 * stride):
                up = ((lo & size) == 0) == ascending
                for i in range(lo, lo + stride):
                    k_compare_exchange(data, i, i + stride, nkey, up, tag, log)
                count += stride
            stride //= 2
        size *= 2
    return count


@njit(cache=True)
def k_bitonic_merge(data, nkey, ascending, tag, log):
    """Sort a bitonic sequence of power-of-two length."""
    n = data.shape[0]
    count = 0
    stride = n // 2
    while stride > 0:
        for lo in range(0, n, 2 * stride):
            for i in range(lo, lo + stride):
                k_compare_exchange(data, i, i + stride, nkey, ascending, tag, log)
            count += stride
        stride //= 2
    return count


@njit(cache=True)
def _copy_rows(src, stag, dst, dtag, n, log):
    for i in range(n):
        emit_read(log, stag, i)
        emit_write(log, dtag, i)
        for l in range(src.shape[1]):
            dst[i, l] = src[i, l]


def bitonic_sort(buf: InstrumentedBuffer, ascending: bool = True) -> int:
    """Sort the rows of ``buf`` in place by key; returns the comparator count.

    ``buf.data`` is (n,) or (n, lanes) uint64; lane 0 is the key and rows
    compare lexicographically over all lanes.  Lengths that are not a power
    of two are padded with sentinel rows (all ones when ascending, all
    zeros when descending) in a separate working buffer; the padding sorts
    to the end and is dropped by position.
    """
    data = buf.data
    flat = data.ndim == 1
    n = data.shape[0]
    lanes = 1 if flat else data.shape[1]
    m = next_pow2(n)
    ncmp = comparator_count(m)

    def run(d, tag, log):
        if flat:
            return k_bitonic_sort_flat(d, ascending, tag, log)
        return k_bitonic_sort(d, lanes, ascending, tag, log)

    if m == n:
        log, rec = open_log(4 * ncmp, buf)
        count = run(data, buf.tag, log)
        close_log(log, rec)
        return count
    pad = KEY_MAX if ascending else 0
    work = InstrumentedBuffer(np.full((m,) + data.shape[1:], pad, np.uint64),
                              elem_width=buf.elem_width, recorder=buf.recorder)
    log, rec = open_log(4 * n + 4 * ncmp, buf, work)
    rows, wrows = data.reshape(n, lanes), work.data.reshape(m, lanes)
    _copy_rows(rows, buf.tag, wrows, work.tag, n, log)
    count = run(work.data, work.tag, log)
    _copy_rows(wrows, work.tag, rows, buf.tag, n, log)
    close_log(log, rec)
    return count


def sort_records(keys, payloads=None, ascending: bool = True) -> np.ndarray:
    """Convenience wrapper: oblivious sort of keys (and payloads) into a new array."""
    keys = np.asarray(keys, dtype=np.uint64)
    data = keys.copy() if payloads is None else np.stack(
        [keys, np.asarray(payloads, dtype=np.uint64)], axis=1)
    bitonic_sort(InstrumentedBuffer(data), ascending)
    return data


def unprotected_sort(data: np.ndarray, ascending: bool = True) -> np.ndarray:
    """Plain comparison sort, the twin used for benchmarking."""
    if data.ndim == 1:
        out = np.sort(data)
    else:
        out = data[np.lexsort(data.T[::-1])]
    return out if ascending else out[::-1]


# -- edit distance ----------------------------------------------------------

@njit(cache=True)
def _edit_distance(a, b, rows, nrows, ta, tb, trow, log):
    la = a.shape[0]
    lb = b.shape[0]
    w = lb + 1
    one = U64(1)
    for j in range(w):
        emit_write(log, trow, j)
        rows[j] = U64(j)
    for i in range(1, la + 1):
        prev = ((i - 1) % nrows) * w
        cur = (i % nrows) * w
        emit_write(log, trow, cur)
        rows[cur] = U64(i)
        for j in range(1, w):
            emit_read(log, ta, i - 1)
            ca = U64(a[i - 1])
            emit_read(log, tb, j - 1)
            cb = U64(b[j - 1])
            emit_read(log, trow, prev + j - 1)
            diag = rows[prev + j - 1]
            emit_read(log, trow, prev + j)
            up = rows[prev + j]
            emit_read(log, trow, cur + j - 1)
            left = rows[cur + j - 1]
            sub = diag + k_select(k_equal(ca, cb), U64(0), one)
            best = k_min(k_min(up + one, left + one), sub)
            emit_write(log, trow, cur + j)
            rows[cur + j] = best
    last = (la % nrows) * w + lb
    emit_read(log, trow, last)
    return rows[last]


def _as_bytes_array(s) -> np.ndarray:
    if isinstance(s, str):
        s = s.encode()
    return np.frombuffer(bytes(s), dtype=np.uint8).copy()


def edit_distance_events(len1: int, len2: int) -> int:
    return (len2 + 1) + len1 * (1 + 6 * len2) + 1


def o_edit_distance(s1, s2, full_matrix: bool = False):
    """Levenshtein distance by a full-shape DP; only the lengths are public.

    Uses two rolling rows by default.  With ``full_matrix`` the whole
    (len1+1) x (len2+1) table is kept and returned alongside the distance.
    """
    a = InstrumentedBuffer(_as_bytes_array(s1), elem_width=1)
    b = InstrumentedBuffer(_as_bytes_array(s2), elem_width=1)
    la, lb = len(a), len(b)
    nrows = la + 1 if full_matrix else 2
    rows = InstrumentedBuffer(np.zeros(nrows * (lb + 1), np.uint64))
    log, rec = open_log(edit_distance_events(la, lb), a, b, rows)
    d = _edit_distance(a.data, b.data, rows.data, nrows, a.tag, b.tag, rows.tag, log)
    close_log(log, rec)
    if full_matrix:
        return int(d), rows.data.reshape(nrows, lb + 1).copy()
    return int(d)


@njit(cache=True)
def _edit_distance_plain(a, b):
    la = a.shape[0]
    lb = b.shape[0]
    prev = np.arange(lb + 1)
    cur = np.empty(lb + 1, np.int64)
    for i in range(1, la + 1):
        cur[0] = i
        for j in range(1, lb + 1):
            if a[i - 1] == b[j - 1]:
                best = prev[j - 1]
            else:
                best = prev[j - 1] + 1
            if prev[j] + 1 < best:
                best = prev[j] + 1
            if cur[j - 1] + 1 < best:
                best = cur[j - 1] + 1
            cur[j] = best
        prev, cur = cur, prev
    return prev[lb]


def edit_distance(s1, s2) -> int:
    """Branching DP twin."""
    return int(_edit_distance_plain(_as_bytes_array(s1), _as_bytes_array(s2)))


# -- Floyd-Warshall ---------------------------------------------------------

def dist_matrix(n: int, edges=()) -> np.ndarray:
    """n x n distance matrix: 0 on the diagonal, INF elsewhere, then ``(u, v, w)`` edges."""
    m = np.full((n, n), INF, dtype=np.uint64)
    np.fill_diagonal(m, 0)
    for u, v, w in edges:
        if u != v and w < m[u, v]:
            m[u, v] = w
    return m


@njit(inline="always")
def k_sat_add(a, b):
    # both operands <= INF so the sum cannot wrap
    return k_min(a + b, U64(INF))


@njit(cache=True)
def _floyd_warshall(m, tag, log):
    n = m.shape[0]
    for k in range(n):
        for i in range(n):
            for j in range(n):
                emit_read(log, tag, i * n + k)
                ik = m[i, k]
                emit_read(log, tag, k * n + j)
                kj = m[k, j]
                emit_read(log, tag, i * n + j)
                ij = m[i, j]
                emit_write(log, tag, i * n + j)
                m[i, j] = k_min(ij, k_sat_add(ik, kj))


def o_floyd_warshall(m: np.ndarray) -> np.ndarray:
    """All-pairs shortest paths; every cell is rewritten on every iteration."""
    n = m.shape[0]
    buf = InstrumentedBuffer(np.array(m, dtype=np.uint64).reshape(n * n), elem_width=8)
    log, rec = open_log(4 * n ** 3, buf)
    _floyd_warshall(buf.data.reshape(n, n), buf.tag, log)
    close_log(log, rec)
    return buf.data.reshape(n, n)


@njit(cache=True)
def _floyd_warshall_plain(m):
    n = m.shape[0]
    inf = U64(INF)
    for k in range(n):
        for i in range(n):
            ik = m[i, k]
            if ik == inf:
                continue
            for j in range(n):
                kj = m[k, j]
                if kj != inf and ik + kj < m[i, j]:
                    m[i, j] = ik + kj


def floyd_warshall(m: np.ndarray) -> np.ndarray:
    """Branching twin."""
    out = np.array(m, dtype=np.uint64)
    _floyd_warshall_plain(out)
    return out
