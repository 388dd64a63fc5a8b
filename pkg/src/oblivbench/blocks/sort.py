"""Block-level oblivious sort and its unprotected external-sort twin."""

from __future__ import annotations

import numpy as np
from numba import njit

from ..oalg import comparator_count, k_bitonic_merge, k_bitonic_sort, next_pow2
from ..trace import InstrumentedBuffer, close_log, emit_read, emit_write, open_log
from .store import BLOCK_BYTES, KV_PER_BLOCK, BlockStore, k_decode_kv, k_encode_kv

U64 = np.uint64
R = KV_PER_BLOCK
WORK = next_pow2(2 * R)  # 128 rows for a merge of two blocks
SORT_WORK = next_pow2(R)  # 64 rows for an in-block sort

# compare-exchanges inside one merge_split / one in-block sort
MERGE_CMP = (WORK // 2) * (WORK.bit_length() - 1)
PRESORT_CMP = comparator_count(SORT_WORK)


@njit(inline="always")
def k_merge_split(a, b, work, ascending, wtag, log):
    """a, b: (63, 2) ascending runs.  Leaves low/high halves in a/b.

    The 128-row work area holds a, two sentinels and b reversed, which is
    bitonic; one bitonic merge sorts it.  With ``ascending`` false the
    high half goes to ``a``.
    """
    ones = ~U64(0)
    for r in range(R):
        work[r, 0] = a[r, 0]
        work[r, 1] = a[r, 1]
        work[WORK - 1 - r, 0] = b[r, 0]
        work[WORK - 1 - r, 1] = b[r, 1]
    for r in range(R, WORK - R):
        work[r, 0] = ones
        work[r, 1] = ones
    cnt = k_bitonic_merge(work, 2, True, wtag, log)
    lo = 0 if ascending else R
    hi = R if ascending else 0
    for r in range(R):
        a[r, 0] = work[lo + r, 0]
        a[r, 1] = work[lo + r, 1]
        b[r, 0] = work[hi + r, 0]
        b[r, 1] = work[hi + r, 1]
    return cnt


@njit(inline="always")
def k_sort_block(recs, work, wtag, log):
    ones = ~U64(0)
    for r in range(R):
        work[r, 0] = recs[r, 0]
        work[r, 1] = recs[r, 1]
    for r in range(R, SORT_WORK):
        work[r, 0] = ones
        work[r, 1] = ones
    k_bitonic_sort(work, 2, True, wtag, log)
    for r in range(R):
        recs[r, 0] = work[r, 0]
        recs[r, 1] = work[r, 1]


@njit(cache=True)
def _merge_split_blocks(ablk, bblk, ascending, wtag, log):
    a = np.empty((R, 2), np.uint64)
    b = np.empty((R, 2), np.uint64)
    work = np.empty((WORK, 2), np.uint64)
    k_decode_kv(ablk, a)
    k_decode_kv(bblk, b)
    k_merge_split(a, b, work, ascending, wtag, log)
    k_encode_kv(a, R, ablk)
    k_encode_kv(b, R, bblk)


def merge_split(a, b, ascending: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Redistribute two internally sorted KV blocks into a low and a high block.

    Returns new blocks ``(low, high)`` when ascending, ``(high, low)``
    otherwise; both stay internally ascending.
    """
    ablk = np.array(a, dtype=np.uint8).reshape(BLOCK_BYTES)
    bblk = np.array(b, dtype=np.uint8).reshape(BLOCK_BYTES)
    work = InstrumentedBuffer(np.zeros((WORK, 2), np.uint64))
    log, rec = open_log(4 * MERGE_CMP, work)
    _merge_split_blocks(ablk, bblk, ascending, work.tag, log)
    close_log(log, rec)
    return ablk, bblk


def sort_block(block) -> np.ndarray:
    """Obliviously sort the records inside one KV block."""
    blk = np.array(block, dtype=np.uint8).reshape(BLOCK_BYTES)
    _presort_one(blk)
    return blk


@njit(cache=True)
def _presort_one(blk):
    recs = np.empty((R, 2), np.uint64)
    work = np.empty((SORT_WORK, 2), np.uint64)
    k_decode_kv(blk, recs)
    k_sort_block(recs, work, -1, np.zeros(1, np.int64))
    k_encode_kv(recs, R, blk)


@njit(cache=True)
def _block_bitonic(raw, stag, presort, ascending, wtag, log):
    m = raw.shape[0]
    a = np.empty((R, 2), np.uint64)
    b = np.empty((R, 2), np.uint64)
    work = np.empty((WORK, 2), np.uint64)
    if presort:
        for i in range(m):
            emit_read(log, stag, i)
            k_decode_kv(raw[i], a)
            k_sort_block(a, work[:SORT_WORK], wtag, log)
            k_encode_kv(a, R, raw[i])
            emit_write(log, stag, i)
    count = 0
    size = 2
    while size <= m:
        stride = size // 2
        while stride > 0:
            for i in range(m):
                j = i ^ stride
                if j > i:
                    up = ((i & size) == 0) == ascending
                    emit_read(log, stag, i)
                    emit_read(log, stag, j)
                    k_decode_kv(raw[i], a)
                    k_decode_kv(raw[j], b)
                    k_merge_split(a, b, work, up, wtag, log)
                    k_encode_kv(a, R, raw[i])
                    k_encode_kv(b, R, raw[j])
                    emit_write(log, stag, i)
                    emit_write(log, stag, j)
                    count += 1
            stride //= 2
        size *= 2
    return count


@njit(cache=True)
def _copy_blocks(src, stag, dst, dtag, n, log):
    for i in range(n):
        emit_read(log, stag, i)
        emit_write(log, dtag, i)
        for t in range(src.shape[1]):
            dst[i, t] = src[i, t]


def block_sort_events(m: int, presort: bool, copy_n: int = 0) -> int:
    per_merge = 4 + 4 * MERGE_CMP
    per_presort = 2 + 4 * PRESORT_CMP
    return comparator_count(m) * per_merge + (m * per_presort if presort else 0) + 4 * copy_n


def block_bitonic_sort(store: BlockStore, n_blocks: int | None = None, presort: bool = True,
                       ascending: bool = True) -> int:
    """Sort the first ``n_blocks`` KV blocks globally; returns the merge_split count.

    Blocks must be internally sorted unless ``presort`` is set, in which
    case every block is first sorted in place.  A block count that is not
    a power of two is padded with all-sentinel blocks in a working store.
    """
    n = store.count if n_blocks is None else n_blocks
    if n < 0 or n > store.count:
        raise ValueError("n_blocks out of range")
    if n == 0:
        return 0
    m = next_pow2(n)
    work = InstrumentedBuffer(np.zeros((WORK, 2), np.uint64), recorder=store.buf.recorder)
    if m == n:
        log, rec = open_log(block_sort_events(m, presort), store.buf, work)
        count = _block_bitonic(store.raw[:n], store.buf.tag, presort, ascending, work.tag, log)
        close_log(log, rec)
        return count
    pad = _padded_store(store, m)
    log, rec = open_log(block_sort_events(m, presort, n), store.buf, pad.buf, work)
    _copy_blocks(store.raw, store.buf.tag, pad.raw, pad.buf.tag, n, log)
    count = _block_bitonic(pad.raw, pad.buf.tag, presort, ascending, work.tag, log)
    _copy_blocks(pad.raw, pad.buf.tag, store.raw, store.buf.tag, n, log)
    close_log(log, rec)
    return count


def _padded_store(store: BlockStore, m: int) -> BlockStore:
    return BlockStore.scratch(m, store.buf.recorder, fill=0xFF)


# -- unprotected twin ---------------------------------------------------------

@njit(inline="always")
def _lex_lt(x0, x1, y0, y1):
    return x0 < y0 or (x0 == y0 and x1 < y1)


@njit(cache=True)
def _external_sort(raw, tmp):
    """Run formation per block, then pairwise merge passes over block runs."""
    n = raw.shape[0]
    recs = np.empty((R, 2), np.uint64)
    for bi in range(n):
        k_decode_kv(raw[bi], recs)
        for i in range(1, R):
            x0 = recs[i, 0]
            x1 = recs[i, 1]
            j = i - 1
            while j >= 0 and _lex_lt(x0, x1, recs[j, 0], recs[j, 1]):
                recs[j + 1, 0] = recs[j, 0]
                recs[j + 1, 1] = recs[j, 1]
                j -= 1
            recs[j + 1, 0] = x0
            recs[j + 1, 1] = x1
        k_encode_kv(recs, R, raw[bi])
    src = raw
    dst = tmp
    a = np.empty((R, 2), np.uint64)
    b = np.empty((R, 2), np.uint64)
    o = np.empty((R, 2), np.uint64)
    run = 1
    passes = 0
    while run < n:
        for lo in range(0, n, 2 * run):
            mid = min(lo + run, n)
            hi = min(lo + 2 * run, n)
            ab, bb, ob = lo, mid, lo
            ai = R
            bi2 = R
            oi = 0
            total = (hi - lo) * R
            for _ in range(total):
                if ai == R and ab < mid:
                    k_decode_kv(src[ab], a)
                    ab += 1
                    ai = 0
                if bi2 == R and bb < hi:
                    k_decode_kv(src[bb], b)
                    bb += 1
                    bi2 = 0
                take_a = bi2 == R or (ai < R and not _lex_lt(b[bi2, 0], b[bi2, 1], a[ai, 0], a[ai, 1]))
                if take_a:
                    o[oi, 0] = a[ai, 0]
                    o[oi, 1] = a[ai, 1]
                    ai += 1
                else:
                    o[oi, 0] = b[bi2, 0]
                    o[oi, 1] = b[bi2, 1]
                    bi2 += 1
                oi += 1
                if oi == R:
                    k_encode_kv(o, R, dst[ob])
                    ob += 1
                    oi = 0
        src, dst = dst, src
        run *= 2
        passes += 1
    return passes


def external_sort(store: BlockStore, n_blocks: int | None = None) -> None:
    """Plain external merge sort over the block store (not oblivious)."""
    n = store.count if n_blocks is None else n_blocks
    if n == 0:
        return
    raw = store.raw[:n]
    tmp = np.empty_like(raw)
    passes = _external_sort(raw, tmp)
    if passes % 2:
        raw[:] = tmp
