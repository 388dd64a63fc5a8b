"""Minimal oblivious MapReduce runner.

Pipeline: map every input block to a fixed number of key/value records,
bitonic-sort the intermediate store, reduce in one linear sweep that
emits a record at each group boundary and a sentinel everywhere else,
then sort again so the sentinels sink to the end.  Apart from the final
record count, the access pattern depends only on the number of input
blocks and the declared emission count.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from numba import njit

from ..blocks.sort import block_bitonic_sort
from ..blocks.store import (KV_PER_BLOCK, SENTINEL, BlockStore, KVRecord, decode_kv_block,
                            is_sentinel_lanes, k_decode_kv, k_encode_kv)
from ..oprim import k_equal, k_greater, k_select
from ..trace import close_log, emit_read, emit_write, open_log

U64 = np.uint64
REDUCERS = {"sum": 0, "max": 1, "min": 2}


class MRConfigError(ValueError):
    pass


@dataclass
class MRJob:
    """A map/reduce job over block stores.

    ``mapper`` receives one input block (1024 uint8) and returns exactly
    ``emit_per_block`` records as (n, 2) uint64 key/value lanes, padding
    with sentinel rows.  ``reducer`` names an associative combine of the
    u32 values sharing a key.
    """

    mapper: Callable[[np.ndarray], np.ndarray]
    emit_per_block: int
    input: BlockStore
    reducer: str = "sum"
    max_intermediate_blocks: int | None = None


@dataclass
class MRResult:
    output: BlockStore
    record_count: int
    comparators: int
    intermediate_blocks: int


@njit(cache=True)
def _pack(lanes, raw, tag, log):
    """Write rows of ``lanes`` into consecutive blocks, sentinel-padding the tail."""
    r = KV_PER_BLOCK
    buf = np.empty((r, 2), np.uint64)
    n = lanes.shape[0]
    for b in range(raw.shape[0]):
        for s in range(r):
            i = b * r + s
            if i < n:  # public position
                buf[s, 0] = lanes[i, 0]
                buf[s, 1] = lanes[i, 1]
            else:
                buf[s, 0] = ~U64(0)
                buf[s, 1] = ~U64(0)
        k_encode_kv(buf, r, raw[b])
        emit_write(log, tag, b)


@njit(inline="always")
def _combine(op, a, b):
    if op == 0:
        return a + b
    gt = k_greater(a, b)
    if op == 1:
        return k_select(gt, a, b)
    return k_select(gt, b, a)


@njit(cache=True)
def _reduce_sweep(src, stag, dst, dtag, op, log):
    """One pass over sorted records; see module docstring."""
    r = KV_PER_BLOCK
    ones = ~U64(0)
    low32 = U64(0xFFFFFFFF)
    inb = np.empty((r, 2), np.uint64)
    outb = np.empty((r, 2), np.uint64)
    cur0 = ones
    cur1 = low32  # upper half of lane 1; (cur0, cur1) starts as the sentinel key
    acc = U64(0)
    nblocks = src.shape[0]
    pos = 0
    for b in range(nblocks):
        emit_read(log, stag, b)
        k_decode_kv(src[b], inb)
        for s in range(r):
            k0 = inb[s, 0]
            k1 = inb[s, 1] >> U64(32)
            v = inb[s, 1] & low32
            same = k_equal(k0, cur0) & k_equal(k1, cur1)
            cur_sent = k_equal(cur0, ones) & k_equal(cur1, low32)
            # group ending at the previous position is emitted there
            emit = ~same & ~cur_sent
            o0 = k_select(emit, cur0, ones)
            o1 = k_select(emit, (cur1 << U64(32)) | (acc & low32), ones)
            if pos > 0:  # public: first position has no predecessor
                q = pos - 1
                outb[q % r, 0] = o0
                outb[q % r, 1] = o1
                if q % r == r - 1:
                    k_encode_kv(outb, r, dst[q // r])
                    emit_write(log, dtag, q // r)
            acc = k_select(same, _combine(op, acc, v), v)
            cur0 = k0
            cur1 = k1
            pos += 1
    cur_sent = k_equal(cur0, ones) & k_equal(cur1, low32)
    q = pos - 1
    outb[q % r, 0] = k_select(cur_sent, ones, cur0)
    outb[q % r, 1] = k_select(cur_sent, ones, (cur1 << U64(32)) | (acc & low32))
    k_encode_kv(outb, r, dst[q // r])
    emit_write(log, dtag, q // r)


def map_phase(store: BlockStore, mapper, emit_per_block: int, out: BlockStore) -> None:
    """Run ``mapper`` on every block and pack the emissions into ``out``."""
    lanes = np.empty((store.count * emit_per_block, 2), np.uint64)
    for b in range(store.count):
        em = mapper(store.raw[b])
        if em.shape != (emit_per_block, 2):
            raise MRConfigError(f"mapper emitted {em.shape[0]} records, declared {emit_per_block}")
        lanes[b * emit_per_block:(b + 1) * emit_per_block] = em
    store.buf.touch(np.arange(store.count))
    log, rec = open_log(out.count, out.buf)
    _pack(lanes, out.raw, out.buf.tag, log)
    close_log(log, rec)


def reduce_phase(inter: BlockStore, out: BlockStore, reducer: str = "sum") -> None:
    if reducer not in REDUCERS:
        raise MRConfigError(f"unknown reducer {reducer!r}; choose from {sorted(REDUCERS)}")
    log, rec = open_log(2 * inter.count, inter.buf, out.buf)
    _reduce_sweep(inter.raw, inter.buf.tag, out.raw, out.buf.tag, REDUCERS[reducer], log)
    close_log(log, rec)


def finalize(out: BlockStore) -> tuple[BlockStore, int]:
    """Published record count and a trimmed copy holding just the real records."""
    counts = out.raw[:, 0].astype(np.int64) | (out.raw[:, 1].astype(np.int64) << 8)
    total = int(counts.sum())
    nb = -(-total // KV_PER_BLOCK)
    return BlockStore(np.array(out.raw[:nb]), recorder=out.buf.recorder), total


def output_records(store: BlockStore) -> list[KVRecord]:
    """Real records of an output store, in order."""
    recs = []
    for b in range(store.count):
        for w0, w1 in decode_kv_block(store.raw[b]).tolist():
            if not is_sentinel_lanes(w0, w1):
                recs.append(KVRecord.from_lanes(w0, w1))
    return recs


def kv_record_mapper(fn: Callable[[KVRecord], list[KVRecord]], emit_per_record: int):
    """Block mapper built from a per-record function over KV input blocks.

    Every input slot yields exactly ``emit_per_record`` rows: the records
    returned by ``fn`` (not called for sentinel slots) padded with sentinels.
    Returns ``(mapper, emit_per_block)`` ready for :class:`MRJob`.
    """
    def mapper(block: np.ndarray) -> np.ndarray:
        out = np.full((KV_PER_BLOCK * emit_per_record, 2), SENTINEL, np.uint64)
        for s, (w0, w1) in enumerate(decode_kv_block(block).tolist()):
            if is_sentinel_lanes(w0, w1):
                continue
            emitted = fn(KVRecord.from_lanes(w0, w1))
            if len(emitted) > emit_per_record:
                raise MRConfigError(f"mapper emitted {len(emitted)} records for one input, "
                                    f"declared {emit_per_record}")
            for t, r in enumerate(emitted):
                out[s * emit_per_record + t] = r.lanes()
        return out
    return mapper, KV_PER_BLOCK * emit_per_record


def intermediate_blocks(n_input: int, emit_per_block: int) -> int:
    return max(1, -(-n_input * emit_per_block // KV_PER_BLOCK))


def mr_run(job: MRJob) -> MRResult:
    nb = intermediate_blocks(job.input.count, job.emit_per_block)
    if job.max_intermediate_blocks is not None and nb > job.max_intermediate_blocks:
        raise MRConfigError(f"intermediate store needs {nb} blocks, "
                            f"limit is {job.max_intermediate_blocks}")
    rec = job.input.buf.recorder
    inter = BlockStore.scratch(nb, rec)
    map_phase(job.input, job.mapper, job.emit_per_block, inter)
    comparators = block_bitonic_sort(inter, presort=True)
    out = BlockStore.scratch(nb, rec)
    reduce_phase(inter, out, job.reducer)
    comparators += block_bitonic_sort(out, presort=True)
    trimmed, total = finalize(out)
    return MRResult(trimmed, total, comparators, nb)

