"""Lloyd's KMeans over 16.16 fixed-point points stored in 1 KiB blocks.

Point blocks carry up to 126 points (x, y as little-endian u32) after the
16-byte header, whose first two bytes give the point count.  Coordinates
are masked to 31 bits on load so that squared distances and per-block
sums stay well inside 64 bits.

Every implementation shares the same integer arithmetic and tie rule
(lowest centroid index wins), so their centroids agree bit for bit:

* Unprotected: branching argmin, direct indexed accumulators.
* ManualCMOV: oblivious argmin, then every accumulator slot is rewritten
  for every point.
* OramHash: per-block local map, then centroid records kept in ORAM-backed
  blocks behind an LRU buffer manager.  The hit/miss sequence of that
  cache depends on the data; see :func:`miss_sequence_report`.
* Framework: the MapReduce runner with a mapper emitting per-block partial
  sums and a summing reducer.
"""

from __future__ import annotations

import enum
import math
import struct
from collections import Counter
from dataclasses import dataclass

import numpy as np
from numba import njit

from ..blocks.buffer import BLOCK_WORDS, HEADER_WORDS, BufferManager
from ..blocks.store import (BLOCK_BYTES, HEADER_BYTES, POINTS_PER_BLOCK, BlockStore, point_block,
                            record_count)
from ..oprim import k_equal, k_greater, k_select
from ..oram import OramConfig, oram_init
from ..trace import InstrumentedBuffer, close_log, emit_read, emit_write, open_log
from .mapreduce import MRJob, mr_run, output_records

U64 = np.uint64
COORD_MASK = (1 << 31) - 1
FRAC_BITS = 16
DEFAULT_POINTS_PER_BLOCK = 85  # 4000 blocks -> 340k points
SUM_BITS = 38  # a per-block coordinate sum is below 126 * 2**31 < 2**38
CENTROID_RECORD = struct.Struct("<IQQI")
ORAM_RECORD_LANES = 4  # (index, sum_x, sum_y, count)


class KMImpl(enum.Enum):
    Unprotected = "Unprotected"
    ManualCMOV = "ManualCMOV"
    OramHash = "OramHash"
    Framework = "Framework"


@dataclass
class Centroid:
    index: int
    sum_x: int
    sum_y: int
    count: int
    mean_x: int
    mean_y: int

    @property
    def mean(self) -> tuple[float, float]:
        s = float(1 << FRAC_BITS)
        return self.mean_x / s, self.mean_y / s


@dataclass
class KMeansResult:
    centroids: list[Centroid]
    means: np.ndarray  # (k, 2) uint64
    aggregates: np.ndarray  # (k, 3) uint64 from the last iteration
    iterations: int
    cache_events: list | None = None


# -- kernels -------------------------------------------------------------------

@njit(inline="always")
def k_point(blk, s):
    base = HEADER_BYTES + 8 * s
    x = U64(0)
    y = U64(0)
    for t in range(4):
        x |= U64(blk[base + t]) << U64(8 * t)
        y |= U64(blk[base + 4 + t]) << U64(8 * t)
    return x & U64(COORD_MASK), y & U64(COORD_MASK)


@njit(inline="always")
def k_abs_diff(a, b):
    return k_select(k_greater(a, b), a - b, b - a)


@njit(inline="always")
def k_nearest(px, py, means, mtag, log):
    """Oblivious argmin of squared distance; every centroid read once."""
    best = ~U64(0)
    best_i = U64(0)
    for j in range(means.shape[0]):
        emit_read(log, mtag, j)
        dx = k_abs_diff(px, means[j, 0])
        dy = k_abs_diff(py, means[j, 1])
        d = dx * dx + dy * dy
        closer = k_greater(best, d)  # strict, so ties keep the lower index
        best = k_select(closer, d, best)
        best_i = k_select(closer, U64(j), best_i)
    return best_i


@njit(inline="always")
def k_accumulate_block(blk, means, mtag, acc, atag, log):
    """Assign each slot of one point block and add it into ``acc`` (k, 3).

    Slots past the block's point count contribute zero but are processed
    identically.
    """
    n = U64(blk[0]) | (U64(blk[1]) << U64(8))
    for s in range(POINTS_PER_BLOCK):
        px, py = k_point(blk, s)
        c = k_nearest(px, py, means, mtag, log)
        valid = k_greater(n, U64(s))
        for j in range(acc.shape[0]):
            m = k_equal(U64(j), c) & valid
            emit_read(log, atag, j)
            acc[j, 0] += px & m
            acc[j, 1] += py & m
            acc[j, 2] += U64(1) & m
            emit_write(log, atag, j)


@njit(cache=True)
def _cmov_aggregate(raw, stag, means, mtag, acc, atag, log):
    for j in range(acc.shape[0]):
        acc[j, 0] = 0
        acc[j, 1] = 0
        acc[j, 2] = 0
    for b in range(raw.shape[0]):
        emit_read(log, stag, b)
        k_accumulate_block(raw[b], means, mtag, acc, atag, log)


@njit(cache=True)
def _cmov_update(acc, atag, means, mtag, log):
    for j in range(acc.shape[0]):
        emit_read(log, atag, j)
        emit_read(log, mtag, j)
        cnt = acc[j, 2]
        empty = k_equal(cnt, U64(0))
        div = k_select(empty, U64(1), cnt)
        means[j, 0] = k_select(empty, means[j, 0], acc[j, 0] // div)
        means[j, 1] = k_select(empty, means[j, 1], acc[j, 1] // div)
        emit_write(log, mtag, j)


@njit(cache=True)
def _local_map(blk, means, local):
    for j in range(local.shape[0]):
        local[j, 0] = 0
        local[j, 1] = 0
        local[j, 2] = 0
    k_accumulate_block(blk, means, -1, local, -1, np.zeros(1, np.int64))


@njit(cache=True)
def _plain_aggregate(raw, means, acc):
    k = means.shape[0]
    for b in range(raw.shape[0]):
        blk = raw[b]
        n = min(int(blk[0]) | (int(blk[1]) << 8), POINTS_PER_BLOCK)
        for s in range(n):
            px, py = k_point(blk, s)
            best = 0
            bd = ~U64(0)
            for j in range(k):
                dx = px - means[j, 0] if px > means[j, 0] else means[j, 0] - px
                dy = py - means[j, 1] if py > means[j, 1] else means[j, 1] - py
                d = dx * dx + dy * dy
                if d < bd:
                    bd = d
                    best = j
            acc[best, 0] += px
            acc[best, 1] += py
            acc[best, 2] += U64(1)


@njit(cache=True)
def _frame_map(blk, means, chunk_bits, chunks, local, out):
    _local_map(blk, means, local)
    lo_mask = (U64(1) << U64(chunk_bits)) - U64(1)
    per = 2 * chunks + 1
    for j in range(means.shape[0]):
        for f in range(per):
            if f < 2 * chunks:
                src = local[j, f // chunks]
                v = (src >> U64((f % chunks) * chunk_bits)) & lo_mask
            else:
                v = local[j, 2]
            out[j * per + f, 0] = (U64(j) << U64(32)) | U64(f)
            out[j * per + f, 1] = v


# -- public helpers ------------------------------------------------------------

def find_nearest_centroid(p, means) -> int:
    """Index of the centroid nearest to point ``p`` (lowest index on ties)."""
    m = np.ascontiguousarray(np.asarray(means, dtype=np.uint64).reshape(-1, 2))
    if len(m) == 0:
        raise ValueError("need at least one centroid")
    return int(_nearest(U64(int(p[0]) & COORD_MASK), U64(int(p[1]) & COORD_MASK), m))


@njit(cache=True)
def _nearest(px, py, means):
    return k_nearest(px, py, means, -1, np.zeros(1, np.int64))


def update_means(agg: np.ndarray, prev: np.ndarray) -> np.ndarray:
    """sum // count per cluster; an empty cluster keeps its previous mean."""
    cnt = agg[:, 2]
    div = np.maximum(cnt, 1)
    new = np.empty_like(prev)
    new[:, 0] = np.where(cnt > 0, agg[:, 0] // div, prev[:, 0])
    new[:, 1] = np.where(cnt > 0, agg[:, 1] // div, prev[:, 1])
    return new


def store_points(store: BlockStore) -> np.ndarray:
    """All points as an (n, 2) uint64 array, coordinates masked to 31 bits."""
    parts = []
    for b in range(store.count):
        n = min(record_count(store.raw[b]), POINTS_PER_BLOCK)
        pts = store.raw[b, HEADER_BYTES:HEADER_BYTES + 8 * n].view(np.uint32).reshape(-1, 2)
        parts.append(pts.astype(np.uint64) & COORD_MASK)
    return np.concatenate(parts) if parts else np.zeros((0, 2), np.uint64)


def initial_means(store: BlockStore, k: int) -> np.ndarray:
    """The first ``k`` points in storage order (zeros if there are fewer)."""
    means = np.zeros((k, 2), np.uint64)
    got = 0
    for b in range(store.count):
        if got == k:
            break
        n = min(record_count(store.raw[b]), POINTS_PER_BLOCK)
        take = min(n, k - got)
        pts = store.raw[b, HEADER_BYTES:HEADER_BYTES + 8 * take].view(np.uint32).reshape(-1, 2)
        means[got:got + take] = pts.astype(np.uint64) & COORD_MASK
        got += take
    return means


def chunk_layout(n_blocks: int) -> tuple[int, int]:
    """(chunk_bits, chunks) so that summing one chunk over all blocks fits in u32."""
    chunk_bits = 32 - max(n_blocks, 1).bit_length()
    if chunk_bits < 8 or n_blocks * POINTS_PER_BLOCK >= 1 << 32:
        raise ValueError(f"{n_blocks} blocks is too many for 32-bit reducer values")
    return chunk_bits, -(-SUM_BITS // chunk_bits)


# -- aggregation per implementation --------------------------------------------

def aggregate_unprotected(store: BlockStore, means: np.ndarray) -> np.ndarray:
    acc = np.zeros((len(means), 3), np.uint64)
    _plain_aggregate(store.raw, means, acc)
    return acc


def aggregate_cmov(store: BlockStore, means: InstrumentedBuffer,
                   acc: InstrumentedBuffer) -> np.ndarray:
    k = len(means)
    log, rec = open_log(store.count * (1 + POINTS_PER_BLOCK * 3 * k), store.buf, means, acc)
    _cmov_aggregate(store.raw, store.buf.tag, means.data, means.tag, acc.data, acc.tag, log)
    close_log(log, rec)
    return acc.data


def aggregate_framework(store: BlockStore, means: np.ndarray) -> np.ndarray:
    k = len(means)
    chunk_bits, chunks = chunk_layout(store.count)
    per = 2 * chunks + 1
    local = np.zeros((k, 3), np.uint64)

    def mapper(blk):
        out = np.empty((k * per, 2), np.uint64)
        _frame_map(blk, means, chunk_bits, chunks, local, out)
        return out

    res = mr_run(MRJob(mapper, k * per, store, reducer="sum"))
    agg = np.zeros((k, 3), np.uint64)
    for r in output_records(res.output):
        j = int.from_bytes(r.key[:4], "big")
        f = int.from_bytes(r.key[4:8], "big")
        if f < 2 * chunks:
            agg[j, f // chunks] += U64(r.value << ((f % chunks) * chunk_bits))
        else:
            agg[j, 2] = r.value
    return agg


def oram_hash_capacity(k: int) -> int:
    per_block = (BLOCK_WORDS - HEADER_WORDS) // ORAM_RECORD_LANES
    return -(-k // per_block) + 1


def aggregate_oram_hash(store: BlockStore, means: np.ndarray, cache_blocks: int = 32,
                        seed: int = 0x5EED) -> tuple[np.ndarray, BufferManager]:
    """One aggregation pass with a hash map over ORAM-backed centroid blocks.

    Per input block a k-slot local map is filled obliviously; each non-empty
    entry is then merged into a centroid record held in ORAM-backed blocks,
    located through ``index`` (centroid -> (block id, slot)).
    """
    k = len(means)
    oram = oram_init(OramConfig(capacity=oram_hash_capacity(k), block_bytes=BLOCK_BYTES,
                                rng_seed=seed))
    bm = BufferManager(oram, m=cache_blocks, record_lanes=ORAM_RECORD_LANES)
    index: dict[int, tuple[int, int]] = {}
    local = np.zeros((k, 3), np.uint64)
    for b in range(store.count):
        _local_map(store.raw[b], means, local)
        for c in range(k):
            sx, sy, cnt = local[c]
            if cnt == 0:
                continue
            if c not in index:
                bid = bm.add_record_to_block([c, sx, sy, cnt])
                index[c] = (bid, bm.working.count - 1)
            else:
                bid, slot = index[c]
                rec = bm.get_block(bid).records[slot]
                rec[1] += sx
                rec[2] += sy
                rec[3] += cnt
    agg = np.zeros((k, 3), np.uint64)
    for blk in bm.drain():
        for c, sx, sy, cnt in blk.used():
            agg[int(c)] = (sx, sy, cnt)
    return agg, bm


# -- driver --------------------------------------------------------------------

def kmeans(store: BlockStore, k: int = 5, iters: int = 10,
           impl: KMImpl | str = KMImpl.Unprotected, init: np.ndarray | None = None,
           cache_blocks: int = 32, seed: int = 0x5EED) -> KMeansResult:
    """``iters`` Lloyd iterations (no convergence test) starting from ``init``.

    ``init`` defaults to the first ``k`` points of the store.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    if iters < 0:
        raise ValueError("iters must be non-negative")
    impl = KMImpl(impl)
    means = (initial_means(store, k) if init is None
             else np.array(init, dtype=np.uint64).reshape(k, 2))
    agg = np.zeros((k, 3), np.uint64)
    events: list | None = [] if impl is KMImpl.OramHash else None
    if impl is KMImpl.ManualCMOV:
        mbuf = InstrumentedBuffer(means, elem_width=16, recorder=store.buf.recorder)
        abuf = InstrumentedBuffer(agg, elem_width=24, recorder=store.buf.recorder)
    for it in range(iters):
        if impl is KMImpl.ManualCMOV:
            aggregate_cmov(store, mbuf, abuf)
            log, rec = open_log(3 * k, abuf, mbuf)
            _cmov_update(agg, abuf.tag, means, mbuf.tag, log)
            close_log(log, rec)
            continue
        if impl is KMImpl.Unprotected:
            agg = aggregate_unprotected(store, means)
        elif impl is KMImpl.Framework:
            agg = aggregate_framework(store, means)
        else:
            agg, bm = aggregate_oram_hash(store, means, cache_blocks, seed + it)
            events.append(bm.events)
        means = update_means(agg, means)
    cents = [Centroid(j, int(agg[j, 0]), int(agg[j, 1]), int(agg[j, 2]),
                      int(means[j, 0]), int(means[j, 1])) for j in range(k)]
    return KMeansResult(cents, means.copy(), agg.copy(), iters, events)


# -- leakage report for the ORAM-hash variant ---------------------------------

def _entropy(counter: Counter) -> float:
    total = sum(counter.values())
    return max(0.0, -sum(c / total * math.log2(c / total) for c in counter.values()))


def miss_sequence_report(n_blocks: int, k: int, samples: int, seed: int,
                         cache_blocks: int = 1, points_per_block: int = DEFAULT_POINTS_PER_BLOCK
                         ) -> dict:
    """Measure what the buffer manager's hit/miss sequence reveals.

    Runs one aggregation pass on ``samples`` random inputs of identical
    shape and reports how many distinct cache-event and miss sequences
    appear, with their empirical entropy in bits.  Any value above zero
    means the sequence depends on the data.
    """
    rs = np.random.default_rng(seed)
    ev_seqs: Counter = Counter()
    miss_seqs: Counter = Counter()
    lengths = []
    for _ in range(samples):
        st = gen_point_store(n_blocks, k=k, seed=int(rs.integers(1 << 62)),
                             points_per_block=points_per_block)
        _, bm = aggregate_oram_hash(st, initial_means(st, k), cache_blocks, seed)
        ev_seqs[tuple(bm.events)] += 1
        miss_seqs[tuple(bm.misses())] += 1
        lengths.append(len(bm.events))
    return {
        "samples": samples,
        "distinct_event_sequences": len(ev_seqs),
        "event_sequence_entropy_bits": _entropy(ev_seqs),
        "distinct_miss_sequences": len(miss_seqs),
        "miss_sequence_entropy_bits": _entropy(miss_seqs),
        "event_count_min": min(lengths) if lengths else 0,
        "event_count_max": max(lengths) if lengths else 0,
    }


# -- I/O and generation --------------------------------------------------------

def write_centroids(path, centroids: list[Centroid]) -> None:
    """k records of 24 bytes: index u32, mean_x u64, mean_y u64, count u32."""
    with open(path, "wb") as fh:
        for c in centroids:
            fh.write(CENTROID_RECORD.pack(c.index, c.mean_x, c.mean_y, c.count))


def read_centroids(path) -> list[tuple[int, int, int, int]]:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) % CENTROID_RECORD.size:
        raise ValueError(f"{path}: not a whole number of centroid records")
    return [CENTROID_RECORD.unpack_from(data, o) for o in range(0, len(data), CENTROID_RECORD.size)]


def points_to_store(xs, ys, points_per_block: int = DEFAULT_POINTS_PER_BLOCK,
                    path=None) -> BlockStore:
    xs = np.asarray(xs, np.uint32)
    ys = np.asarray(ys, np.uint32)
    if not 1 <= points_per_block <= POINTS_PER_BLOCK:
        raise ValueError(f"points_per_block must be in 1..{POINTS_PER_BLOCK}")
    blocks = [point_block(xs[i:i + points_per_block], ys[i:i + points_per_block])
              for i in range(0, len(xs), points_per_block)]
    return BlockStore.from_blocks(blocks, path)


def gen_points(n: int, k: int = 5, seed: int = 1, spread: float = 20.0,
               extent: float = 1000.0) -> tuple[np.ndarray, np.ndarray]:
    """``n`` points from ``k`` Gaussian blobs, as 16.16 fixed point."""
    rs = np.random.default_rng(seed)
    centers = rs.uniform(0.05 * extent, 0.95 * extent, (k, 2))
    lab = rs.integers(0, k, n)
    pts = centers[lab] + rs.normal(0.0, spread, (n, 2))
    fixed = np.clip(np.round(pts * (1 << FRAC_BITS)), 0, COORD_MASK).astype(np.uint32)
    return fixed[:, 0], fixed[:, 1]


def gen_point_store(n_blocks: int, k: int = 5, seed: int = 1,
                    points_per_block: int = DEFAULT_POINTS_PER_BLOCK, path=None) -> BlockStore:
    xs, ys = gen_points(n_blocks * points_per_block, k, seed)
    return points_to_store(xs, ys, points_per_block, path)
