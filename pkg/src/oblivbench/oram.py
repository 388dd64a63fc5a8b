"""Non-recursive Path ORAM.

The tree is a heap of ``2*leaves - 1`` buckets (root 0, children 2i+1 and
2i+2), each holding ``bucket_size`` slots.  A slot is ``(block_id, leaf)``
metadata plus a payload of ``block_bytes // 8`` words.  Dummy slots carry
id ``2**64 - 1`` and a zero payload.

Per access the trace is, in order: every slot of the root-to-leaf path
(root first), every stash slot read, every stash slot written, every path
slot written back (root first).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from . import rng
from .oprim import k_equal, k_select
from .trace import InstrumentedBuffer, close_log, emit_read, emit_write, open_log

U64 = np.uint64
DUMMY = (1 << 64) - 1


class StashOverflow(RuntimeError):
    pass


class OramConfigError(ValueError):
    pass


class Op(enum.Enum):
    Read = 0
    Write = 1


@dataclass(frozen=True)
class OramConfig:
    capacity: int
    bucket_size: int = 4
    block_bytes: int = 8
    stash_capacity: int = 128
    rng_seed: int = 0x5EED

    @property
    def leaves(self) -> int:
        return 1 << max(self.capacity - 1, 1).bit_length()

    @property
    def levels(self) -> int:
        return self.leaves.bit_length()  # log2(leaves) + 1

    @property
    def buckets(self) -> int:
        return 2 * self.leaves - 1

    @property
    def words(self) -> int:
        return self.block_bytes // 8

    def validate(self) -> None:
        if self.capacity < 1 or self.bucket_size < 1:
            raise OramConfigError("capacity and bucket_size must be >= 1")
        if self.block_bytes <= 0 or self.block_bytes % 8:
            raise OramConfigError("block_bytes must be a positive multiple of 8")
        if self.stash_capacity < self.bucket_size:
            raise OramConfigError("stash_capacity must be at least bucket_size")


@njit(cache=True)
def _oram_access(tmeta, tdata, smeta, sdata, posmap, state, levels, z, leaves,
                 is_write, bid, new_data, out, ttag, stag, log):
    npath = levels * z
    cap = smeta.shape[0]
    nwords = tdata.shape[1]
    total = npath + cap + 1
    dummy = ~U64(0)
    lbits = levels - 1

    leaf = posmap[bid]
    new_leaf = rng.next_bits(state, lbits)
    posmap[bid] = new_leaf

    w_id = np.empty(total, np.uint64)
    w_leaf = np.empty(total, np.uint64)
    w_data = np.empty((total, nwords), np.uint64)
    path_slots = np.empty(npath, np.int64)

    n = 0
    for l in range(levels):
        bucket = ((leaves + leaf) >> U64(lbits - l)) - U64(1)
        for s in range(z):
            slot = np.int64(bucket) * z + s
            path_slots[n] = slot
            emit_read(log, ttag, slot)
            w_id[n] = tmeta[slot, 0]
            w_leaf[n] = tmeta[slot, 1]
            for k in range(nwords):
                w_data[n, k] = tdata[slot, k]
            n += 1
    for s in range(cap):
        emit_read(log, stag, s)
        w_id[n] = smeta[s, 0]
        w_leaf[n] = smeta[s, 1]
        for k in range(nwords):
            w_data[n, k] = sdata[s, k]
        n += 1

    # extract the requested block; every entry is visited
    for k in range(nwords):
        out[k] = 0
    for e in range(n):
        m = k_equal(w_id[e], bid)
        for k in range(nwords):
            out[k] = k_select(m, w_data[e, k], out[k])
        w_id[e] = k_select(m, dummy, w_id[e])
    if is_write:
        for k in range(nwords):
            out[k] = new_data[k]
    w_id[n] = bid
    w_leaf[n] = new_leaf
    for k in range(nwords):
        w_data[n, k] = out[k]
    n += 1

    # greedy eviction: deepest legal level first
    depth = np.empty(n, np.int64)
    counts = np.zeros(levels + 1, np.int64)
    for e in range(n):
        if w_id[e] == dummy:
            d = -1
        else:
            x = w_leaf[e] ^ leaf
            nb = 0
            while x:
                x >>= U64(1)
                nb += 1
            d = lbits - nb
        depth[e] = d
        counts[d + 1] += 1
    order = np.empty(n, np.int64)
    start = np.zeros(levels + 1, np.int64)
    acc = 0
    for d in range(levels, -1, -1):  # bucket index d+1 for depth d, descending
        start[d] = acc
        acc += counts[d]
    fill = start.copy()
    for e in range(n):
        b = depth[e] + 1
        order[fill[b]] = e
        fill[b] += 1
    nreal = n - counts[0]

    placed = np.full(npath, -1, np.int64)
    p = 0
    for l in range(levels - 1, -1, -1):
        filled = 0
        while filled < z and p < nreal and depth[order[p]] >= l:
            placed[l * z + filled] = order[p]
            filled += 1
            p += 1
    left = nreal - p
    if left > cap:
        return -1

    for s in range(cap):
        emit_write(log, stag, s)
        if s < left:
            e = order[p + s]
            smeta[s, 0] = w_id[e]
            smeta[s, 1] = w_leaf[e]
            for k in range(nwords):
                sdata[s, k] = w_data[e, k]
        else:
            smeta[s, 0] = dummy
            smeta[s, 1] = 0
            for k in range(nwords):
                sdata[s, k] = 0
    for i in range(npath):
        slot = path_slots[i]
        emit_write(log, ttag, slot)
        e = placed[i]
        if e >= 0:
            tmeta[slot, 0] = w_id[e]
            tmeta[slot, 1] = w_leaf[e]
            for k in range(nwords):
                tdata[slot, k] = w_data[e, k]
        else:
            tmeta[slot, 0] = dummy
            tmeta[slot, 1] = 0
            for k in range(nwords):
                tdata[slot, k] = 0
    return left


@dataclass
class OramState:
    cfg: OramConfig
    tree_meta: np.ndarray
    tree_data: np.ndarray
    stash_meta: np.ndarray
    stash_data: np.ndarray
    position_map: np.ndarray
    rng_state: np.ndarray
    tree: InstrumentedBuffer = field(repr=False)
    stash: InstrumentedBuffer = field(repr=False)
    stash_occupancy: int = 0
    max_stash: int = 0
    accesses: int = 0
    last_leaf: int = -1

    def __post_init__(self):
        # hot-path copies of config values
        self.capacity = self.cfg.capacity
        self.words = self.cfg.words
        self.levels = self.cfg.levels
        self.bucket_size = self.cfg.bucket_size
        self.leaves = U64(self.cfg.leaves)
        self.events_per_access = sum(oram_trace_shape(self.cfg))
        self._zeros = np.zeros(self.words, np.uint64)

    def real_ids(self) -> np.ndarray:
        """All real block ids currently held in tree and stash (with repeats)."""
        ids = np.concatenate([self.tree_meta[:, 0], self.stash_meta[:, 0]])
        return ids[ids != U64(DUMMY)]


def oram_init(cfg: OramConfig) -> OramState:
    cfg.validate()
    slots = cfg.buckets * cfg.bucket_size
    tree_meta = np.zeros((slots, 2), np.uint64)
    tree_meta[:, 0] = DUMMY
    stash_meta = np.zeros((cfg.stash_capacity, 2), np.uint64)
    stash_meta[:, 0] = DUMMY
    tree_data = np.zeros((slots, cfg.words), np.uint64)
    stash_data = np.zeros((cfg.stash_capacity, cfg.words), np.uint64)
    state = rng.new_state(cfg.rng_seed)
    posmap = rng.draw_bits(state, cfg.levels - 1, cfg.capacity)
    width = 16 + cfg.block_bytes
    return OramState(
        cfg, tree_meta, tree_data, stash_meta, stash_data, posmap, state,
        tree=InstrumentedBuffer(tree_meta, elem_width=width),
        stash=InstrumentedBuffer(stash_meta, elem_width=width),
    )


def oram_access(st: OramState, op: Op, bid: int, data=None) -> np.ndarray:
    """One Path ORAM access.

    Returns the block's payload: the stored value for a read (zeros if the
    block was never written), the newly installed value for a write.
    """
    if not 0 <= bid < st.capacity:
        raise IndexError(f"block id {bid} outside ORAM capacity {st.capacity}")
    is_write = op is Op.Write
    if is_write:
        if data is None:
            raise ValueError("write requires a payload")
        new = np.ascontiguousarray(data, dtype=np.uint64).reshape(-1)
        if new.shape[0] != st.words:
            raise ValueError(f"payload must be {st.words} words")
    else:
        new = st._zeros
    out = np.empty(st.words, np.uint64)
    st.last_leaf = int(st.position_map[bid])
    log, rec = open_log(st.events_per_access, st.tree, st.stash)
    left = _oram_access(st.tree_meta, st.tree_data, st.stash_meta, st.stash_data,
                        st.position_map, st.rng_state, st.levels, st.bucket_size,
                        st.leaves, is_write, U64(bid), new, out,
                        st.tree.tag, st.stash.tag, log)
    close_log(log, rec)
    if left < 0:
        raise StashOverflow(f"stash capacity {st.cfg.stash_capacity} exceeded")
    st.accesses += 1
    st.stash_occupancy = left
    if left > st.max_stash:
        st.max_stash = left
    return out


def oram_read(st: OramState, bid: int) -> np.ndarray:
    return oram_access(st, Op.Read, bid)


def oram_write(st: OramState, bid: int, data) -> None:
    oram_access(st, Op.Write, bid, data)


def oram_trace_shape(st: OramState | OramConfig) -> tuple[int, int]:
    """(reads, writes) per access, counting the full stash scan."""
    cfg = st.cfg if isinstance(st, OramState) else st
    per = cfg.levels * cfg.bucket_size + cfg.stash_capacity
    return per, per


def oram_load(st: OramState, payloads: np.ndarray) -> None:
    """Write ``payloads[i]`` to block ``i`` for every row."""
    for i in range(payloads.shape[0]):
        oram_access(st, Op.Write, i, payloads[i])
