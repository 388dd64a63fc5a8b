"""Oblivious random access to one block of a store."""

from __future__ import annotations

import enum

import numpy as np
from numba import njit

from ..oprim import k_equal, k_select
from ..oram import Op, OramConfig, OramState, oram_access, oram_init
from ..trace import close_log, emit_read, open_log
from .store import BLOCK_BYTES, BlockStore

U64 = np.uint64


class BlockImpl(enum.Enum):
    Unprotected = "Unprotected"
    Linear = "Linear"
    Oram = "Oram"


@njit(cache=True)
def _linear_block(words, bid, out, tag, log):
    for k in range(out.shape[0]):
        out[k] = 0
    for j in range(words.shape[0]):
        emit_read(log, tag, j)
        m = k_equal(U64(j), bid)
        for k in range(out.shape[0]):
            out[k] = k_select(m, words[j, k], out[k])


def linear_block_access(store: BlockStore, bid: int) -> np.ndarray:
    out = np.empty(BLOCK_BYTES // 8, np.uint64)
    log, rec = open_log(store.count, store.buf)
    _linear_block(store.words, U64(int(bid) & ((1 << 64) - 1)), out, store.buf.tag, log)
    close_log(log, rec)
    return out.view(np.uint8)


def build_block_oram(store: BlockStore, seed: int = 0x5EED, **cfg) -> OramState:
    """Path ORAM holding a copy of every block of ``store``."""
    st = oram_init(OramConfig(capacity=max(store.count, 1), block_bytes=BLOCK_BYTES,
                              rng_seed=seed, **cfg))
    words = store.words
    for i in range(store.count):
        oram_access(st, Op.Write, i, words[i])
    return st


def o_block_access(store: BlockStore, bid: int, impl: BlockImpl | str,
                   oram: OramState | None = None) -> np.ndarray:
    """Fetch block ``bid`` as 1024 bytes.

    Linear touches every block once; Oram performs one ORAM read (the ORAM
    is built from the store on first use unless given).  A secret id that
    is out of range yields an all-zero block.
    """
    impl = BlockImpl(impl)
    if impl is BlockImpl.Linear:
        return linear_block_access(store, bid)
    if impl is BlockImpl.Oram:
        if oram is None:
            oram = getattr(store, "_oram", None)
            if oram is None:
                oram = store._oram = build_block_oram(store)
        # out-of-range ids still cost one (dummy) access
        ok = 0 <= bid < oram.capacity
        data = oram_access(oram, Op.Read, bid if ok else 0)
        return (data if ok else np.zeros_like(data)).view(np.uint8)
    if not 0 <= bid < store.count:
        return np.zeros(BLOCK_BYTES, np.uint8)
    return store.raw[bid].copy()
