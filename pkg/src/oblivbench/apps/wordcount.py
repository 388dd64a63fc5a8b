"""WordCount in unprotected, hand-wired oblivious and MapReduce forms.

Input blocks hold one word per 16-byte slot (63 slots after the 16-byte
header), left-aligned and padded with NUL or whitespace; an all-padding
slot is empty.  A word's key is its first 12 bytes, lowercased, with any
byte <= 0x20 treated as padding.
"""

from __future__ import annotations

import enum
from collections import Counter

import numpy as np
from numba import njit

from ..blocks.sort import block_bitonic_sort
from ..blocks.store import (BLOCK_BYTES, HEADER_BYTES, KEY_BYTES, KV_PER_BLOCK, BlockStore,
                            KVRecord, encode_kv_block, k_encode_kv)
from ..oprim import k_equal, k_greater, k_select
from ..trace import close_log, emit_read, emit_write, open_log
from .mapreduce import MRJob, MRResult, finalize, mr_run, output_records, reduce_phase

U64 = np.uint64
SLOT_BYTES = 16
SLOTS_PER_BLOCK = (BLOCK_BYTES - HEADER_BYTES) // SLOT_BYTES  # 63


class WCImpl(enum.Enum):
    Unprotected = "Unprotected"
    Manual = "Manual"
    Framework = "Framework"


def normalize(word: bytes) -> bytes:
    """The 12-byte key a slot maps to (all zeros for an empty slot)."""
    out = bytearray(KEY_BYTES)
    for i, c in enumerate(word[:KEY_BYTES]):
        if c > 0x20:
            out[i] = c | 0x20 if 0x41 <= c <= 0x5A else c
    return bytes(out)


@njit(inline="always")
def k_map_words(blk, out):
    """One KV row per slot: (key, 1), or a sentinel for an empty slot."""
    ones = ~U64(0)
    for s in range(SLOTS_PER_BLOCK):
        base = HEADER_BYTES + s * SLOT_BYTES
        w0 = U64(0)
        hi = U64(0)
        for t in range(KEY_BYTES):
            c = U64(blk[base + t])
            upper = k_greater(U64(26), c - U64(0x41))  # c in 'A'..'Z'
            c = c | (upper & U64(0x20))
            c = k_select(k_greater(c, U64(0x20)), c, U64(0))
            if t < 8:
                w0 = (w0 << U64(8)) | c
            else:
                hi = (hi << U64(8)) | c
        empty = k_equal(w0 | hi, U64(0))
        out[s, 0] = k_select(empty, ones, w0)
        out[s, 1] = k_select(empty, ones, (hi << U64(32)) | U64(1))


@njit(cache=True)
def _map_word_block(blk, out):
    k_map_words(blk, out)


def map_word_block(block: np.ndarray) -> np.ndarray:
    """Mapper for :func:`mr_run`: 63 KV rows per input block."""
    out = np.empty((SLOTS_PER_BLOCK, 2), np.uint64)
    _map_word_block(block, out)
    return out


@njit(cache=True)
def _map_all(src, stag, dst, dtag, log):
    rows = np.empty((SLOTS_PER_BLOCK, 2), np.uint64)
    for b in range(src.shape[0]):
        emit_read(log, stag, b)
        k_map_words(src[b], rows)
        k_encode_kv(rows, KV_PER_BLOCK, dst[b])
        emit_write(log, dtag, b)


def wordcount_manual(store: BlockStore) -> MRResult:
    """Map, block sort, reduce sweep and final sort wired by hand."""
    rec = store.buf.recorder
    n = max(store.count, 1)
    inter = BlockStore.scratch(n, rec, fill=0xFF)
    log, lrec = open_log(2 * store.count, store.buf, inter.buf)
    _map_all(store.raw, store.buf.tag, inter.raw, inter.buf.tag, log)
    close_log(log, lrec)
    comparators = block_bitonic_sort(inter, presort=True)
    out = BlockStore.scratch(n, rec)
    reduce_phase(inter, out, "sum")
    comparators += block_bitonic_sort(out, presort=True)
    trimmed, total = finalize(out)
    return MRResult(trimmed, total, comparators, n)


def wordcount_framework(store: BlockStore) -> MRResult:
    return mr_run(MRJob(map_word_block, SLOTS_PER_BLOCK, store, reducer="sum"))


def _slot_keys(store: BlockStore):
    slots = store.raw[:, HEADER_BYTES:HEADER_BYTES + SLOTS_PER_BLOCK * SLOT_BYTES]
    return slots.reshape(-1, SLOT_BYTES)[:, :KEY_BYTES]


def count_words(store: BlockStore) -> Counter:
    """Associative-map count of normalized keys (the unprotected path)."""
    cnt: Counter = Counter()
    zero = bytes(KEY_BYTES)
    for row in _slot_keys(store):
        key = normalize(row.tobytes())
        if key != zero:
            cnt[key] += 1
    return cnt


def wordcount_unprotected(store: BlockStore) -> MRResult:
    cnt = count_words(store)
    recs = [KVRecord(k, v & 0xFFFFFFFF) for k, v in sorted(cnt.items())]
    blocks = [encode_kv_block(np.array([r.lanes() for r in recs[i:i + KV_PER_BLOCK]],
                                       dtype=np.uint64).reshape(-1, 2))
              for i in range(0, len(recs), KV_PER_BLOCK)]
    return MRResult(BlockStore.from_blocks(blocks), len(recs), 0, 0)


def wordcount(store: BlockStore, impl: WCImpl | str = WCImpl.Manual) -> MRResult:
    impl = WCImpl(impl)
    if impl is WCImpl.Manual:
        return wordcount_manual(store)
    if impl is WCImpl.Framework:
        return wordcount_framework(store)
    return wordcount_unprotected(store)


def result_counts(res: MRResult) -> dict[bytes, int]:
    return {r.key: r.value for r in output_records(res.output)}


# -- input generation --------------------------------------------------------

_ALPHA = np.frombuffer(b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ", np.uint8)


def word_block(words) -> np.ndarray:
    """Block holding up to 63 words (bytes or str), one per slot."""
    words = list(words)
    if len(words) > SLOTS_PER_BLOCK:
        raise ValueError("too many words for one block")
    blk = np.zeros(BLOCK_BYTES, np.uint8)
    n = 0
    for i, w in enumerate(words):
        w = w.encode("ascii") if isinstance(w, str) else bytes(w)
        w = w[:SLOT_BYTES]
        base = HEADER_BYTES + i * SLOT_BYTES
        blk[base:base + len(w)] = np.frombuffer(w, np.uint8)
        n += normalize(w) != bytes(KEY_BYTES)
    blk[0] = n & 0xFF
    blk[1] = n >> 8
    return blk


def text_blocks(text: str | bytes) -> list[np.ndarray]:
    """Split whitespace-separated text into word blocks."""
    if isinstance(text, str):
        text = text.encode("ascii", "replace")
    words = text.split()
    return [word_block(words[i:i + SLOTS_PER_BLOCK]) for i in range(0, len(words), SLOTS_PER_BLOCK)]


def gen_word_store(n_blocks: int, seed: int = 1, vocab: int = 2000, fill: float = 0.9,
                   path=None) -> BlockStore:
    """Random corpus: Zipf-like draws from a fixed random vocabulary.

    Roughly ``fill`` of the slots carry a word; mixed case words exercise
    lowercasing and words longer than 12 bytes exercise truncation.
    """
    rs = np.random.default_rng(seed)
    lens = rs.integers(1, 15, vocab)
    vocab_words = [_ALPHA[rs.integers(0, len(_ALPHA), ln)].tobytes() for ln in lens]
    weights = 1.0 / np.arange(1, vocab + 1)
    weights /= weights.sum()
    blocks = []
    for _ in range(n_blocks):
        present = rs.random(SLOTS_PER_BLOCK) < fill
        picks = rs.choice(vocab, SLOTS_PER_BLOCK, p=weights)
        blocks.append(word_block([vocab_words[p] if ok else b"" for p, ok in zip(picks, present)]))
    return BlockStore.from_blocks(blocks, path)


def random_full_store(n_blocks: int, rs: np.random.Generator) -> BlockStore:
    """Corpus with every slot populated, so only word contents vary."""
    words = [_ALPHA[rs.integers(0, len(_ALPHA), rs.integers(1, 15))].tobytes()
             for _ in range(n_blocks * SLOTS_PER_BLOCK)]
    return BlockStore.from_blocks(
        [word_block(words[i:i + SLOTS_PER_BLOCK]) for i in range(0, len(words), SLOTS_PER_BLOCK)])
