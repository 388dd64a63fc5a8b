"""Working block plus LRU block cache in front of a Path ORAM.

Blocks handled here are ORAM payloads of 128 words: word 0 is the record
count, word 1 is reserved, and the remaining 126 words hold fixed-width
records of ``record_lanes`` words each.

Cache hits and misses depend on the ids requested, so only the ORAM side
of this component is oblivious.  ``events`` keeps the hit/miss sequence so
callers can measure what it reveals.
"""

from __future__ import annotations

from collections import OrderedDict

import numpy as np

from ..oram import Op, OramState, oram_access

BLOCK_WORDS = 128
HEADER_WORDS = 2
DEFAULT_CACHE_BLOCKS = 32


class OramCapacityError(RuntimeError):
    """More blocks were created than the backing ORAM can hold."""


class BufferBlock:
    __slots__ = ("id", "words", "lanes")

    def __init__(self, bid: int, words: np.ndarray, lanes: int):
        self.id = bid
        self.words = words
        self.lanes = lanes

    @property
    def capacity(self) -> int:
        return (BLOCK_WORDS - HEADER_WORDS) // self.lanes

    @property
    def count(self) -> int:
        return int(self.words[0])

    @property
    def full(self) -> bool:
        return self.count >= self.capacity

    @property
    def records(self) -> np.ndarray:
        """(capacity, lanes) view of the record area."""
        n = self.capacity * self.lanes
        return self.words[HEADER_WORDS:HEADER_WORDS + n].reshape(self.capacity, self.lanes)

    def used(self) -> np.ndarray:
        return self.records[:self.count]

    def append(self, rec) -> int:
        slot = self.count
        self.records[slot] = rec
        self.words[0] = slot + 1
        return slot


class BufferManager:
    def __init__(self, oram: OramState, m: int = DEFAULT_CACHE_BLOCKS, record_lanes: int = 2):
        if oram.words != BLOCK_WORDS:
            raise ValueError("BufferManager needs an ORAM with 1024-byte blocks")
        if m < 1:
            raise ValueError("cache must hold at least one block")
        self.oram = oram
        self.m = m
        self.lanes = record_lanes
        self.cache: OrderedDict[int, BufferBlock] = OrderedDict()
        self.next_id = 0
        self.events: list[tuple[str, int]] = []
        self.working = self._fresh_block()

    def _fresh_block(self) -> BufferBlock:
        bid = self.next_id
        if bid >= self.oram.capacity:
            raise OramCapacityError(f"ORAM capacity of {self.oram.capacity} blocks exhausted")
        self.next_id += 1
        return BufferBlock(bid, np.zeros(BLOCK_WORDS, np.uint64), self.lanes)

    def _evict_lru(self) -> None:
        vid, victim = self.cache.popitem(last=False)
        oram_access(self.oram, Op.Write, vid, victim.words)
        self.events.append(("evict", vid))

    def get_block(self, bid: int) -> BufferBlock:
        """Reference to block ``bid``; mutations persist through write-back."""
        if bid == self.working.id:
            self.events.append(("working", bid))
            return self.working
        blk = self.cache.get(bid)
        if blk is not None:
            self.cache.move_to_end(bid)
            self.events.append(("hit", bid))
            return blk
        if not 0 <= bid < self.next_id:
            raise KeyError(f"block {bid} was never created")
        if len(self.cache) >= self.m:
            self._evict_lru()
        words = oram_access(self.oram, Op.Read, bid)
        blk = BufferBlock(bid, words, self.lanes)
        self.cache[bid] = blk
        self.events.append(("miss", bid))
        return blk

    def add_record_to_block(self, rec) -> int:
        """Append a record to the working block and return that block's id."""
        if self.working.full:
            if len(self.cache) >= self.m:
                self._evict_lru()
            self.cache[self.working.id] = self.working
            self.working = self._fresh_block()
            self.events.append(("new", self.working.id))
        self.working.append(rec)
        return self.working.id

    def flush(self) -> None:
        """Write every cached block and the working block back to the ORAM."""
        for bid, blk in self.cache.items():
            oram_access(self.oram, Op.Write, bid, blk.words)
        oram_access(self.oram, Op.Write, self.working.id, self.working.words)

    def drain(self) -> list[BufferBlock]:
        """Flush, then read every created block back from the ORAM in id order."""
        self.flush()
        return [BufferBlock(i, oram_access(self.oram, Op.Read, i), self.lanes)
                for i in range(self.next_id)]

    def misses(self) -> list[int]:
        return [bid for kind, bid in self.events if kind == "miss"]
