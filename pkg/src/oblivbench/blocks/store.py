"""Fixed 1 KiB blocks and the file-backed block store.

Block layout (little-endian integers)::

    0..1     record_count (u16)
    2..15    reserved, zero
    16..     fixed-width record slots; unused slots are sentinel-filled

A key/value record is 16 bytes: a 12-byte key (zero-padded, compared as a
big-endian integer) followed by a u32 value.  In kernels such a record is
held as two uint64 lanes ``(key[0:8], key[8:12] << 32 | value)`` so that
lane-wise lexicographic order is (key, value) order.  The sentinel record
is all ones in both lanes and sorts after every real record.

Point records are 8 bytes: x and y as u32 16.16 fixed point.
"""

from __future__ import annotations

import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit

from ..trace import InstrumentedBuffer

if sys.byteorder != "little":  # pragma: no cover
    raise ImportError("block word views assume a little-endian host")

BLOCK_BYTES = 1024
HEADER_BYTES = 16
KV_BYTES = 16
KEY_BYTES = 12
POINT_BYTES = 8
SENTINEL = (1 << 64) - 1
U64 = np.uint64


def records_per_block(record_bytes: int) -> int:
    return (BLOCK_BYTES - HEADER_BYTES) // record_bytes


KV_PER_BLOCK = records_per_block(KV_BYTES)  # 63
POINTS_PER_BLOCK = records_per_block(POINT_BYTES)  # 126


@dataclass(frozen=True, order=True)
class KVRecord:
    key: bytes
    value: int

    def __post_init__(self):
        if len(self.key) > KEY_BYTES:
            raise ValueError("key longer than 12 bytes")
        if not 0 <= self.value < 1 << 32:
            raise ValueError("value must fit in 32 bits")
        object.__setattr__(self, "key", bytes(self.key).ljust(KEY_BYTES, b"\0"))

    def lanes(self) -> tuple[int, int]:
        return (int.from_bytes(self.key[:8], "big"),
                int.from_bytes(self.key[8:], "big") << 32 | self.value)

    @classmethod
    def from_lanes(cls, w0: int, w1: int) -> "KVRecord":
        w0, w1 = int(w0), int(w1)
        key = w0.to_bytes(8, "big") + (w1 >> 32).to_bytes(4, "big")
        return cls(key, w1 & 0xFFFFFFFF)

    def word(self) -> str:
        return self.key.rstrip(b"\0").decode("ascii", "replace")

    def to_bytes(self) -> bytes:
        return self.key + self.value.to_bytes(4, "little")


def is_sentinel_lanes(w0, w1) -> bool:
    return int(w0) == SENTINEL and int(w1) == SENTINEL


# -- compiled codecs --------------------------------------------------------

@njit(inline="always")
def k_decode_kv(blk, out):
    """Decode every KV slot of one block (uint8[1024]) into out[(63, 2)]."""
    for r in range(out.shape[0]):
        base = 16 + r * 16
        w0 = U64(0)
        for t in range(8):
            w0 = (w0 << U64(8)) | U64(blk[base + t])
        hi = U64(0)
        for t in range(8, 12):
            hi = (hi << U64(8)) | U64(blk[base + t])
        val = U64(0)
        for t in range(4):
            val |= U64(blk[base + 12 + t]) << U64(8 * t)
        out[r, 0] = w0
        out[r, 1] = (hi << U64(32)) | val


@njit(inline="always")
def k_encode_kv(recs, n, blk):
    """Encode the first ``n`` rows of recs into a block and set record_count.

    record_count is the number of non-sentinel rows, counted without
    branching on record contents.
    """
    ones = ~U64(0)
    real = U64(0)
    for r in range(n):
        w0 = recs[r, 0]
        w1 = recs[r, 1]
        d = (w0 ^ ones) | (w1 ^ ones)
        real += (d | (U64(0) - d)) >> U64(63)
        base = 16 + r * 16
        for t in range(8):
            blk[base + t] = np.uint8((w0 >> U64(56 - 8 * t)) & U64(0xFF))
        hi = w1 >> U64(32)
        for t in range(4):
            blk[base + 8 + t] = np.uint8((hi >> U64(24 - 8 * t)) & U64(0xFF))
        for t in range(4):
            blk[base + 12 + t] = np.uint8((w1 >> U64(8 * t)) & U64(0xFF))
    blk[0] = np.uint8(real & U64(0xFF))
    blk[1] = np.uint8((real >> U64(8)) & U64(0xFF))
    for t in range(2, 16):
        blk[t] = np.uint8(0)


@njit(cache=True)
def _decode_kv_block(blk, out):
    k_decode_kv(blk, out)


@njit(cache=True)
def _encode_kv_block(recs, blk):
    k_encode_kv(recs, recs.shape[0], blk)


def decode_kv_block(block) -> np.ndarray:
    """(63, 2) uint64 lanes of a KV block."""
    out = np.empty((KV_PER_BLOCK, 2), np.uint64)
    _decode_kv_block(np.frombuffer(bytes(block), np.uint8) if not isinstance(block, np.ndarray)
                     else block, out)
    return out


def encode_kv_block(lanes: np.ndarray) -> np.ndarray:
    """Block bytes for up to 63 KV rows; missing rows become sentinels."""
    recs = np.full((KV_PER_BLOCK, 2), SENTINEL, np.uint64)
    recs[:len(lanes)] = lanes
    blk = np.zeros(BLOCK_BYTES, np.uint8)
    _encode_kv_block(recs, blk)
    return blk


def kv_block(records: list[KVRecord]) -> np.ndarray:
    if len(records) > KV_PER_BLOCK:
        raise ValueError("too many records for one block")
    lanes = np.array([r.lanes() for r in records], dtype=np.uint64).reshape(-1, 2)
    return encode_kv_block(lanes)


def block_records(block: np.ndarray) -> list[KVRecord]:
    """Non-sentinel KV records of a block, in slot order."""
    lanes = decode_kv_block(block)
    return [KVRecord.from_lanes(a, b) for a, b in lanes.tolist() if not is_sentinel_lanes(a, b)]


def record_count(block: np.ndarray) -> int:
    return int(block[0]) | int(block[1]) << 8


def point_block(xs, ys) -> np.ndarray:
    """Block of packed 16.16 points (x, y as u32)."""
    n = len(xs)
    if n > POINTS_PER_BLOCK:
        raise ValueError("too many points for one block")
    blk = np.zeros(BLOCK_BYTES, np.uint8)
    blk[0:2] = np.frombuffer(np.uint16(n).tobytes(), np.uint8)
    pts = blk[HEADER_BYTES:HEADER_BYTES + POINT_BYTES * POINTS_PER_BLOCK].view(np.uint32)
    pts[0:2 * n:2] = np.asarray(xs, np.uint32)
    pts[1:2 * n:2] = np.asarray(ys, np.uint32)
    return blk


def block_points(block: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = record_count(block)
    pts = block[HEADER_BYTES:HEADER_BYTES + POINT_BYTES * POINTS_PER_BLOCK].view(np.uint32)
    return pts[0:2 * n:2].copy(), pts[1:2 * n:2].copy()


# -- store --------------------------------------------------------------------

class BlockStore:
    """A sequence of 1 KiB blocks, backed by a file or by anonymous memory.

    ``raw`` is the (count, 1024) uint8 view kernels operate on; ``buf`` is
    the instrumented region (one element per block) their touches are
    recorded against.
    """

    def __init__(self, raw: np.ndarray, path: Path | None = None, recorder=None):
        if raw.ndim != 2 or raw.shape[1] != BLOCK_BYTES or raw.dtype != np.uint8:
            raise ValueError("block store must be a (count, 1024) uint8 array")
        self.raw = raw
        self.path = path
        self.buf = InstrumentedBuffer(raw, elem_width=BLOCK_BYTES, recorder=recorder)

    @classmethod
    def scratch(cls, count: int, recorder=None, fill: int = 0) -> "BlockStore":
        """In-memory working store attached to ``recorder`` (or the active one)."""
        return cls(np.full((count, BLOCK_BYTES), fill, np.uint8), recorder=recorder)

    @classmethod
    def memory(cls, count: int) -> "BlockStore":
        return cls(np.zeros((count, BLOCK_BYTES), np.uint8))

    @classmethod
    def create(cls, path, count: int) -> "BlockStore":
        path = Path(path)
        with open(path, "wb") as fh:
            fh.truncate(count * BLOCK_BYTES)
        return cls.open(path)

    @classmethod
    def open(cls, path) -> "BlockStore":
        path = Path(path)
        size = os.path.getsize(path)
        if size % BLOCK_BYTES:
            raise ValueError(f"{path}: length {size} is not a multiple of {BLOCK_BYTES}")
        count = size // BLOCK_BYTES
        if count == 0:
            return cls(np.zeros((0, BLOCK_BYTES), np.uint8), path)
        mm = np.memmap(path, dtype=np.uint8, mode="r+", shape=(count, BLOCK_BYTES))
        return cls(mm, path)

    @classmethod
    def from_blocks(cls, blocks, path=None) -> "BlockStore":
        blocks = list(blocks)
        st = cls.create(path, len(blocks)) if path is not None else cls.memory(len(blocks))
        for i, b in enumerate(blocks):
            st.raw[i] = b
        return st

    def __len__(self) -> int:
        return self.raw.shape[0]

    @property
    def count(self) -> int:
        return self.raw.shape[0]

    @property
    def words(self) -> np.ndarray:
        """(count, 128) uint64 view of the same memory."""
        return self.raw.view(np.uint64)

    def read_block(self, i: int) -> np.ndarray:
        return self.buf.read(i).copy()

    def write_block(self, i: int, block) -> None:
        data = np.frombuffer(bytes(block), np.uint8) if not isinstance(block, np.ndarray) else block
        if data.shape != (BLOCK_BYTES,):
            raise ValueError("a block is exactly 1024 bytes")
        self.buf.write(i, data)

    def flush(self) -> None:
        if isinstance(self.raw, np.memmap):
            self.raw.flush()

    def copy(self) -> "BlockStore":
        return BlockStore(np.array(self.raw))
