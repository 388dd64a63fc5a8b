"""Fixed-size block storage and block-level oblivious operations."""

from .access import BlockImpl, build_block_oram, linear_block_access, o_block_access
from .buffer import BufferBlock, BufferManager, OramCapacityError
from .sort import block_bitonic_sort, external_sort, merge_split, sort_block
from .store import (
    BLOCK_BYTES,
    KV_PER_BLOCK,
    POINTS_PER_BLOCK,
    BlockStore,
    KVRecord,
    block_points,
    block_records,
    decode_kv_block,
    encode_kv_block,
    kv_block,
    point_block,
    record_count,
)

__all__ = [
    "BLOCK_BYTES", "KV_PER_BLOCK", "POINTS_PER_BLOCK", "BlockImpl", "BlockStore", "BufferBlock",
    "BufferManager", "KVRecord", "OramCapacityError", "block_bitonic_sort", "block_points",
    "block_records", "build_block_oram", "decode_kv_block", "encode_kv_block", "external_sort",
    "kv_block", "linear_block_access", "merge_split", "o_block_access", "point_block",
    "record_count", "sort_block",
]
