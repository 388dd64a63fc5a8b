from collections import OrderedDict

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oblivbench.bench import check_oblivious, random_kv_store
from oblivbench.blocks import (BLOCK_BYTES, KV_PER_BLOCK, BlockImpl, BlockStore, BufferManager,
                               KVRecord, OramCapacityError, block_bitonic_sort, block_records,
                               decode_kv_block, encode_kv_block, external_sort, kv_block,
                               merge_split, o_block_access, record_count, sort_block)
from oblivbench.blocks.buffer import BLOCK_WORDS
from oblivbench.oalg import comparator_count
from oblivbench.oram import OramConfig, oram_init, oram_read
from oblivbench.trace import recording

SENT = (1 << 64) - 1


def lanes_of(store):
    return np.concatenate([decode_kv_block(store.raw[b]) for b in range(store.count)])


def sorted_blocks(rs, n_blocks):
    out = []
    for _ in range(n_blocks):
        lanes = rs.integers(0, 1 << 63, (KV_PER_BLOCK, 2), dtype=np.uint64)
        out.append(encode_kv_block(lanes[np.lexsort(lanes.T[::-1])]))
    return out


def lex_sorted(lanes):
    return lanes[np.lexsort(lanes.T[::-1])]


# -- records and files --------------------------------------------------------

@given(st.binary(max_size=12), st.integers(0, (1 << 32) - 1))
def test_kv_record_lanes_round_trip(key, value):
    r = KVRecord(key, value)
    assert KVRecord.from_lanes(*r.lanes()) == r
    assert len(r.to_bytes()) == 16


def test_kv_lane_order_is_key_order():
    a, b = KVRecord(b"apple", 9), KVRecord(b"apples", 1)
    assert a.lanes() < b.lanes() and a < b
    with pytest.raises(ValueError):
        KVRecord(b"x" * 13, 0)
    with pytest.raises(ValueError):
        KVRecord(b"x", 1 << 32)


def test_kv_block_layout():
    recs = [KVRecord(b"b", 2), KVRecord(b"a", 1)]
    blk = kv_block(recs)
    assert blk.shape == (BLOCK_BYTES,)
    assert record_count(blk) == 2
    assert not blk[2:16].any()
    assert block_records(blk) == recs
    assert bytes(blk[16:28]) == b"b".ljust(12, b"\0")
    assert int.from_bytes(bytes(blk[28:32]), "little") == 2
    assert (decode_kv_block(blk)[2:] == SENT).all()


def test_file_round_trip(tmp_path, rs):
    blocks = [rs.integers(0, 256, BLOCK_BYTES, dtype=np.uint8) for _ in range(5)]
    path = tmp_path / "s.blk"
    st_ = BlockStore.from_blocks(blocks, path)
    st_.write_block(2, bytes(BLOCK_BYTES))
    st_.flush()
    assert path.stat().st_size == 5 * BLOCK_BYTES
    again = BlockStore.open(path)
    assert again.count == 5
    assert np.array_equal(again.read_block(0), blocks[0])
    assert not again.read_block(2).any()
    with pytest.raises(ValueError):
        again.write_block(0, b"short")


def test_open_rejects_partial_blocks(tmp_path):
    p = tmp_path / "bad"
    p.write_bytes(b"x" * 1000)
    with pytest.raises(ValueError):
        BlockStore.open(p)


# -- block access -------------------------------------------------------------

def test_block_access_all_impls(rs):
    store = random_kv_store(4, rs)
    for impl in BlockImpl:
        assert np.array_equal(o_block_access(store, 2, impl), store.raw[2])
        assert not o_block_access(store, 9, impl).any()


def test_linear_access_touches_every_block_once(rs):
    store_raw = random_kv_store(8, rs).raw
    traces = []
    for bid in (0, 5, 7):
        with recording() as rec:
            s = BlockStore(store_raw)
            o_block_access(s, bid, "Linear")
        traces.append(rec.trace())
        assert sorted(traces[-1].offsets().tolist()) == list(range(8))
    assert traces[0] == traces[1] == traces[2]


def test_oram_access_agrees_with_file(tmp_path, rs):
    path = tmp_path / "blocks"
    random_kv_store(64, rs).raw.tofile(path)
    store = BlockStore.open(path)
    direct = np.fromfile(path, np.uint8).reshape(64, BLOCK_BYTES)
    for bid in rs.integers(0, 64, 10_000):
        assert np.array_equal(o_block_access(store, int(bid), "Oram"), direct[bid])


# -- merge_split and block sort -----------------------------------------------

def test_merge_split_already_split():
    lo = [KVRecord(i.to_bytes(12, "big"), 0) for i in range(1, 64)]
    hi = [KVRecord(i.to_bytes(12, "big"), 0) for i in range(64, 127)]
    a, b = merge_split(kv_block(lo), kv_block(hi))
    assert block_records(a) == lo and block_records(b) == hi


def test_merge_split_against_sort_then_split(rs):
    for trial in range(300):
        a, b = sorted_blocks(rs, 2)
        asc = bool(trial % 2)
        x, y = merge_split(a, b, ascending=asc)
        ref = lex_sorted(np.concatenate([decode_kv_block(a), decode_kv_block(b)]))
        low, high = (x, y) if asc else (y, x)
        assert np.array_equal(decode_kv_block(low), ref[:KV_PER_BLOCK])
        assert np.array_equal(decode_kv_block(high), ref[KV_PER_BLOCK:])


def test_merge_split_trace_is_fixed(rs):
    traces = []
    for _ in range(3):
        a, b = sorted_blocks(rs, 2)
        with recording() as rec:
            merge_split(a, b)
        traces.append(rec.trace())
    assert len(traces[0]) > 0 and traces[0] == traces[1] == traces[2]


def test_sort_block(rs):
    lanes = rs.integers(0, 1 << 63, (40, 2), dtype=np.uint64)
    out = decode_kv_block(sort_block(encode_kv_block(lanes)))
    assert np.array_equal(out[:40], lex_sorted(lanes))
    assert (out[40:] == SENT).all()


@pytest.mark.parametrize("n", [1, 2, 3, 7, 16, 250, 500])
def test_block_sort_against_flatten_sort_repack(n, rs):
    store = random_kv_store(n, rs)
    ref = lex_sorted(lanes_of(store))
    block_bitonic_sort(store, presort=True)
    assert np.array_equal(lanes_of(store), ref)
    assert all(record_count(store.raw[b]) == KV_PER_BLOCK for b in range(n))


def test_block_sort_partial_blocks(rs):
    blocks = [encode_kv_block(rs.integers(0, 1 << 63, (int(rs.integers(0, 64)), 2),
                                          dtype=np.uint64)) for _ in range(5)]
    store = BlockStore.from_blocks(blocks)
    ref = lanes_of(store)
    ref = lex_sorted(ref[~(ref == SENT).all(axis=1)])
    block_bitonic_sort(store)
    flat = lanes_of(store)
    assert np.array_equal(flat[:len(ref)], ref)
    assert (flat[len(ref):] == SENT).all()


def test_block_sort_descending(rs):
    store = random_kv_store(4, rs)
    ref = lex_sorted(lanes_of(store))
    block_bitonic_sort(store, ascending=False)
    flat = lanes_of(store)
    got = np.concatenate([flat[b * KV_PER_BLOCK:(b + 1) * KV_PER_BLOCK] for b in range(3, -1, -1)])
    assert np.array_equal(got, ref)


def test_two_blocks_single_merge(rs):
    assert block_bitonic_sort(random_kv_store(2, rs)) == 1


@pytest.mark.parametrize("b", [4, 8, 16, 32])
def test_block_comparator_formula(b, rs):
    k = b.bit_length() - 1
    assert block_bitonic_sort(random_kv_store(b, rs)) == b * k * (k + 1) // 4 == comparator_count(b)


def test_external_sort_matches(rs):
    for n in (1, 5, 33):
        store = random_kv_store(n, rs)
        ref = lex_sorted(lanes_of(store))
        external_sort(store)
        assert np.array_equal(lanes_of(store), ref)


def test_block_sort_trace_invariance():
    rep = check_oblivious("BlockSort", (8,), pairs=3, seed=4)
    assert rep.passed and rep.pairs[0].events[0] > 0
    rep = check_oblivious("BlockSort", (5,), pairs=3, seed=4)
    assert rep.passed


# -- buffer manager -----------------------------------------------------------

class RefBufferModel:
    """LRU cache + working block in front of a dict that stands in for the ORAM."""

    def __init__(self, m, per_block):
        self.m, self.per = m, per_block
        self.oram: dict[int, list] = {}
        self.cache: OrderedDict[int, list] = OrderedDict()
        self.working_id, self.working = 0, []
        self.next_id = 1
        self.events = []

    def _evict(self):
        vid, recs = self.cache.popitem(last=False)
        self.oram[vid] = [list(r) for r in recs]
        self.events.append(("evict", vid))

    def add(self, rec):
        if len(self.working) == self.per:
            if len(self.cache) >= self.m:
                self._evict()
            self.cache[self.working_id] = self.working
            self.working_id, self.working = self.next_id, []
            self.next_id += 1
            self.events.append(("new", self.working_id))
        self.working.append(list(rec))
        return self.working_id

    def get(self, bid):
        if bid == self.working_id:
            self.events.append(("working", bid))
            return self.working
        if bid in self.cache:
            self.cache.move_to_end(bid)
            self.events.append(("hit", bid))
            return self.cache[bid]
        if len(self.cache) >= self.m:
            self._evict()
        self.cache[bid] = [list(r) for r in self.oram[bid]]
        self.events.append(("miss", bid))
        return self.cache[bid]

    def all_blocks(self):
        out = dict(self.oram)
        out.update(self.cache)
        out[self.working_id] = self.working
        return out


def _bm(m, capacity=256, lanes=2, seed=1):
    oram = oram_init(OramConfig(capacity=capacity, block_bytes=BLOCK_BYTES, rng_seed=seed))
    return BufferManager(oram, m=m, record_lanes=lanes)


def test_bm_working_block_capacity():
    bm = _bm(2)
    ids = [bm.add_record_to_block([i, i]) for i in range(64)]
    assert ids[:63] == [0] * 63 and ids[63] == 1
    assert bm.get_block(0).used()[5].tolist() == [5, 5]


def test_bm_hit_and_lru_eviction():
    bm = _bm(2)
    for i in range(4 * 63):
        bm.add_record_to_block([i, 0])
    # blocks 0..2 were pushed to the cache in turn; 0 was evicted for 2
    assert list(bm.cache) == [1, 2]
    n_acc = bm.oram.accesses
    bm.get_block(2)
    bm.get_block(2)
    assert bm.oram.accesses == n_acc and bm.events[-2:] == [("hit", 2), ("hit", 2)]
    bm.get_block(0)  # miss evicts LRU id 1
    assert list(bm.cache) == [2, 0] and ("evict", 1) in bm.events


def test_bm_capacity_error():
    bm = _bm(1, capacity=2)
    with pytest.raises(OramCapacityError):
        for i in range(3 * 63):
            bm.add_record_to_block([i, 0])


def test_bm_never_exceeds_cache():
    bm = _bm(3)
    rs = np.random.default_rng(1)
    for i in range(2000):
        bid = bm.add_record_to_block([i, 1])
        if i % 3 == 0:
            bm.get_block(int(rs.integers(0, bid + 1)))
        assert len(bm.cache) <= 3 and bm.working.id not in bm.cache


def run_against_model(ops, m, seed):
    rs = np.random.default_rng(seed)
    bm = _bm(m, capacity=256, lanes=2, seed=seed)
    model = RefBufferModel(m, (BLOCK_WORDS - 2) // 2)
    for step in range(ops):
        if rs.random() < 0.5 or model.next_id == 1 and not model.working:
            rec = [step, int(rs.integers(1 << 62))]
            assert bm.add_record_to_block(rec) == model.add(rec)
        else:
            bid = int(rs.integers(0, model.next_id))
            got = bm.get_block(bid)
            want = model.get(bid)
            assert got.used().tolist() == want
            if want:
                j = int(rs.integers(len(want)))
                got.records[j, 1] += 1
                want[j][1] += 1
        if step % 500 == 0:
            assert bm.events == model.events
            assert list(bm.cache) == list(model.cache)
            for vid, recs in model.oram.items():
                if vid not in model.cache:
                    assert oram_read(bm.oram, vid)[2:2 + 2 * len(recs)].tolist() == sum(recs, [])
    assert bm.events == model.events
    truth = model.all_blocks()
    drained = bm.drain()
    assert len(drained) == len(truth)
    for blk in drained:
        assert blk.used().tolist() == truth[blk.id]
    return bm


def test_bm_matches_reference_model_short():
    bm = run_against_model(3000, m=3, seed=5)
    assert bm.misses()
