import heapq

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oblivbench.bench import check_oblivious, random_graph
from oblivbench.oalg import (INF, bitonic_sort, comparator_count, dist_matrix, edit_distance,
                             floyd_warshall, o_edit_distance, o_floyd_warshall, sort_records,
                             unprotected_sort)
from oblivbench.trace import InstrumentedBuffer, recording


def levenshtein(a: bytes, b: bytes) -> int:
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def dijkstra_all(m):
    n = len(m)
    out = np.full((n, n), INF, np.uint64)
    for s in range(n):
        dist = {s: 0}
        heap = [(0, s)]
        while heap:
            d, u = heapq.heappop(heap)
            if d > dist[u]:
                continue
            for v in range(n):
                w = int(m[u, v])
                if v != u and w < INF and d + w < dist.get(v, INF):
                    dist[v] = d + w
                    heapq.heappush(heap, (d + w, v))
        for v, d in dist.items():
            out[s, v] = d
    return out


# -- sort ---------------------------------------------------------------------

def test_sort_small():
    assert sort_records([3, 1, 2]).tolist() == [1, 2, 3]


def test_sort_four_uses_six_comparators():
    assert bitonic_sort(InstrumentedBuffer(np.array([4, 3, 2, 1], np.uint64))) == 6


@given(st.lists(st.integers(0, (1 << 64) - 1), max_size=300), st.booleans())
def test_sort_matches_reference(xs, ascending):
    out = sort_records(xs, ascending=ascending)
    assert out.tolist() == sorted(xs, reverse=not ascending)


def test_sort_random_arrays_against_reference():
    rs = np.random.default_rng(5)
    for _ in range(300):
        n = int(rs.integers(0, 301))
        xs = rs.integers(0, 1 << 64, n, dtype=np.uint64)
        assert np.array_equal(sort_records(xs), np.sort(xs))


def test_sort_with_payload_lanes():
    rs = np.random.default_rng(2)
    keys = rs.integers(0, 10, 77, dtype=np.uint64)
    pay = np.arange(77, dtype=np.uint64)
    out = sort_records(keys, pay)
    ref = sorted(zip(keys.tolist(), pay.tolist()))
    assert [tuple(r) for r in out.tolist()] == ref
    desc = sort_records(keys, pay, ascending=False)
    assert [tuple(r) for r in desc.tolist()] == ref[::-1]


def test_sort_keeps_max_keys_that_look_like_padding():
    xs = [(1 << 64) - 1, 0, (1 << 64) - 1]
    assert sort_records(xs).tolist() == [0, (1 << 64) - 1, (1 << 64) - 1]
    assert sort_records([0, 5, 0], ascending=False).tolist() == [5, 0, 0]


@pytest.mark.parametrize("n", [1 << k for k in range(2, 11)])
def test_comparator_formula(n):
    k = n.bit_length() - 1
    got = bitonic_sort(InstrumentedBuffer(np.arange(n, 0, -1).astype(np.uint64)))
    assert got == comparator_count(n) == n * k * (k + 1) // 4


def test_unprotected_twin():
    d = np.array([[2, 1], [1, 9], [1, 3]], np.uint64)
    assert unprotected_sort(d).tolist() == [[1, 3], [1, 9], [2, 1]]


@pytest.mark.parametrize("n", [16, 64, 256, 100])
def test_sort_trace_invariance(n):
    rep = check_oblivious("Sort", (n,), pairs=5, seed=n)
    assert rep.passed and rep.pairs[0].events[0] > 0


def test_padding_uses_working_buffer_and_records_copies():
    with recording() as rec:
        buf = InstrumentedBuffer(np.array([5, 4, 3], np.uint64))
        bitonic_sort(buf)
    t = rec.trace()
    assert t.count(region=buf.region) == 6  # copy in and copy out
    assert len(t) == 4 * 3 + 4 * comparator_count(4)


# -- edit distance ------------------------------------------------------------

@pytest.mark.parametrize("a,b,d", [("", "abc", 3), ("a", "a", 0), ("kitten", "sitting", 3),
                                   ("", "", 0), ("flaw", "lawn", 2)])
def test_edit_distance_examples(a, b, d):
    assert o_edit_distance(a, b) == d == edit_distance(a, b)


@given(st.binary(max_size=40), st.binary(max_size=40))
def test_edit_distance_matches_dp_and_is_symmetric(a, b):
    d = o_edit_distance(a, b)
    assert d == levenshtein(a, b) == o_edit_distance(b, a)


def test_edit_distance_full_matrix():
    d, mat = o_edit_distance("kitten", "sitting", full_matrix=True)
    assert d == 3 and mat.shape == (7, 8) and mat[-1, -1] == 3
    assert mat[0].tolist() == list(range(8))


@pytest.mark.parametrize("shape", [(10, 10), (20, 20), (7, 13)])
def test_edit_distance_trace_invariance(shape):
    rep = check_oblivious("EditDistance", shape, pairs=5, seed=3)
    assert rep.passed and rep.pairs[0].events[0] > 0


# -- Floyd-Warshall -----------------------------------------------------------

def test_fw_examples():
    m = dist_matrix(2, [(0, 1, 7)])
    out = o_floyd_warshall(m)
    assert out[0, 1] == 7 and out[1, 0] == INF
    assert o_floyd_warshall(dist_matrix(3))[0, 2] == INF


def test_fw_matches_dijkstra_and_triangle_inequality():
    rs = np.random.default_rng(8)
    for _ in range(15):
        n = int(rs.integers(1, 33))
        m = random_graph(n, rs, density=float(rs.uniform(0.05, 0.5)))
        out = o_floyd_warshall(m)
        assert np.array_equal(out, dijkstra_all(m))
        assert np.array_equal(out, floyd_warshall(m))
        s = np.minimum(out[:, :, None] + out[None, :, :], INF)
        assert (out[:, :, None] <= s).all()
        assert (np.diag(out) == 0).all()


@pytest.mark.parametrize("n", [8, 16])
def test_fw_trace_invariance(n):
    rep = check_oblivious("FloydWarshall", (n,), pairs=5, seed=2)
    assert rep.passed and rep.pairs[0].events[0] == 4 * n ** 3
