import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oblivbench.oprim import (FALSE, TRUE, mask, o_array_read, o_array_write, o_equal, o_greater,
                              o_max, o_min, o_move, o_select, o_swap)
from oblivbench.trace import InstrumentedBuffer, recording

from conftest import BOUNDARY_WORDS

W = (1 << 64) - 1
words = st.one_of(st.sampled_from(BOUNDARY_WORDS), st.integers(0, W))


def test_select_examples():
    assert o_select(TRUE, 7, 9) == 7
    assert o_select(FALSE, 7, 9) == 9


def test_compare_examples():
    assert o_greater(5, 3) == TRUE
    assert o_greater(3, 3) == FALSE
    assert o_equal(1 << 63, 1 << 63) == TRUE
    assert o_min(4, 9) == 4 and o_max(4, 9) == 9


@given(words, words, st.booleans())
def test_primitives_match_branching_oracle(a, b, c):
    assert o_select(mask(c), a, b) == (a if c else b)
    assert o_greater(a, b) == (TRUE if a > b else FALSE)
    assert o_equal(a, b) == (TRUE if a == b else FALSE)
    assert o_min(a, b) == min(a, b)
    assert o_max(a, b) == max(a, b)


def test_primitives_on_many_random_pairs():
    # bulk oracle check over random words plus every boundary pair
    rs = np.random.default_rng(7)
    vals = [int(x) for x in rs.integers(0, 1 << 64, 4000, dtype=np.uint64)]
    vals += [int(x) for x in rs.integers(0, 16, 1000)]  # many equal pairs
    pairs = list(zip(vals[::2], vals[1::2]))
    pairs += [(a, b) for a in BOUNDARY_WORDS for b in BOUNDARY_WORDS]
    for a, b in pairs:
        assert o_greater(a, b) == (TRUE if a > b else FALSE)
        assert o_equal(a, b) == (TRUE if a == b else FALSE)
        assert o_min(a, b) == min(a, b)


def _swap_run(c, x, y):
    with recording() as rec:
        buf = InstrumentedBuffer([x, y])
        o_swap(mask(c), buf, 0, 1)
    return buf.tolist(), rec.trace()


def test_swap_values_and_identical_traces():
    v1, t1 = _swap_run(True, 1, 2)
    v0, t0 = _swap_run(False, 1, 2)
    assert v1 == [2, 1] and v0 == [1, 2]
    assert t1 == t0 and len(t1) == 4
    assert [e.kind.value for e in t1] == ["R", "R", "W", "W"]


def test_move_always_writes():
    traces = []
    for c in (True, False):
        with recording() as rec:
            buf = InstrumentedBuffer([5])
            o_move(mask(c), buf, 0, 9)
        assert buf.tolist() == [9 if c else 5]
        traces.append(rec.trace())
    assert traces[0] == traces[1] and len(traces[0]) == 2


def test_array_read_examples():
    with recording() as rec:
        buf = InstrumentedBuffer([10, 20, 30])
        assert o_array_read(buf, 1) == 20
    assert [e.offset for e in rec.trace()] == [0, 1, 2]
    assert o_array_read(buf, 3) == 0


def test_array_read_trace_independent_of_index():
    traces = []
    for i in (0, 2, 99):
        with recording() as rec:
            o_array_read(InstrumentedBuffer([10, 20, 30]), i)
        traces.append(rec.trace())
    assert traces[0] == traces[1] == traces[2]


def test_array_write_examples():
    buf = InstrumentedBuffer([1, 2, 3])
    o_array_write(buf, 2, 9)
    assert buf.tolist() == [1, 2, 9]
    traces = []
    for i in (0, 1, 3):
        with recording() as rec:
            b = InstrumentedBuffer([1, 2, 3])
            o_array_write(b, i, 7)
        traces.append(rec.trace())
    assert b.tolist() == [1, 2, 3]  # out of range: no change
    assert traces[0] == traces[1] == traces[2]
    assert len(traces[0]) == 6


def test_array_access_matches_indexing():
    rs = np.random.default_rng(3)
    for _ in range(1000):
        n = int(rs.integers(1, 1025))
        data = rs.integers(0, 1 << 64, n, dtype=np.uint64)
        i = int(rs.integers(n))
        buf = InstrumentedBuffer(data.copy())
        assert o_array_read(buf, i) == int(data[i])
        v = int(rs.integers(0, 1 << 63))
        o_array_write(buf, i, v)
        data[i] = v
        assert np.array_equal(buf.data, data)


@pytest.mark.parametrize("op", ["swap", "move"])
def test_swap_move_bounds_checked(op):
    buf = InstrumentedBuffer([1, 2])
    with pytest.raises(IndexError):
        if op == "swap":
            o_swap(TRUE, buf, 0, 2)
        else:
            o_move(TRUE, buf, 5, 1)
