"""Benchmark scenarios, the trace-invariance checker and CSV output.

Each scenario kind builds deterministic inputs from its seed, runs one
warm-up (which also triggers compilation), then times ``reps`` runs with
trace recording switched off.  Access-style kinds (ArrayAccess,
BlockAccess) report time per access.

``n`` is the kind's size axis: records (ArrayAccess, Sort), loop
iterations (Branching), sequence length (EditDistance), nodes
(FloydWarshall) or blocks (the block-based kinds).
"""

from __future__ import annotations

import csv
import statistics
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numba import njit

from .apps.kmeans import KMImpl, gen_point_store, kmeans, points_to_store, write_centroids
from .apps.wordcount import WCImpl, gen_word_store, random_full_store, wordcount
from .blocks.access import BlockImpl, build_block_oram, linear_block_access, o_block_access
from .blocks.sort import block_bitonic_sort, external_sort
from .blocks.store import KV_PER_BLOCK, BlockStore, encode_kv_block
from .oalg import (bitonic_sort, comparator_count, dist_matrix, edit_distance, floyd_warshall,
                   next_pow2, o_edit_distance, o_floyd_warshall, unprotected_sort)
from .oprim import k_equal, k_select, o_array_read, o_array_write
from .oram import Op, OramConfig, oram_access, oram_init
from .trace import (AccessTrace, InstrumentedBuffer, first_divergence, recording,
                    recording_enabled, set_recording)

U64 = np.uint64
CSV_HEADER = ["kind", "impl", "n", "record_bytes", "reps", "median_ms", "min_ms", "max_ms",
              "aux_count"]

IMPLS: dict[str, tuple[str, ...]] = {
    "ArrayAccess": ("Unprotected", "Linear", "Oram"),
    "Branching": ("Unprotected", "Manual"),
    "Sort": ("Unprotected", "Manual"),
    "BlockAccess": ("Unprotected", "Linear", "Oram"),
    "BlockSort": ("Unprotected", "Manual"),
    "EditDistance": ("Unprotected", "Manual"),
    "FloydWarshall": ("Unprotected", "Manual"),
    "WordCount": tuple(i.value for i in WCImpl),
    "KMeans": tuple(i.value for i in KMImpl),
}
DEFAULT_ITERS = {"ArrayAccess": 200, "BlockAccess": 100, "KMeans": 10}
BRANCHING_LOOP = 10 ** 6


class UsageError(ValueError):
    """Invalid scenario or request; the CLI maps it to exit code 2."""


@dataclass
class Scenario:
    kind: str
    impl: str
    n: int
    record_bytes: int = 8
    reps: int = 5
    seed: int = 1
    k: int = 5
    iters: int | None = None
    bit_fraction: float = 0.5
    input_path: str | None = None
    centroids_path: str | None = None

    def validate(self) -> None:
        if self.kind not in IMPLS:
            raise UsageError(f"unknown kind {self.kind!r}; choose from {', '.join(IMPLS)}")
        if self.impl not in IMPLS[self.kind]:
            raise UsageError(f"{self.kind} has no impl {self.impl!r}; "
                             f"choose from {', '.join(IMPLS[self.kind])}")
        if self.n < 1 and self.input_path is None:
            raise UsageError("size must be positive")
        if self.reps < 3:
            raise UsageError("at least 3 repetitions are required")
        if self.record_bytes not in (8, 16):
            raise UsageError("record size must be 8 or 16 bytes")
        if self.k < 1:
            raise UsageError("k must be positive")
        if self.iters is not None and self.iters < 1:
            raise UsageError("iteration count must be positive")
        if not 0.0 <= self.bit_fraction <= 1.0:
            raise UsageError("bit fraction must lie in [0, 1]")

    @property
    def iterations(self) -> int | None:
        return self.iters if self.iters is not None else DEFAULT_ITERS.get(self.kind)


@dataclass
class Measurement:
    scenario: Scenario
    median_ms: float
    min_ms: float
    max_ms: float
    aux_count: int | None = None
    samples_ms: list[float] = field(default_factory=list, repr=False)

    def row(self) -> list:
        s = self.scenario
        return [s.kind, s.impl, s.n, s.record_bytes, s.reps, f"{self.median_ms:.6f}",
                f"{self.min_ms:.6f}", f"{self.max_ms:.6f}",
                "" if self.aux_count is None else self.aux_count]


# A case turns a scenario into (setup, per_run_divisor, aux).  ``setup()``
# prepares fresh inputs outside the timed region and returns the thunk to time.
Setup = Callable[[], Callable[[], object]]


def _rng(s: Scenario) -> np.random.Generator:
    return np.random.default_rng(s.seed)


@njit(cache=True)
def _linear_rows(data, i, out):
    for t in range(out.shape[0]):
        out[t] = 0
    for j in range(data.shape[0]):
        m = k_equal(U64(j), i)
        for t in range(out.shape[0]):
            out[t] = k_select(m, data[j, t], out[t])


def _case_array(s: Scenario):
    rs = _rng(s)
    lanes = s.record_bytes // 8
    data = rs.integers(0, 1 << 63, (s.n, lanes), dtype=np.uint64)
    ops = s.iterations
    idx = rs.integers(0, s.n, ops).tolist()
    if s.impl == "Unprotected":
        def run():
            acc = 0
            for i in idx:
                acc ^= int(data[i, 0])
            return acc
    elif s.impl == "Linear":
        if lanes == 1:
            buf = InstrumentedBuffer(np.ascontiguousarray(data[:, 0]))

            def run():
                for i in idx:
                    o_array_read(buf, i)
        else:
            out = np.empty(lanes, np.uint64)

            def run():
                for i in idx:
                    _linear_rows(data, U64(i), out)
    else:
        st = oram_init(OramConfig(capacity=s.n, block_bytes=s.record_bytes, rng_seed=s.seed))
        for i in range(s.n):
            oram_access(st, Op.Write, i, data[i])

        def run():
            for i in idx:
                oram_access(st, Op.Read, i)
    return (lambda: run), ops, None


@njit(cache=True)
def _cheap(x):
    return x * U64(3) + U64(1)


@njit(cache=True)
def _expensive(x):
    for _ in range(48):
        x = x * U64(6364136223846793005) + U64(1442695040888963407)
        x ^= x >> U64(29)
    return x


@njit(cache=True)
def _branch_plain(bits):
    acc = U64(0)
    for i in range(bits.shape[0]):
        x = U64(i) ^ acc
        if bits[i]:
            acc += _expensive(x)
        else:
            acc += _cheap(x)
    return acc


@njit(cache=True)
def _branch_manual(bits):
    acc = U64(0)
    for i in range(bits.shape[0]):
        x = U64(i) ^ acc
        m = U64(0) - U64(bits[i])
        acc += k_select(m, _expensive(x), _cheap(x))
    return acc


def secret_bits(n: int, fraction: float, seed: int) -> np.ndarray:
    """``n`` secret bits, each set with probability ``fraction``."""
    return (np.random.default_rng(seed).random(n) < fraction).astype(np.uint8)


def _case_branching(s: Scenario):
    bits = secret_bits(s.n, s.bit_fraction, s.seed)
    fn = _branch_plain if s.impl == "Unprotected" else _branch_manual
    return (lambda: lambda: fn(bits)), 1, None


def _case_sort(s: Scenario):
    rs = _rng(s)
    shape = (s.n,) if s.record_bytes == 8 else (s.n, 2)
    data = rs.integers(0, 1 << 64, shape, dtype=np.uint64)
    if s.impl == "Unprotected":
        return (lambda: lambda: unprotected_sort(data)), 1, None

    def setup():
        buf = InstrumentedBuffer(data.copy())
        return lambda: bitonic_sort(buf)
    return setup, 1, comparator_count(next_pow2(s.n))


def random_kv_store(n_blocks: int, rs: np.random.Generator) -> BlockStore:
    """Blocks of 63 random KV records (keys avoid the reserved all-ones key)."""
    lanes = rs.integers(0, 1 << 63, (n_blocks, KV_PER_BLOCK, 2), dtype=np.uint64)
    return BlockStore.from_blocks(encode_kv_block(lanes[b]) for b in range(n_blocks))


def _load_or(s: Scenario, make):
    return BlockStore.open(s.input_path) if s.input_path else make()


def _case_block_access(s: Scenario):
    rs = _rng(s)
    store = _load_or(s, lambda: random_kv_store(s.n, rs))
    ops = s.iterations
    idx = rs.integers(0, store.count, ops).tolist()
    impl = BlockImpl(s.impl)
    if impl is BlockImpl.Oram:
        store._oram = build_block_oram(store, seed=s.seed)

    def run():
        for i in idx:
            o_block_access(store, i, impl)
    return (lambda: run), ops, None


def _case_block_sort(s: Scenario):
    rs = _rng(s)
    base = _load_or(s, lambda: random_kv_store(s.n, rs))
    if s.impl == "Unprotected":
        def setup():
            st = base.copy()
            return lambda: external_sort(st)
        return setup, 1, None

    def setup():
        st = base.copy()
        return lambda: block_bitonic_sort(st, presort=True)
    return setup, 1, comparator_count(next_pow2(base.count))


def _random_text(rs, n: int) -> bytes:
    return (rs.integers(0, 26, n, dtype=np.uint8) + ord("a")).tobytes()


def _case_edit(s: Scenario):
    rs = _rng(s)
    a, b = _random_text(rs, s.n), _random_text(rs, s.n)
    fn = edit_distance if s.impl == "Unprotected" else o_edit_distance
    return (lambda: lambda: fn(a, b)), 1, None


def random_graph(n: int, rs: np.random.Generator, density: float = 0.3,
                 max_w: int = 100) -> np.ndarray:
    edges = [(u, v, int(rs.integers(1, max_w + 1)))
             for u in range(n) for v in range(n) if u != v and rs.random() < density]
    return dist_matrix(n, edges)


def _case_fw(s: Scenario):
    m = random_graph(s.n, _rng(s))
    fn = floyd_warshall if s.impl == "Unprotected" else o_floyd_warshall
    return (lambda: lambda: fn(m)), 1, None


def _case_wordcount(s: Scenario):
    store = _load_or(s, lambda: gen_word_store(s.n, seed=s.seed))
    aux = None
    if s.impl != "Unprotected":
        aux = 2 * comparator_count(next_pow2(store.count))
    return (lambda: lambda: wordcount(store, s.impl)), 1, aux


def _case_kmeans(s: Scenario):
    store = _load_or(s, lambda: gen_point_store(s.n, k=s.k, seed=s.seed))
    out = {}

    def run():
        out["res"] = kmeans(store, s.k, s.iterations, s.impl, seed=s.seed)
    if s.centroids_path:
        run()
        write_centroids(s.centroids_path, out["res"].centroids)
    return (lambda: run), 1, None


CASES = {
    "ArrayAccess": _case_array,
    "Branching": _case_branching,
    "Sort": _case_sort,
    "BlockAccess": _case_block_access,
    "BlockSort": _case_block_sort,
    "EditDistance": _case_edit,
    "FloydWarshall": _case_fw,
    "WordCount": _case_wordcount,
    "KMeans": _case_kmeans,
}


def run_scenario(s: Scenario) -> Measurement:
    """Warm up once, then time ``s.reps`` runs; returns milliseconds per run (or per access)."""
    s.validate()
    was = recording_enabled()
    set_recording(False)
    try:
        setup, per, aux = CASES[s.kind](s)
        setup()()
        samples = []
        for _ in range(s.reps):
            thunk = setup()
            t0 = time.perf_counter()
            thunk()
            samples.append((time.perf_counter() - t0) * 1e3 / per)
    finally:
        set_recording(was)
    return Measurement(s, statistics.median(samples), min(samples), max(samples), aux, samples)


def emit_csv(ms: list[Measurement], path) -> None:
    """Write the header and one row per measurement; ``path`` may be an open file."""
    if hasattr(path, "write"):
        _write_rows(path, ms)
        return
    with open(path, "w", newline="") as fh:
        _write_rows(fh, ms)


def _write_rows(fh, ms: list[Measurement]) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for m in ms:
        w.writerow(m.row())


# -- obliviousness checker -----------------------------------------------------

class NotInvariant(UsageError):
    """The requested (kind, impl) is not expected to produce identical traces."""


@dataclass
class PairResult:
    index: int
    equal: bool
    divergence: int | None
    events: tuple[int, int]


@dataclass
class ObliviousReport:
    kind: str
    impl: str
    shape: tuple[int, ...]
    pairs: list[PairResult]
    first_traces: tuple[AccessTrace, AccessTrace] | None = None

    @property
    def passed(self) -> bool:
        return all(p.equal for p in self.pairs)

    @property
    def identical(self) -> int:
        return sum(p.equal for p in self.pairs)

    def lines(self) -> list[str]:
        out = [f"{self.kind}-{self.impl} shape={','.join(map(str, self.shape))}: "
               f"{self.identical}/{len(self.pairs)} identical"]
        for p in self.pairs:
            if p.equal:
                out.append(f"  pair {p.index}: ok ({p.events[0]} events)")
            else:
                out.append(f"  pair {p.index}: DIVERGES at event {p.divergence} "
                           f"({p.events[0]} vs {p.events[1]} events)")
        return out


def trace_of(run: Callable[[object], object], inp) -> AccessTrace:
    """Trace of ``run(inp)`` in a fresh recording session."""
    was = recording_enabled()
    set_recording(True)
    try:
        with recording() as rec:
            run(inp)
        return rec.trace()
    finally:
        set_recording(was)


def check_traces(make_input: Callable[[np.random.Generator], object],
                 run: Callable[[object], object], pairs: int, seed: int,
                 kind: str = "custom", impl: str = "", shape: tuple[int, ...] = ()
                 ) -> ObliviousReport:
    """Compare traces of ``run`` over ``pairs`` random input pairs."""
    rs = np.random.default_rng(seed)
    results = []
    keep = None
    for p in range(pairs):
        a = trace_of(run, make_input(rs))
        b = trace_of(run, make_input(rs))
        d = first_divergence(a, b)
        results.append(PairResult(p, d is None, d, (len(a), len(b))))
        if keep is None and (d is not None or p == pairs - 1):
            keep = (a, b)
    return ObliviousReport(kind, impl, shape, results, keep)


_DEFAULT_CHECK_IMPL = {"ArrayAccess": "Linear", "BlockAccess": "Linear", "KMeans": "ManualCMOV"}
_REFUSALS = {
    ("KMeans", "OramHash"): "the buffer manager's cache hits and misses depend on which "
                            "centroids each block touches, so traces differ between inputs; "
                            "use --miss-report to measure that residual leakage",
    ("ArrayAccess", "Oram"): "Path ORAM traces are random paths, identical only in "
                             "distribution; the ORAM tests check leaf uniformity instead",
    ("BlockAccess", "Oram"): "Path ORAM traces are random paths, identical only in "
                             "distribution; the ORAM tests check leaf uniformity instead",
}


def _checkable(kind: str, impl: str | None) -> str:
    if kind not in IMPLS:
        raise UsageError(f"unknown kind {kind!r}; choose from {', '.join(IMPLS)}")
    impl = impl or _DEFAULT_CHECK_IMPL.get(kind, "Manual")
    if impl not in IMPLS[kind]:
        raise UsageError(f"{kind} has no impl {impl!r}")
    if (kind, impl) in _REFUSALS:
        raise NotInvariant(f"{kind}-{impl} is not trace-invariant: {_REFUSALS[(kind, impl)]}")
    if impl == "Unprotected":
        raise NotInvariant(f"{kind}-Unprotected branches on data and is not trace-invariant")
    if kind == "Branching":
        raise NotInvariant("Branching works on registers only; there is no memory trace to check")
    return impl


def _need(shape, k: int, what: str):
    if len(shape) < k or any(x < 1 for x in shape):
        raise UsageError(f"shape for this kind is {what}")


def _random_points(rs, n: int):
    xy = rs.integers(0, 1 << 31, (2, n), dtype=np.uint64).astype(np.uint32)
    return xy[0], xy[1]


def check_oblivious(kind: str, shape, pairs: int = 20, seed: int = 1,
                    impl: str | None = None) -> ObliviousReport:
    """Run a trace-invariant (kind, impl) on random same-shape input pairs."""
    impl = _checkable(kind, impl)
    shape = tuple(int(x) for x in shape)
    if pairs < 1:
        raise UsageError("need at least one pair")
    if kind == "ArrayAccess":
        _need(shape, 1, "n")
        n = shape[0]

        def make(rs):
            return (rs.integers(0, 1 << 63, n, dtype=np.uint64), int(rs.integers(n)),
                    int(rs.integers(n)), int(rs.integers(1 << 63)))

        def run(inp):
            data, i, j, v = inp
            buf = InstrumentedBuffer(data)
            o_array_read(buf, i)
            o_array_write(buf, j, v)
    elif kind == "Sort":
        _need(shape, 1, "n")

        def make(rs):
            return rs.integers(0, 1 << 63, shape[0], dtype=np.uint64)

        def run(data):
            bitonic_sort(InstrumentedBuffer(data))
    elif kind == "BlockAccess":
        _need(shape, 1, "blocks")

        def make(rs):
            return random_kv_store(shape[0], rs).raw, int(rs.integers(shape[0]))

        def run(inp):
            linear_block_access(BlockStore(inp[0]), inp[1])
    elif kind == "BlockSort":
        _need(shape, 1, "blocks")

        def make(rs):
            return random_kv_store(shape[0], rs).raw

        def run(raw):
            block_bitonic_sort(BlockStore(raw))
    elif kind == "EditDistance":
        _need(shape, 2, "len1,len2")

        def make(rs):
            return _random_text(rs, shape[0]), _random_text(rs, shape[1])

        def run(inp):
            o_edit_distance(*inp)
    elif kind == "FloydWarshall":
        _need(shape, 1, "n")

        def make(rs):
            return random_graph(shape[0], rs)

        def run(m):
            o_floyd_warshall(m)
    elif kind == "WordCount":
        _need(shape, 1, "blocks")

        def make(rs):
            return random_full_store(shape[0], rs).raw

        def run(raw):
            wordcount(BlockStore(raw), impl)
    else:  # KMeans-ManualCMOV
        _need(shape, 2, "points,k[,iters]")
        iters = shape[2] if len(shape) > 2 else 1

        def make(rs):
            return _random_points(rs, shape[0])

        def run(pts):
            kmeans(points_to_store(*pts), shape[1], iters, KMImpl.ManualCMOV)
    return check_traces(make, run, pairs, seed, kind, impl, shape)
