"""Instrumented memory substrate.

Every element touch on an :class:`InstrumentedBuffer` is appended to the
owning :class:`Recorder` as a packed 64-bit event::

    bit 62       write flag (0 = read)
    bits 40..61  region id
    bits 0..39   element offset

Compiled kernels receive a buffer's :attr:`InstrumentedBuffer.tag` (the
pre-shifted region id, or -1 when not recording) together with an event
log array and append packed events themselves, see :func:`emit_read`,
:func:`emit_write` and :func:`kernel_log`.  The element width of each event is a property of the
region and is resolved when a trace is materialised.
"""

from __future__ import annotations

import contextlib
import enum
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np
from numba import njit

REGION_SHIFT = 40
WRITE_FLAG = 1 << 62
OFFSET_MASK = (1 << REGION_SHIFT) - 1
REGION_MASK = (1 << 22) - 1
DEFAULT_EVENT_CAP = 10**8

_recording_enabled = True
_active: list["Recorder"] = []


class TraceCapExceeded(RuntimeError):
    """Raised when a recorder grows past its configured event cap."""


class Kind(enum.Enum):
    Read = "R"
    Write = "W"


@dataclass(frozen=True)
class AccessEvent:
    kind: Kind
    region: int
    offset: int
    width: int

    def line(self) -> str:
        return f"{self.kind.value} {self.region} {self.offset} {self.width}"


class AccessTrace:
    """Ordered, immutable sequence of access events.

    Stored packed: ``codes`` holds one int64 per event and ``widths`` maps
    region id to element width.
    """

    __slots__ = ("codes", "widths")

    def __init__(self, codes: np.ndarray | None = None, widths: Sequence[int] = ()):
        self.codes = np.zeros(0, np.int64) if codes is None else np.asarray(codes, np.int64)
        self.widths = tuple(int(w) for w in widths)

    @classmethod
    def from_events(cls, events: Sequence[AccessEvent]) -> "AccessTrace":
        widths: dict[int, int] = {}
        codes = np.empty(len(events), np.int64)
        for n, ev in enumerate(events):
            if widths.setdefault(ev.region, ev.width) != ev.width:
                raise ValueError(f"region {ev.region} used with two widths")
            codes[n] = _pack(ev.kind is Kind.Write, ev.region, ev.offset)
        table = [0] * (max(widths) + 1 if widths else 0)
        for r, w in widths.items():
            table[r] = w
        return cls(codes, table)

    def __len__(self) -> int:
        return len(self.codes)

    def __getitem__(self, i: int) -> AccessEvent:
        return self._decode(int(self.codes[i]))

    def __iter__(self) -> Iterator[AccessEvent]:
        for c in self.codes.tolist():
            yield self._decode(c)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, AccessTrace):
            return NotImplemented
        return trace_equal(self, other)

    def __repr__(self) -> str:
        return f"AccessTrace({len(self)} events)"

    def _decode(self, code: int) -> AccessEvent:
        region = (code >> REGION_SHIFT) & REGION_MASK
        kind = Kind.Write if code & WRITE_FLAG else Kind.Read
        return AccessEvent(kind, region, code & OFFSET_MASK, self.widths[region])

    def regions(self) -> np.ndarray:
        return (self.codes >> REGION_SHIFT) & REGION_MASK

    def offsets(self) -> np.ndarray:
        return self.codes & OFFSET_MASK

    def is_write(self) -> np.ndarray:
        return (self.codes & WRITE_FLAG) != 0

    def event_widths(self) -> np.ndarray:
        table = np.asarray(self.widths, np.int64)
        return table[self.regions()] if len(self) else np.zeros(0, np.int64)

    def count(self, region: int | None = None, kind: Kind | None = None) -> int:
        sel = np.ones(len(self), bool)
        if region is not None:
            sel &= self.regions() == region
        if kind is not None:
            sel &= self.is_write() == (kind is Kind.Write)
        return int(sel.sum())

    def dump(self, fh) -> None:
        """Write one ``R|W <region> <offset> <width>`` line per event."""
        if not len(self):
            return
        kinds = np.where(self.is_write(), "W", "R")
        cols = zip(kinds.tolist(), self.regions().tolist(), self.offsets().tolist(),
                   self.event_widths().tolist())
        fh.writelines(f"{k} {r} {o} {w}\n" for k, r, o, w in cols)

    @classmethod
    def load(cls, fh) -> "AccessTrace":
        events = []
        for line in fh:
            if not line.strip():
                continue
            k, r, o, w = line.split()
            events.append(AccessEvent(Kind(k), int(r), int(o), int(w)))
        return cls.from_events(events)


def _pack(write: bool, region: int, offset: int) -> int:
    return (WRITE_FLAG if write else 0) | (region << REGION_SHIFT) | offset


def trace_equal(a: AccessTrace, b: AccessTrace) -> bool:
    return first_divergence(a, b) is None


def first_divergence(a: AccessTrace, b: AccessTrace) -> int | None:
    """Index of the first differing event, or None if the traces are equal."""
    n = min(len(a), len(b))
    if n:
        diff = a.codes[:n] != b.codes[:n]
        wa, wb = a.event_widths()[:n], b.event_widths()[:n]
        diff |= wa != wb
        if diff.any():
            return int(np.argmax(diff))
    if len(a) != len(b):
        return n
    return None


def page_project(t: AccessTrace, page_bytes: int) -> AccessTrace:
    """Map each event to the page holding it and collapse consecutive repeats."""
    if page_bytes <= 0:
        raise ValueError("page_bytes must be positive")
    if not len(t):
        return AccessTrace(None, t.widths)
    pages = t.offsets() * t.event_widths() // page_bytes
    codes = (t.codes & ~OFFSET_MASK) | pages
    keep = np.ones(len(codes), bool)
    keep[1:] = codes[1:] != codes[:-1]
    return AccessTrace(codes[keep], t.widths)


class Recorder:
    """A trace session: hands out region ids and accumulates events."""

    def __init__(self, cap: int = DEFAULT_EVENT_CAP):
        self.cap = cap
        self._widths: list[int] = []
        self._chunks: list[np.ndarray] = []
        self._pending: list[int] = []
        self._n = 0

    def __len__(self) -> int:
        return self._n

    def new_region(self, width: int) -> int:
        rid = len(self._widths)
        if rid > REGION_MASK:
            raise TraceCapExceeded("too many regions in one session")
        self._widths.append(int(width))
        return rid

    def _grow(self, n: int) -> None:
        self._n += n
        if self._n > self.cap:
            raise TraceCapExceeded(f"trace exceeded cap of {self.cap} events")

    def append(self, code: int) -> None:
        self._grow(1)
        self._pending.append(code)

    def extend(self, codes: np.ndarray) -> None:
        if not len(codes):
            return
        self._flush_pending()
        self._grow(len(codes))
        self._chunks.append(np.asarray(codes, np.int64))

    def _flush_pending(self) -> None:
        if self._pending:
            self._chunks.append(np.asarray(self._pending, np.int64))
            self._pending = []

    def trace(self) -> AccessTrace:
        self._flush_pending()
        if len(self._chunks) > 1:
            self._chunks = [np.concatenate(self._chunks)]
        codes = self._chunks[0] if self._chunks else None
        return AccessTrace(codes, self._widths)

    def clear(self) -> None:
        self._chunks, self._pending, self._n = [], [], 0


@contextlib.contextmanager
def recording(cap: int = DEFAULT_EVENT_CAP) -> Iterator[Recorder]:
    """Open a trace session; buffers created inside it record into it."""
    rec = Recorder(cap)
    _active.append(rec)
    try:
        yield rec
    finally:
        _active.remove(rec)


def current_recorder() -> Recorder | None:
    return _active[-1] if _active else None


def set_recording(enabled: bool) -> None:
    """Global switch; when off no buffer records regardless of its own flag."""
    global _recording_enabled
    _recording_enabled = bool(enabled)


def recording_enabled() -> bool:
    return _recording_enabled


class InstrumentedBuffer:
    """A numpy array whose element touches are recorded.

    Elements are indexed along the first axis; ``elem_width`` is the byte
    size of one element (a row for 2-D data).
    """

    def __init__(self, data, elem_width: int | None = None, recorder: Recorder | None = None,
                 dtype=np.uint64):
        arr = np.array(data, dtype=dtype) if not isinstance(data, np.ndarray) else data
        self.data = arr
        self.elem_width = int(elem_width if elem_width is not None
                              else arr.itemsize * int(np.prod(arr.shape[1:], dtype=np.int64)))
        self.recorder = recorder if recorder is not None else current_recorder()
        self.region = self.recorder.new_region(self.elem_width) if self.recorder is not None else -1
        self.recording = True

    def __len__(self) -> int:
        return self.data.shape[0]

    def __repr__(self) -> str:
        return f"InstrumentedBuffer(region={self.region}, len={len(self)}, width={self.elem_width})"

    @property
    def tag(self) -> int:
        """Pre-shifted region id for compiled kernels, -1 when not recording."""
        if self.recorder is None or not self.recording or not _recording_enabled:
            return -1
        return self.region << REGION_SHIFT

    def _check(self, i: int) -> int:
        i = int(i)
        if not 0 <= i < len(self):
            raise IndexError(f"index {i} out of range for buffer of length {len(self)}")
        return i

    def read(self, i: int):
        i = self._check(i)
        tag = self.tag
        if tag >= 0:
            self.recorder.append(tag | i)
        return self.data[i]

    def write(self, i: int, v) -> None:
        i = self._check(i)
        tag = self.tag
        if tag >= 0:
            self.recorder.append(tag | WRITE_FLAG | i)
        self.data[i] = v

    def touch(self, offsets, write: bool = False) -> None:
        """Record accesses at ``offsets`` (in order) without moving data."""
        tag = self.tag
        if tag < 0:
            return
        offs = np.asarray(offsets, np.int64)
        if len(offs) and (offs.min() < 0 or offs.max() >= len(self)):
            raise IndexError("offset out of range")
        self.recorder.extend(tag | (WRITE_FLAG if write else 0) | offs)

    def tolist(self) -> list:
        return self.data.tolist()


def buf_read(buf: InstrumentedBuffer, i: int):
    return buf.read(i)


def buf_write(buf: InstrumentedBuffer, i: int, v) -> None:
    buf.write(i, v)


# -- compiled-kernel side -------------------------------------------------
#
# A kernel log is an int64 array: slot 0 counts emitted events, events
# follow from slot 1.  Callers size it from the kernel's public shape;
# emitting past the end is detected after the call.

_NO_LOG = np.zeros(1, np.int64)


@njit(inline="always")
def emit_read(log, tag, offset):
    if tag >= 0:
        p = log[0]
        if p + 1 < log.shape[0]:
            log[p + 1] = tag | offset
        log[0] = p + 1


@njit(inline="always")
def emit_write(log, tag, offset):
    if tag >= 0:
        p = log[0]
        if p + 1 < log.shape[0]:
            log[p + 1] = tag | 0x4000000000000000 | offset
        log[0] = p + 1


@njit(inline="always")
def emit_exchange(log, tag, i, j):
    """R i, R j, W i, W j in one step.

    Emitting the four events through one branch keeps hot compare-exchange
    loops free of the reference-count traffic separate calls can leave.
    """
    if tag >= 0:
        p = log[0]
        if p + 4 < log.shape[0]:
            log[p + 1] = tag | i
            log[p + 2] = tag | j
            log[p + 3] = tag | 0x4000000000000000 | i
            log[p + 4] = tag | 0x4000000000000000 | j
        log[0] = p + 4


class EventLogOverflow(RuntimeError):
    """A kernel emitted more events than its declared shape allows."""


def open_log(capacity: int, *bufs: InstrumentedBuffer | None):
    """Return ``(log, recorder)`` for one kernel call.

    ``capacity`` is the number of events the call emits at most.  All
    recording buffers must share one recorder; when none is recording the
    shared dummy log and ``None`` are returned.
    """
    rec = None
    for b in bufs:
        if b is not None and b.tag >= 0:
            if rec is not None and b.recorder is not rec:
                raise ValueError("buffers passed to one kernel belong to different recorders")
            rec = b.recorder
    if rec is None:
        return _NO_LOG, None
    log = np.empty(int(capacity) + 1, np.int64)
    log[0] = 0
    return log, rec


def close_log(log: np.ndarray, rec: Recorder | None) -> None:
    if rec is None:
        return
    n = int(log[0])
    if n > len(log) - 1:
        raise EventLogOverflow(f"kernel emitted {n} events, declared at most {len(log) - 1}")
    rec.extend(log[1:n + 1].copy())


@contextlib.contextmanager
def kernel_log(capacity: int, *bufs: InstrumentedBuffer | None):
    """Context-manager form of :func:`open_log` / :func:`close_log`."""
    log, rec = open_log(capacity, *bufs)
    yield log
    close_log(log, rec)


def tag_of(buf: InstrumentedBuffer | None) -> int:
    return -1 if buf is None else buf.tag
