"""DVS event streams: parsing, serialization, windowing and synthetic stimuli.

Timestamps are integer microseconds throughout; nothing in the event path
uses floating-point time.

Two on-disk formats are supported:

* CSV: header line ``width,height,duration_us`` followed by one
  ``x,y,t_us,polarity`` line per event (polarity 0 = OFF, 1 = ON).
* Packed binary: 16-byte header (``b"NPX1"``, u32 width, u32 height,
  u32 duration_us) followed by 8-byte records (u16 x, u16 y, u24 t_us,
  u8 polarity), all little-endian.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import IntEnum
from typing import Iterator

import numpy as np

MAGIC = b"NPX1"
_HEADER = struct.Struct("<4sIII")
_RECORD = np.dtype([("x", "<u2"), ("y", "<u2"), ("t", "u1", (3,)), ("p", "u1")])
MAX_BINARY_T = (1 << 24) - 1

EVENT_DTYPE = np.dtype([("x", "<u2"), ("y", "<u2"), ("t", "<i8"), ("p", "u1")])

# Slot of each polarity in the trailing axis of count grids and weight tensors.
ON_SLOT = 0
OFF_SLOT = 1


class Polarity(IntEnum):
    OFF = 0
    ON = 1


def polarity_slot(p):
    """Map wire polarity (1 = ON, 0 = OFF) to the count/weight slot index."""
    return 1 - np.asarray(p, dtype=np.int64)


class EventFormatError(ValueError):
    """Malformed or out-of-contract event data.

    ``line`` (CSV, 1-based) or ``offset`` (binary, bytes) locates the
    offending record when known.
    """

    def __init__(self, message: str, line: int | None = None, offset: int | None = None):
        where = ""
        if line is not None:
            where = f"line {line}: "
        elif offset is not None:
            where = f"offset {offset}: "
        super().__init__(where + message)
        self.line = line
        self.offset = offset


@dataclass(frozen=True)
class DvsEvent:
    x: int
    y: int
    t: int
    polarity: Polarity


@dataclass(frozen=True, eq=False)
class EventStream:
    """An ordered batch of events from a ``width`` x ``height`` sensor.

    Events live in a structured numpy array (fields ``x``, ``y``, ``t``,
    ``p``); iterating yields :class:`DvsEvent` objects.
    """

    width: int
    height: int
    duration: int
    events: np.ndarray

    def __post_init__(self):
        ev = np.asarray(self.events)
        if ev.dtype != EVENT_DTYPE:
            ev = ev.astype(EVENT_DTYPE)
        ev.setflags(write=False)
        object.__setattr__(self, "events", ev)
        if self.width < 1 or self.height < 1:
            raise ValueError("sensor dimensions must be positive")
        if self.duration < 0:
            raise ValueError("duration must be non-negative")
        if len(ev):
            if ev["x"].max() >= self.width or ev["y"].max() >= self.height:
                raise ValueError("event coordinate outside sensor bounds")
            if ev["t"].min() < 0:
                raise ValueError("negative timestamp")
            if np.any(np.diff(ev["t"]) < 0):
                raise ValueError("timestamps must be non-decreasing")
            if ev["t"][-1] > self.duration:
                raise ValueError("duration shorter than last timestamp")
            if np.any(ev["p"] > 1):
                raise ValueError("polarity must be 0 or 1")

    @classmethod
    def from_arrays(cls, width, height, duration, x, y, t, p) -> "EventStream":
        """Build a stream from parallel arrays, stably sorting by timestamp."""
        ev = np.empty(len(t), dtype=EVENT_DTYPE)
        ev["x"], ev["y"], ev["t"], ev["p"] = x, y, t, p
        order = np.argsort(ev["t"], kind="stable")
        return cls(int(width), int(height), int(duration), ev[order])

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self) -> Iterator[DvsEvent]:
        for x, y, t, p in self.events.tolist():
            yield DvsEvent(x, y, t, Polarity(p))

    def __eq__(self, other):
        if not isinstance(other, EventStream):
            return NotImplemented
        return (
            (self.width, self.height, self.duration) == (other.width, other.height, other.duration)
            and np.array_equal(self.events, other.events)
        )


@dataclass(frozen=True, eq=False)
class WindowedCounts:
    """Per-window event counts, shape ``(n_windows, height, width, 2)``."""

    window_length: int
    windows: np.ndarray

    def __len__(self) -> int:
        return self.windows.shape[0]

    @property
    def total(self) -> int:
        return int(self.windows.sum())


def _check_bounds(width, height, x, y, t, locate):
    bad = np.flatnonzero((x >= width) | (y >= height))
    if len(bad):
        i = int(bad[0])
        raise EventFormatError(
            f"coordinate ({int(x[i])}, {int(y[i])}) outside {width}x{height} sensor", **locate(i)
        )
    bad = np.flatnonzero(t < 0)
    if len(bad):
        raise EventFormatError(f"negative timestamp {int(t[bad[0]])}", **locate(int(bad[0])))


def _parse_csv(source: bytes) -> EventStream:
    try:
        text = source.decode("ascii")
    except UnicodeDecodeError as exc:
        raise EventFormatError(f"non-ASCII input at byte {exc.start}", offset=exc.start) from None
    lines = text.splitlines()
    header_idx = next((i for i, ln in enumerate(lines) if ln.strip()), None)
    if header_idx is None:
        raise EventFormatError("missing header", line=1)
    try:
        width, height, duration = (int(v) for v in lines[header_idx].split(","))
    except ValueError:
        raise EventFormatError("header must be width,height,duration_us", line=header_idx + 1) from None
    if width < 1 or height < 1 or duration < 0:
        raise EventFormatError("invalid header values", line=header_idx + 1)

    rows, line_no = [], []
    for i in range(header_idx + 1, len(lines)):
        ln = lines[i].strip()
        if not ln:
            continue
        try:
            x, y, t, p = (int(v) for v in ln.split(","))
        except ValueError:
            raise EventFormatError(f"malformed record {ln!r}", line=i + 1) from None
        if p not in (0, 1):
            raise EventFormatError(f"polarity must be 0 or 1, got {p}", line=i + 1)
        if x < 0 or y < 0:
            raise EventFormatError(f"negative coordinate in {ln!r}", line=i + 1)
        rows.append((x, y, t, p))
        line_no.append(i + 1)

    arr = np.array(rows, dtype=np.int64).reshape(-1, 4)
    x, y, t, p = arr.T
    _check_bounds(width, height, x, y, t, lambda i: {"line": line_no[i]})
    if len(t) and t.max() > duration:
        i = int(np.argmax(t))
        raise EventFormatError(f"timestamp {int(t[i])} beyond duration {duration}", line=line_no[i])
    return EventStream.from_arrays(width, height, duration, x, y, t, p)


def _parse_binary(source: bytes) -> EventStream:
    if len(source) < _HEADER.size:
        raise EventFormatError("truncated header", offset=0)
    magic, width, height, duration = _HEADER.unpack_from(source, 0)
    if magic != MAGIC:
        raise EventFormatError(f"bad magic {magic!r}", offset=0)
    if width < 1 or height < 1:
        raise EventFormatError("invalid header dimensions", offset=4)
    body = len(source) - _HEADER.size
    if body % _RECORD.itemsize:
        off = _HEADER.size + (body // _RECORD.itemsize) * _RECORD.itemsize
        raise EventFormatError("truncated record", offset=off)
    rec = np.frombuffer(source, dtype=_RECORD, offset=_HEADER.size)
    x = rec["x"].astype(np.int64)
    y = rec["y"].astype(np.int64)
    tb = rec["t"].astype(np.int64)
    t = tb[:, 0] | (tb[:, 1] << 8) | (tb[:, 2] << 16)
    p = rec["p"].astype(np.int64)

    def locate(i):
        return {"offset": _HEADER.size + i * _RECORD.itemsize}

    bad = np.flatnonzero(p > 1)
    if len(bad):
        raise EventFormatError(f"polarity must be 0 or 1, got {int(p[bad[0]])}", **locate(int(bad[0])))
    _check_bounds(width, height, x, y, t, locate)
    if len(t) and t.max() > duration:
        i = int(np.argmax(t))
        raise EventFormatError(f"timestamp {int(t[i])} beyond duration {duration}", **locate(i))
    return EventStream.from_arrays(width, height, duration, x, y, t, p)


def parse_event_stream(source: bytes, format: str = "csv") -> EventStream:
    """Parse ``source`` in ``"csv"`` or ``"binary"`` format.

    Unsorted input is stably sorted by timestamp.
    """
    if format == "csv":
        return _parse_csv(source)
    if format in ("binary", "bin", "packed-binary"):
        return _parse_binary(source)
    raise ValueError(f"unknown event format {format!r}")


def serialize_event_stream(stream: EventStream, format: str = "csv") -> bytes:
    ev = stream.events
    if format == "csv":
        out = [f"{stream.width},{stream.height},{stream.duration}"]
        out.extend(f"{x},{y},{t},{p}" for x, y, t, p in ev.tolist())
        return ("\n".join(out) + "\n").encode("ascii")
    if format in ("binary", "bin", "packed-binary"):
        if max(stream.width, stream.height) > 0xFFFF + 1:
            raise ValueError("sensor too large for u16 coordinates")
        if stream.duration > 0xFFFFFFFF:
            raise ValueError("duration does not fit in u32")
        if len(ev) and ev["t"][-1] > MAX_BINARY_T:
            raise ValueError(f"timestamp {int(ev['t'][-1])} does not fit in u24")
        rec = np.zeros(len(ev), dtype=_RECORD)
        rec["x"], rec["y"], rec["p"] = ev["x"], ev["y"], ev["p"]
        t = ev["t"]
        rec["t"][:, 0] = t & 0xFF
        rec["t"][:, 1] = (t >> 8) & 0xFF
        rec["t"][:, 2] = (t >> 16) & 0xFF
        head = _HEADER.pack(MAGIC, stream.width, stream.height, stream.duration)
        return head + rec.tobytes()
    raise ValueError(f"unknown event format {format!r}")


def n_windows(duration: int, window_length: int, last_t: int | None = None) -> int:
    """ceil(duration / L), widened to cover an event sitting exactly at ``duration``."""
    n = -(-duration // window_length)
    if last_t is not None:
        n = max(n, last_t // window_length + 1)
    return n


def window_events(stream: EventStream, window_length: int) -> WindowedCounts:
    """Bin events into half-open windows ``[k*L, (k+1)*L)`` per pixel and polarity."""
    if window_length <= 0:
        raise ValueError("window_length must be positive")
    ev = stream.events
    last = int(ev["t"][-1]) if len(ev) else None
    nw = n_windows(stream.duration, window_length, last)
    grid = np.zeros((nw, stream.height, stream.width, 2), dtype=np.int64)
    if len(ev):
        k = ev["t"] // window_length
        np.add.at(grid, (k, ev["y"].astype(np.int64), ev["x"].astype(np.int64), polarity_slot(ev["p"])), 1)
    return WindowedCounts(window_length, grid)


def split_windows(stream: EventStream, window_length: int) -> list[np.ndarray]:
    """Slice the (sorted) event array into per-window chunks, preserving order."""
    if window_length <= 0:
        raise ValueError("window_length must be positive")
    ev = stream.events
    last = int(ev["t"][-1]) if len(ev) else None
    nw = n_windows(stream.duration, window_length, last)
    if nw == 0:
        return []
    edges = np.searchsorted(ev["t"], np.arange(1, nw) * window_length, side="left")
    return np.split(ev, edges)


def synth_events(width: int, height: int, duration: int, mean_rate: float, seed: int) -> EventStream:
    """Poisson per-pixel event counts at ``mean_rate`` events/pixel/ms.

    Timestamps are uniform over ``[0, duration)`` and polarities fair coin
    flips; the output depends only on the arguments.
    """
    if mean_rate < 0:
        raise ValueError("mean_rate must be non-negative")
    rng = np.random.default_rng(seed)
    lam = mean_rate * duration / 1000.0
    counts = rng.poisson(lam, size=(height, width)) if lam > 0 else np.zeros((height, width), np.int64)
    total = int(counts.sum())
    ys, xs = np.divmod(np.repeat(np.arange(width * height), counts.ravel()), width)
    t = rng.integers(0, max(duration, 1), size=total)
    p = rng.integers(0, 2, size=total)
    return EventStream.from_arrays(width, height, duration, xs, ys, t, p)
