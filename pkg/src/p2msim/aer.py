"""Address-event readout of thresholded activation maps.

Channels are read one at a time: the channel-select line for channel ``c``
rises (``K+ c``) before its rows are scanned and falls (``K- c``) after, in
ascending channel order, so the channel index travels once per channel in a
header rather than in every event word. Within a channel, requesting rows are
serviced in ascending index order; a serviced row is latched and its spiking
columns are emitted left to right. Every row and column transfer is a
four-phase handshake: request up, acknowledge up, request down, acknowledge
down.

An event word carries only ``(y << x_bits) | x``; there is no polarity bit.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Iterable, NamedTuple

import numpy as np

from .array import ActivationMap, PixelArray


def _ceil_log2(n: int) -> int:
    return max(0, int(n) - 1).bit_length()


class ProtocolError(ValueError):
    def __init__(self, message: str, tick: int):
        super().__init__(f"tick {tick}: {message}")
        self.tick = tick


@dataclass(frozen=True)
class AerGeometry:
    out_width: int
    out_height: int
    channels: int
    sensor_width: int
    sensor_height: int

    @classmethod
    def from_array(cls, array: PixelArray) -> "AerGeometry":
        return cls(array.out_width, array.out_height, array.spec.channels, array.width, array.height)

    @property
    def x_bits(self) -> int:
        return max(1, _ceil_log2(self.out_width))

    @property
    def y_bits(self) -> int:
        return max(1, _ceil_log2(self.out_height))

    @property
    def per_event_bits(self) -> int:
        return self.x_bits + self.y_bits

    @property
    def baseline_bits(self) -> int:
        """Address bits per raw DVS event: x, y and one polarity bit."""
        return _ceil_log2(self.sensor_width) + _ceil_log2(self.sensor_height) + 1

    @property
    def channel_bits(self) -> int:
        return max(1, _ceil_log2(self.channels))

    @property
    def count_bits(self) -> int:
        return max(1, (self.out_width * self.out_height).bit_length())


@dataclass(frozen=True)
class AerWord:
    channel: int
    x: int
    y: int
    packed: int


class HandshakeEvent(NamedTuple):
    tick: int
    signal: str
    index: int


# handshake edges; "+" is the rising edge and "-" the falling edge
SIGNALS = ("RR+", "RA+", "CR+", "CA+", "RR-", "RA-", "CR-", "CA-")
CHANNEL_SELECT = ("K+", "K-")


class BitsSaved(NamedTuple):
    per_event_bits: int
    baseline_bits: int
    savings: int


def bits_saved(geometry: AerGeometry) -> BitsSaved:
    per, base = geometry.per_event_bits, geometry.baseline_bits
    return BitsSaved(per, base, base - per)


def encode_address(x: int, y: int, geometry: AerGeometry) -> int:
    if not (0 <= x < geometry.out_width and 0 <= y < geometry.out_height):
        raise ValueError(f"site ({x}, {y}) outside {geometry.out_width}x{geometry.out_height} map")
    return (y << geometry.x_bits) | x


def decode_word(packed: int, geometry: AerGeometry) -> tuple[int, int]:
    if not 0 <= packed < (1 << geometry.per_event_bits):
        raise ValueError(f"packed word {packed} wider than {geometry.per_event_bits} bits")
    x = packed & ((1 << geometry.x_bits) - 1)
    y = packed >> geometry.x_bits
    if x >= geometry.out_width or y >= geometry.out_height:
        raise ValueError(f"decoded site ({x}, {y}) outside {geometry.out_width}x{geometry.out_height} map")
    return x, y


def _check_map(amap: ActivationMap, geometry: AerGeometry):
    want = (geometry.out_height, geometry.out_width, geometry.channels)
    if amap.spikes.shape != want:
        raise ValueError(f"map shape {amap.spikes.shape} does not match geometry {want}")


def encode_window(amap: ActivationMap, geometry: AerGeometry) -> tuple[list[AerWord], list[HandshakeEvent]]:
    """Serialize one activation map into event words and the handshake trace."""
    _check_map(amap, geometry)
    words: list[AerWord] = []
    trace: list[HandshakeEvent] = []

    def emit(signal, index):
        trace.append(HandshakeEvent(len(trace), signal, index))

    spikes = amap.spikes
    for c in range(geometry.channels):
        plane = spikes[:, :, c]
        if not plane.any():
            continue
        emit("K+", c)
        for y in np.flatnonzero(plane.any(axis=1)).tolist():
            emit("RR+", y)
            emit("RA+", y)
            for x in np.flatnonzero(plane[y]).tolist():
                emit("CR+", x)
                emit("CA+", x)
                words.append(AerWord(c, x, y, encode_address(x, y, geometry)))
                emit("CR-", x)
                emit("CA-", x)
            emit("RR-", y)
            emit("RA-", y)
        emit("K-", c)
    return words, trace


def replay_trace(trace: Iterable[HandshakeEvent], geometry: AerGeometry, window: int = 0) -> ActivationMap:
    """Rebuild the activation map implied by a handshake trace, enforcing the protocol.

    A site is recorded when its column acknowledge rises. Ticks number the
    edges from 0 with no gaps, so a lost or repeated edge is visible even
    when the remaining handshake is well formed. Raises
    :class:`ProtocolError` on out-of-order edges, rows or columns serviced
    out of ascending order, a site serviced twice in one channel scan, or a
    transaction left open at the end.
    """
    spikes = np.zeros((geometry.out_height, geometry.out_width, geometry.channels), dtype=bool)
    channel, last_channel = None, -1
    row = row_phase = None
    col = col_phase = None
    last_row = last_col = -1
    tick = 0
    for tick, (stamp, sig, i) in enumerate(trace):
        def fail(msg):
            raise ProtocolError(f"{sig} {i}: {msg}", tick)

        if stamp != tick:
            fail(f"tick {stamp} where {tick} expected (lost or repeated edge)")
        if sig == "K+":
            if channel is not None:
                fail(f"channel {channel} still selected")
            if not last_channel < i < geometry.channels:
                fail("channel scan must ascend within range")
            channel = last_channel = i
            last_row = -1
        elif sig == "K-":
            if channel != i:
                fail("deselect of a channel that is not selected")
            if row is not None:
                fail(f"channel released while row {row} active")
            if last_row < 0:
                fail("channel selected with no row serviced")
            channel = None
        elif sig == "RR+":
            if channel is None:
                fail("row request before any channel select")
            if row is not None:
                fail(f"row {row} still active")
            if i == last_row:
                fail(f"row {i} serviced twice in channel {channel}")
            if not last_row < i < geometry.out_height:
                fail("rows must be serviced in ascending order")
            row, row_phase = i, "req"
            last_row, last_col = i, -1
        elif sig == "RA+":
            if row != i or row_phase != "req":
                fail("acknowledge without pending request")
            row_phase = "ack"
        elif sig == "CR+":
            if row_phase != "ack":
                fail("column request outside an acknowledged row")
            if col is not None:
                fail(f"column {col} still active")
            if i == last_col:
                fail(f"site ({i}, {row}) serviced twice in channel {channel}")
            if not last_col < i < geometry.out_width:
                fail("columns must be serviced in ascending order")
            col, col_phase = i, "req"
            last_col = i
        elif sig == "CA+":
            if col != i or col_phase != "req":
                fail("acknowledge without pending request")
            if spikes[row, i, channel]:
                fail(f"site ({i}, {row}) serviced twice in channel {channel}")
            spikes[row, i, channel] = True
            col_phase = "ack"
        elif sig == "CR-":
            if col != i or col_phase != "ack":
                fail("request released before acknowledge")
            col_phase = "rel"
        elif sig == "CA-":
            if col != i or col_phase != "rel":
                fail("acknowledge released without request release")
            col = col_phase = None
        elif sig == "RR-":
            if row != i or row_phase != "ack":
                fail("request released before acknowledge")
            if col is not None:
                fail(f"row released while column {col} active")
            row_phase = "rel"
        elif sig == "RA-":
            if row != i or row_phase != "rel":
                fail("acknowledge released without request release")
            row = row_phase = None
        else:
            fail("unknown signal")
    if channel is not None or row is not None or col is not None:
        raise ProtocolError("trace ends with an open transaction (missing release)", tick + 1)
    return ActivationMap(spikes, window)


def format_trace(trace: Iterable[HandshakeEvent]) -> str:
    return "".join(f"{ev.tick} {ev.signal} {ev.index}\n" for ev in trace)


def parse_trace(text: str) -> list[HandshakeEvent]:
    out = []
    for n, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 3 or parts[1] not in SIGNALS + CHANNEL_SELECT:
            raise ValueError(f"trace line {n}: expected 'tick signal index', got {line!r}")
        out.append(HandshakeEvent(int(parts[0]), parts[1], int(parts[2])))
    return out


# dump file: header, then per window a fixed header and an LSB-first bit stream
DUMP_MAGIC = b"AER1"
_DUMP_HEADER = struct.Struct("<4s5HI")
_WINDOW_HEADER = struct.Struct("<IHI")


def _pack_window(words: list[AerWord], geometry: AerGeometry) -> bytes:
    acc, nbits = 0, 0

    def put(value, width):
        nonlocal acc, nbits
        acc |= value << nbits
        nbits += width

    by_channel = {}
    for wd in words:
        by_channel.setdefault(wd.channel, []).append(wd.packed)
    for c in range(geometry.channels):
        packed = by_channel.get(c, [])
        put(c, geometry.channel_bits)
        put(len(packed), geometry.count_bits)
        for p in packed:
            put(p, geometry.per_event_bits)
    return acc.to_bytes((nbits + 7) // 8, "little")


def write_aer_dump(windows: list[tuple[int, list[AerWord]]], geometry: AerGeometry) -> bytes:
    g = geometry
    out = [_DUMP_HEADER.pack(DUMP_MAGIC, g.out_width, g.out_height, g.channels,
                             g.sensor_width, g.sensor_height, len(windows))]
    for index, words in windows:
        payload = _pack_window(words, geometry)
        out.append(_WINDOW_HEADER.pack(index, geometry.channels, len(payload)))
        out.append(payload)
    return b"".join(out)


def read_aer_dump(data: bytes) -> tuple[AerGeometry, list[tuple[int, list[AerWord]]]]:
    if len(data) < _DUMP_HEADER.size:
        raise ValueError("truncated AER dump header")
    magic, ow, oh, ch, sw, sh, n = _DUMP_HEADER.unpack_from(data)
    if magic != DUMP_MAGIC:
        raise ValueError(f"bad AER dump magic {magic!r}")
    g = AerGeometry(ow, oh, ch, sw, sh)
    pos = _DUMP_HEADER.size
    windows = []
    for _ in range(n):
        if pos + _WINDOW_HEADER.size > len(data):
            raise ValueError("truncated AER window header")
        index, channels, size = _WINDOW_HEADER.unpack_from(data, pos)
        pos += _WINDOW_HEADER.size
        if channels != ch or pos + size > len(data):
            raise ValueError("corrupt AER window header")
        acc = int.from_bytes(data[pos:pos + size], "little")
        pos += size
        words, off = [], 0

        def take(width):
            nonlocal off
            v = (acc >> off) & ((1 << width) - 1)
            off += width
            return v

        for expected in range(channels):
            c = take(g.channel_bits)
            if c != expected:
                raise ValueError(f"window {index}: channel header {c}, expected {expected}")
            for _ in range(take(g.count_bits)):
                packed = take(g.per_event_bits)
                x, y = decode_word(packed, g)
                words.append(AerWord(c, x, y, packed))
        windows.append((index, words))
    if pos != len(data):
        raise ValueError("trailing bytes after last AER window")
    return g, windows
