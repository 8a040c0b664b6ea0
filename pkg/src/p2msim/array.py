"""Kernel mapping onto the pixel array and the per-window reset/convolve/threshold pipeline.

Output site ``(oy, ox)`` sees pixels ``(oy*stride + ky, ox*stride + kx)`` for
``0 <= ky, kx < k``; only fully contained receptive fields exist (no padding).
Weight tensors are indexed ``[channel, ky, kx, polarity_slot]`` with slot 0 =
ON and slot 1 = OFF.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .device import (
    CLIP_SIGMAS,
    DeviceParams,
    ResponseModel,
    eval_response,
    ideal_step,
    leak_drift,
    step_from_base,
)
from .events import EVENT_DTYPE, EventStream, polarity_slot, split_windows, window_events


class AreaViolation(ValueError):
    pass


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class AreaBudget:
    """Bottom-die area constants, in micrometres and square micrometres.

    The per-element areas are approximations chosen so that a 3x3 kernel fits
    exactly 128 channels at stride 2 and 32 at stride 1 under a 40 um pixel,
    with capacitors taking about 47% of the array at the stride-2 maximum.
    """

    pixel_pitch: float = 40.0
    cu2cu_pitch: float = 1.0
    pads_per_pixel: int = 2
    stacking_factor: float = 1.0
    a_weight: float = 1.0
    a_cap: float = 23.5
    a_cmp: float = 8.3

    def site_area(self, stride: int) -> float:
        """Bottom-die area available to one output site's channels."""
        pads = self.pads_per_pixel * stride * stride * self.cu2cu_pitch**2
        return (self.pixel_pitch * stride) ** 2 * self.stacking_factor - pads

    def channel_area(self, k: int) -> float:
        return 2 * k * k * self.a_weight + self.a_cap + self.a_cmp

    def capacitor_share(self, k: int, stride: int, channels: int) -> float:
        return channels * self.a_cap / ((self.pixel_pitch * stride) ** 2 * self.stacking_factor)


def max_channels(k: int, stride: int, budget: AreaBudget = AreaBudget()) -> int:
    if k < 1 or stride < 1:
        raise GeometryError("kernel side and stride must be >= 1")
    return max(0, math.floor(budget.site_area(stride) / budget.channel_area(k)))


@dataclass(frozen=True, eq=False)
class KernelSpec:
    k: int
    stride: int
    channels: int
    weights: np.ndarray
    v_th: float = 0.45

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        if self.k < 1 or self.stride < 1 or self.channels < 1:
            raise GeometryError("k, stride and channels must be >= 1")
        if w.shape != (self.channels, self.k, self.k, 2):
            raise GeometryError(f"weights shape {w.shape} != {(self.channels, self.k, self.k, 2)}")
        if np.any(np.abs(w) > 1):
            raise GeometryError("normalized weights must lie in [-1, 1]")
        if self.v_th <= 0:
            raise GeometryError("threshold must be positive")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    def check_threshold(self, vdd: float):
        if not 0 < self.v_th < vdd:
            raise GeometryError(f"threshold {self.v_th} V outside (0, {vdd})")

    def weight_sums(self) -> np.ndarray:
        """Per-channel sum of weight magnitudes (drives leakage)."""
        return np.abs(self.weights).sum(axis=(1, 2, 3))

    @property
    def max_weight_sum(self) -> float:
        return 2.0 * self.k * self.k


def random_kernel(channels: int, k: int = 3, stride: int = 2, v_th: float = 0.45, seed: int = 0,
                  levels: int = 16) -> KernelSpec:
    """Kernel with weights quantized to ``levels`` magnitude steps, for stimuli and tests."""
    rng = np.random.default_rng(seed)
    w = rng.integers(-levels, levels + 1, size=(channels, k, k, 2)) / levels
    return KernelSpec(k, stride, channels, w, v_th)


@dataclass(frozen=True, eq=False)
class PixelArray:
    width: int
    height: int
    spec: KernelSpec
    out_width: int
    out_height: int
    _sites: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.out_height, self.out_width, self.spec.channels)

    def sites_for(self, x: int, y: int):
        """Output sites fed by pixel ``(x, y)`` and the kernel offsets it lands on.

        Returns four int arrays ``(oy, ox, ky, kx)``.
        """
        key = (x, y)
        hit = self._sites.get(key)
        if hit is None:
            k, s = self.spec.k, self.spec.stride
            oxs = np.arange(max(0, -(-(x - k + 1) // s)), min(self.out_width - 1, x // s) + 1)
            oys = np.arange(max(0, -(-(y - k + 1) // s)), min(self.out_height - 1, y // s) + 1)
            oy, ox = (a.ravel() for a in np.meshgrid(oys, oxs, indexing="ij"))
            hit = (oy, ox, y - oy * s, x - ox * s)
            self._sites[key] = hit
        return hit


def build_array(width: int, height: int, spec: KernelSpec, budget: AreaBudget = AreaBudget()) -> PixelArray:
    if spec.k > width or spec.k > height:
        raise GeometryError(f"{spec.k}x{spec.k} kernel larger than {width}x{height} sensor")
    cap = max_channels(spec.k, spec.stride, budget)
    if spec.channels > cap:
        raise AreaViolation(
            f"{spec.channels} channels exceed the area budget of {cap} for k={spec.k}, stride={spec.stride}"
        )
    out_w = (width - spec.k) // spec.stride + 1
    out_h = (height - spec.k) // spec.stride + 1
    return PixelArray(width, height, spec, out_w, out_h)


@dataclass(eq=False)
class KernelState:
    """Kernel capacitor voltages, shape ``(out_height, out_width, channels)``."""

    v_cap: np.ndarray


@dataclass(frozen=True, eq=False)
class ActivationMap:
    spikes: np.ndarray
    window: int = 0

    @property
    def count(self) -> int:
        return int(self.spikes.sum())

    def __eq__(self, other):
        if not isinstance(other, ActivationMap):
            return NotImplemented
        return self.window == other.window and np.array_equal(self.spikes, other.spikes)


def reset_phase(state: KernelState, p: DeviceParams) -> KernelState:
    return KernelState(np.full_like(state.v_cap, p.v_reset))


def fresh_state(array: PixelArray, vdd: float) -> KernelState:
    return KernelState(np.full(array.shape, 0.5 * vdd))


def _event_columns(events):
    if isinstance(events, np.ndarray) and events.dtype == EVENT_DTYPE:
        return (events["x"].astype(np.int64), events["y"].astype(np.int64),
                polarity_slot(events["p"]))
    evs = list(events)
    x = np.array([e.x for e in evs], dtype=np.int64)
    y = np.array([e.y for e in evs], dtype=np.int64)
    return x, y, polarity_slot([int(e.polarity) for e in evs])


def convolve_window_transient(array: PixelArray, events, p: DeviceParams, rng: np.random.Generator | None = None,
                              window_length: int = 1000, state: KernelState | None = None) -> KernelState:
    """Integrate one window event by event on the kernel capacitors.

    ``events`` are applied in the given (timestamp) order. Every output site
    whose receptive field holds the event pixel takes a voltage-dependent step
    for each channel, optionally scaled by a clipped Gaussian ``1 + g``. The
    residual leak is applied once at the end of the window.
    """
    if state is None:
        state = fresh_state(array, p.vdd)
    v = state.v_cap.copy()
    if np.any(v < 0) or np.any(v > p.vdd):
        raise GeometryError("kernel state outside the rails")
    base_tab = ideal_step(array.spec.weights, p)
    lim = CLIP_SIGMAS * p.sigma_frac
    noisy = rng is not None and p.sigma_frac > 0
    xs, ys, slots = _event_columns(events)
    if len(xs) and (xs.min() < 0 or ys.min() < 0 or xs.max() >= array.width or ys.max() >= array.height):
        raise GeometryError("event outside sensor bounds")
    for x, y, slot in zip(xs.tolist(), ys.tolist(), slots.tolist()):
        oy, ox, ky, kx = array.sites_for(x, y)
        if not len(oy):
            continue
        cur = v[oy, ox]
        dv = step_from_base(base_tab[:, ky, kx, slot].T, cur, p)
        if noisy:
            dv = dv * (1.0 + np.clip(rng.normal(0.0, p.sigma_frac, size=dv.shape), -lim, lim))
        v[oy, ox] = np.clip(cur + dv, 0.0, p.vdd)
    if p.leak_rate_max > 0 and window_length > 0:
        sums = array.spec.weight_sums()
        drift = np.array([leak_drift(s, array.spec.max_weight_sum, window_length, p) for s in sums])
        v = np.clip(v + p.leak_sign * drift, 0.0, p.vdd)
    return KernelState(v)


def convolve_window_fitted(array: PixelArray, counts: np.ndarray, m: ResponseModel,
                           rng: np.random.Generator | None = None) -> KernelState:
    """Evaluate one window from per-pixel counts using the calibrated response.

    Each of the ``2*k*k`` (pixel, polarity) taps contributes
    ``eval_response(weight, count)`` independently; the sum is added to the
    reset voltage and clamped to the rails.
    """
    counts = np.asarray(counts)
    if counts.shape != (array.height, array.width, 2):
        raise GeometryError(f"counts shape {counts.shape} != {(array.height, array.width, 2)}")
    spec = array.spec
    k, s = spec.k, spec.stride
    oh, ow = array.out_height, array.out_width
    v = np.full(array.shape, 0.5 * m.vdd)
    for ky in range(k):
        for kx in range(k):
            for slot in (0, 1):
                n = counts[ky:ky + s * (oh - 1) + 1:s, kx:kx + s * (ow - 1) + 1:s, slot]
                w = spec.weights[:, ky, kx, slot]
                v += eval_response(m, w[None, None, :], n[:, :, None], rng)
    return KernelState(np.clip(v, 0.0, m.vdd))


def threshold_phase(state: KernelState, spec: KernelSpec, window: int = 0) -> ActivationMap:
    """Comparator: spike where the capacitor voltage strictly exceeds ``v_th``."""
    return ActivationMap(state.v_cap > spec.v_th, window)


@dataclass(frozen=True)
class RunResult:
    maps: list
    spike_counts: list
    n_sites: int
    n_events: int

    @property
    def total_spikes(self) -> int:
        return int(sum(self.spike_counts))

    @property
    def sparsity(self) -> float:
        """Fraction of (site, channel, window) slots that spiked."""
        if not self.maps:
            return 0.0
        return self.total_spikes / (self.n_sites * len(self.maps))


def window_rng(seed: int | None, window: int) -> np.random.Generator | None:
    """Generator for one window, derived from the run seed alone."""
    if seed is None:
        return None
    return np.random.default_rng([seed, window])


def run_stream(array: PixelArray, stream: EventStream, mode: str = "fitted", window_length: int = 1000,
               params: DeviceParams | None = None, model: ResponseModel | None = None,
               seed: int | None = None) -> RunResult:
    """Reset, convolve and threshold every window; nothing carries across windows.

    ``mode`` is ``"fitted"`` (needs ``model``) or ``"transient"`` (needs
    ``params``). With ``seed`` set, device variation is sampled from a
    per-window generator; without it the run is noiseless.
    """
    if (stream.width, stream.height) != (array.width, array.height):
        raise GeometryError("stream and array sensor dimensions differ")
    maps = []
    if mode == "transient":
        if params is None:
            raise ValueError("transient mode needs DeviceParams")
        array.spec.check_threshold(params.vdd)
        base = fresh_state(array, params.vdd)
        for i, chunk in enumerate(split_windows(stream, window_length)):
            state = convolve_window_transient(array, chunk, params, window_rng(seed, i), window_length,
                                              reset_phase(base, params))
            maps.append(threshold_phase(state, array.spec, i))
    elif mode == "fitted":
        if model is None:
            raise ValueError("fitted mode needs a ResponseModel")
        array.spec.check_threshold(model.vdd)
        counts = window_events(stream, window_length)
        for i, grid in enumerate(counts.windows):
            state = convolve_window_fitted(array, grid, model, window_rng(seed, i))
            maps.append(threshold_phase(state, array.spec, i))
    else:
        raise ValueError(f"unknown mode {mode!r}")
    n_sites = array.out_height * array.out_width * array.spec.channels
    return RunResult(maps, [m.count for m in maps], n_sites, len(stream))


# weight tensor file: 8 little-endian u32 header words, then float32 payload
WEIGHT_MAGIC = b"P2MW"
_WHEADER = struct.Struct("<4s7I")


def save_weights(path, weights: np.ndarray) -> None:
    w = np.asarray(weights, dtype="<f4")
    if w.ndim != 4 or w.shape[3] != 2:
        raise GeometryError("weights must be [channel][ky][kx][polarity]")
    Path(path).write_bytes(_WHEADER.pack(WEIGHT_MAGIC, *w.shape, 0, 0, 0) + w.tobytes())


def load_weights(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _WHEADER.size:
        raise GeometryError(f"{path}: truncated weight header")
    magic, c, ky, kx, pol, *_ = _WHEADER.unpack_from(raw)
    if magic != WEIGHT_MAGIC:
        raise GeometryError(f"{path}: bad weight file magic {magic!r}")
    n = c * ky * kx * pol
    if len(raw) != _WHEADER.size + 4 * n:
        raise GeometryError(f"{path}: payload size does not match header dims")
    w = np.frombuffer(raw, dtype="<f4", offset=_WHEADER.size).reshape(c, ky, kx, pol)
    return w.astype(np.float64)
