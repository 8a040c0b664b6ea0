"""Brute-force reference for the ideal-device limit.

The oracle convolves window counts with exact rational arithmetic and plain
nested loops. It deliberately shares no computation with :mod:`p2msim.array`;
the simulator is expected to reproduce its spike maps exactly when the device
is linear, symmetric, noiseless and leak-free.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from math import gcd

import numpy as np

from .array import ActivationMap, KernelSpec, build_array, run_stream
from .device import DeviceParams, fit_response_poly, sample_device_grid
from .events import EventStream, window_events


@dataclass(frozen=True)
class OracleConfig:
    weights: np.ndarray  # [channel][ky][kx][ON, OFF]
    step: float
    asym: float = 1.0
    v_reset: float = 0.4
    v_th: float = 0.45
    stride: int = 1
    vdd: float = 0.8

    def __post_init__(self):
        w = np.asarray(self.weights)
        if w.ndim != 4 or w.shape[1] != w.shape[2] or w.shape[3] != 2:
            raise ValueError("weights must have shape (channels, k, k, 2)")
        if np.any(np.abs(w) > 1) or self.step <= 0 or not 0 < self.asym <= 1 or self.stride < 1:
            raise ValueError("invalid oracle configuration")


def ideal_conv_threshold(counts, cfg: OracleConfig, window: int = 0) -> ActivationMap:
    counts = np.asarray(counts)
    w = np.asarray(cfg.weights)
    channels, k = w.shape[0], w.shape[1]
    if counts.ndim != 3 or counts.shape[2] != 2:
        raise ValueError("counts must have shape (height, width, 2)")
    if np.any(counts < 0):
        raise ValueError("counts must be non-negative")
    height, width = counts.shape[:2]
    if k > height or k > width:
        raise ValueError("kernel larger than the count grid")
    out_h = (height - k) // cfg.stride + 1
    out_w = (width - k) // cfg.stride + 1

    # exact arithmetic: every voltage term as an integer over one common denominator
    terms = {}
    for c in range(channels):
        for i in range(k):
            for j in range(k):
                for s in range(2):
                    wt = Fraction(float(w[c, i, j, s]))
                    terms[c, i, j, s] = wt * Fraction(cfg.step) * (Fraction(cfg.asym) if wt < 0 else 1)
    fixed = [Fraction(cfg.v_reset), Fraction(cfg.v_th), Fraction(cfg.vdd)]
    denom = 1
    for q in list(terms.values()) + fixed:
        denom = denom * q.denominator // gcd(denom, q.denominator)
    tap = {key: q.numerator * (denom // q.denominator) for key, q in terms.items()}
    v_reset, v_th, hi = (q.numerator * (denom // q.denominator) for q in fixed)

    n = counts.tolist()
    spikes = np.zeros((out_h, out_w, channels), dtype=bool)
    for oy in range(out_h):
        for ox in range(out_w):
            for c in range(channels):
                v = v_reset
                for i in range(k):
                    for j in range(k):
                        cell = n[oy * cfg.stride + i][ox * cfg.stride + j]
                        for s in range(2):
                            v += tap[c, i, j, s] * cell[s]
                v = min(max(v, 0), hi)
                spikes[oy, ox, c] = v > v_th
    return ActivationMap(spikes, window)


@dataclass(frozen=True)
class Counterexample:
    seed: int
    mode: str
    window: int
    site: tuple[int, int]
    channel: int
    simulated: bool
    expected: bool


@dataclass(frozen=True)
class EquivalenceReport:
    passed: bool
    instances: int
    counterexample: Counterexample | None = None

    def summary(self) -> str:
        if self.passed:
            return f"PASS: {self.instances} random instances match the oracle"
        c = self.counterexample
        return (f"FAIL at seed {c.seed}, {c.mode} mode, window {c.window}, site {c.site}, "
                f"channel {c.channel}: simulator spike={c.simulated}, oracle spike={c.expected}")


# Weights are multiples of 1/16 and the step is 2**-9 V, so every achievable
# voltage is v_reset plus a multiple of 2**-13 V. Thresholds sit halfway
# between grid points, which keeps every spike decision far from a tie.
WEIGHT_LEVELS = 16
LINEAR_STEP = 2.0**-9
VOLTAGE_QUANTUM = LINEAR_STEP / WEIGHT_LEVELS


@dataclass(frozen=True, eq=False)
class Instance:
    stream: EventStream
    spec: KernelSpec
    window_length: int


def random_instance(seed: int, max_dim: int = 16, max_count: int = 8, max_channels: int = 8,
                    windows: int = 2, window_length: int = 1000) -> Instance:
    rng = np.random.default_rng(seed)
    k = int(rng.integers(1, 4))
    stride = int(rng.integers(1, 3))
    width = int(rng.integers(k, max_dim + 1))
    height = int(rng.integers(k, max_dim + 1))
    channels = int(rng.integers(1, max_channels + 1))
    w = rng.integers(-WEIGHT_LEVELS, WEIGHT_LEVELS + 1, size=(channels, k, k, 2)) / WEIGHT_LEVELS
    v_th = 0.4 + (int(rng.integers(0, 160)) + 0.5) * VOLTAGE_QUANTUM
    spec = KernelSpec(k, stride, channels, w, v_th)

    xs, ys, ts, ps = [], [], [], []
    for win in range(windows):
        counts = rng.integers(1, max_count + 1, size=(height, width, 2))
        counts *= rng.random((height, width, 2)) < 0.5
        for (y, x, slot), n in np.ndenumerate(counts):
            xs += [x] * n
            ys += [y] * n
            ps += [1 - slot] * n
        ts.append(win * window_length + rng.integers(0, window_length, size=int(counts.sum())))
    t = np.concatenate(ts) if ts else np.zeros(0, np.int64)
    stream = EventStream.from_arrays(width, height, windows * window_length, xs, ys, t, ps)
    return Instance(stream, spec, window_length)


def linear_model(vdd: float = 0.8, step: float = LINEAR_STEP, max_count: int = 8):
    """Response model calibrated on the ideal linear device."""
    p = DeviceParams.linear(vdd, step)
    weights = np.linspace(-1, 1, 2 * WEIGHT_LEVELS + 1)
    grid = sample_device_grid(p, weights, np.arange(max_count + 1), trials=1, seed=0)
    return fit_response_poly(grid)


def equivalence_report(seeds, max_dim: int = 16, max_count: int = 8, max_channels: int = 8,
                       vth_skew: float = 0.0, modes=("transient", "fitted")) -> EquivalenceReport:
    """Cross-check both simulator modes against the oracle over random instances.

    ``vth_skew`` shifts the simulator's threshold only, as an injected fault.
    """
    p = DeviceParams.linear()
    model = linear_model(p.vdd, p.max_step, max_count) if "fitted" in modes else None
    n = 0
    for seed in seeds:
        inst = random_instance(seed, max_dim, max_count, max_channels)
        spec = inst.spec
        sim_spec = KernelSpec(spec.k, spec.stride, spec.channels, spec.weights, spec.v_th + vth_skew)
        array = build_array(inst.stream.width, inst.stream.height, sim_spec)
        cfg = OracleConfig(spec.weights, p.max_step, p.asym, p.v_reset, spec.v_th, spec.stride, p.vdd)
        counts = window_events(inst.stream, inst.window_length)
        expected = [ideal_conv_threshold(g, cfg, i) for i, g in enumerate(counts.windows)]
        for mode in modes:
            res = run_stream(array, inst.stream, mode, inst.window_length, params=p, model=model)
            for got, want in zip(res.maps, expected):
                diff = np.argwhere(got.spikes != want.spikes)
                if len(diff):
                    oy, ox, c = (int(v) for v in diff[0])
                    return EquivalenceReport(False, n + 1, Counterexample(
                        seed, mode, want.window, (oy, ox), c,
                        bool(got.spikes[oy, ox, c]), bool(want.spikes[oy, ox, c])))
        n += 1
    return EquivalenceReport(True, n)
