"""Behavioral model of a weight transistor charging the kernel capacitor.

Each input event moves the kernel capacitor voltage by a step proportional to
the normalized weight. The step rolls off as the capacitor nears the rail the
weight drives it toward, and negative (pull-down) weights step by ``asym``
times the positive magnitude. Monte-Carlo sampling of this model feeds a
cubic calibration in the single variable ``u = weight * n_events``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm, truncnorm

# clip bound for per-step variation, in units of sigma_frac
CLIP_SIGMAS = 3.0


class DeviceError(ValueError):
    pass


@dataclass(frozen=True)
class DeviceParams:
    """Electrical parameters of the in-pixel MAC; volts unless noted.

    ``knee = 0`` disables the near-rail roll-off (an ideal current source).
    ``leak_rate_max`` is in volts per millisecond for the worst-case kernel;
    ``leak_sign`` is the direction the residual leak drifts the capacitor.
    """

    vdd: float = 0.8
    max_step: float = 0.025
    knee: float = 0.1
    asym: float = 0.9
    sigma_frac: float = 0.05
    leak_rate_max: float = 0.022
    leak_sign: int = -1

    def __post_init__(self):
        half = 0.5 * self.vdd
        if self.vdd <= 0:
            raise DeviceError("vdd must be positive")
        if not 0 < self.max_step < half:
            raise DeviceError("max_step must lie in (0, vdd/2)")
        if not 0 <= self.knee < half:
            raise DeviceError("knee must lie in [0, vdd/2)")
        if not 0 < self.asym <= 1:
            raise DeviceError("asym must lie in (0, 1]")
        if self.sigma_frac < 0 or self.leak_rate_max < 0:
            raise DeviceError("sigma_frac and leak_rate_max must be non-negative")
        if self.leak_sign not in (-1, 1):
            raise DeviceError("leak_sign must be +1 or -1")

    @property
    def v_reset(self) -> float:
        return 0.5 * self.vdd

    @classmethod
    def linear(cls, vdd: float = 0.8, max_step: float = 2.0**-9) -> "DeviceParams":
        """Ideal device: no roll-off, symmetric, noiseless and leak-free."""
        return cls(vdd=vdd, max_step=max_step, knee=0.0, asym=1.0, sigma_frac=0.0, leak_rate_max=0.0)


def ideal_step(w, p: DeviceParams):
    """Linear step for normalized weight ``w`` (scalar or array)."""
    w = np.asarray(w, dtype=float)
    if np.any(np.abs(w) > 1):
        raise DeviceError("normalized weight outside [-1, 1]")
    out = w * p.max_step * np.where(w >= 0, 1.0, p.asym)
    return float(out) if out.ndim == 0 else out


def _roll(headroom, knee):
    if knee == 0:
        return np.ones_like(headroom)
    return np.minimum(1.0, headroom / knee)


def nonlinear_step(w, v, p: DeviceParams):
    """Voltage-dependent step taken from capacitor voltage ``v``.

    Broadcasts over ``w`` and ``v``. The result never carries ``v`` past a rail.
    """
    v = np.asarray(v, dtype=float)
    if np.any(v < 0) or np.any(v > p.vdd):
        raise DeviceError("capacitor voltage outside the rails")
    dv = step_from_base(np.asarray(ideal_step(w, p)), v, p)
    return float(dv) if dv.ndim == 0 else dv


def step_from_base(base, v, p: DeviceParams):
    """Roll off a precomputed linear step ``base`` at voltage ``v``; no validation."""
    headroom = np.where(base > 0, p.vdd - v, v)
    dv = base * _roll(headroom, p.knee)
    return np.clip(v + dv, 0.0, p.vdd) - v


def leak_drift(kernel_sum: float, max_sum: float, duration_us: float, p: DeviceParams) -> float:
    """Magnitude of residual leakage drift after the nulling current source.

    Scales linearly with the kernel's total weight magnitude; the worst case
    (every weight at full scale) drifts ``leak_rate_max`` per millisecond.
    """
    if max_sum <= 0 or not 0 <= kernel_sum <= max_sum * (1 + 1e-12):
        raise DeviceError("kernel weight sum must lie in [0, max_sum]")
    return p.leak_rate_max * min(kernel_sum / max_sum, 1.0) * (duration_us / 1000.0)


def clipped_sigma(sigma_frac: float) -> float:
    """Standard deviation of Gaussian(0, sigma_frac) clipped at 3 sigma."""
    if sigma_frac == 0:
        return 0.0
    a = CLIP_SIGMAS
    # clipping piles the tails onto the bounds rather than discarding them
    tail = 2.0 * norm.sf(a)
    var = truncnorm.var(-a, a) * (1.0 - tail) + a * a * tail
    return sigma_frac * float(np.sqrt(var))


@dataclass(frozen=True, eq=False)
class DeviceSampleGrid:
    """Monte-Carlo samples of total voltage change at each (weight, count) point.

    ``samples`` has shape ``(n_points, trials)``.
    """

    weights: np.ndarray
    counts: np.ndarray
    samples: np.ndarray
    vdd: float

    @property
    def trials(self) -> int:
        return self.samples.shape[1]

    @property
    def u(self) -> np.ndarray:
        return self.weights * self.counts


def transient_trials(w, n, p: DeviceParams, trials: int, rng: np.random.Generator | None):
    """Apply ``n`` sequential steps of weight ``w`` from reset, vectorized.

    ``w`` and ``n`` are 1-D arrays of equal length (one entry per point);
    returns the total voltage change with shape ``(len(w), trials)``.
    """
    w = np.asarray(w, dtype=float)[:, None]
    n = np.asarray(n, dtype=np.int64)[:, None]
    v = np.full((w.shape[0], trials), p.v_reset)
    lim = CLIP_SIGMAS * p.sigma_frac
    for i in range(int(n.max(initial=0))):
        dv = nonlinear_step(w, v, p)
        if rng is not None and p.sigma_frac > 0:
            g = np.clip(rng.normal(0.0, p.sigma_frac, size=v.shape), -lim, lim)
            dv = dv * (1.0 + g)
        v = np.where(n > i, np.clip(v + dv, 0.0, p.vdd), v)
    return v - p.v_reset


def sample_device_grid(p: DeviceParams, weights, event_counts, trials: int, seed: int) -> DeviceSampleGrid:
    """Monte-Carlo simulate every ``(w, n)`` in ``weights x event_counts``."""
    if trials < 1:
        raise DeviceError("trials must be >= 1")
    ww, nn = np.meshgrid(np.asarray(weights, float), np.asarray(event_counts, np.int64), indexing="ij")
    ww, nn = ww.ravel(), nn.ravel()
    if np.any(nn < 0):
        raise DeviceError("event counts must be non-negative")
    rng = np.random.default_rng(seed)
    samples = transient_trials(ww, nn, p, trials, rng)
    return DeviceSampleGrid(ww, nn, samples, p.vdd)


@dataclass(frozen=True)
class ResponseModel:
    """Cubic mean and sigma of voltage change as functions of ``u = w * n``.

    Coefficients are constant-term first. Both polynomials are fitted through
    the origin, so zero input gives exactly zero change.
    """

    mean_coeffs: tuple[float, float, float, float]
    std_coeffs: tuple[float, float, float, float]
    fit_rmse: float
    u_range: tuple[float, float]
    vdd: float = 0.8

    def _check(self, u):
        lo, hi = self.u_range
        tol = 1e-9 * max(1.0, abs(lo), abs(hi))
        if np.any(u < lo - tol) or np.any(u > hi + tol):
            bad = np.asarray(u)[(u < lo - tol) | (u > hi + tol)].ravel()[0]
            raise DeviceError(f"u = {bad:g} outside fitted range [{lo:g}, {hi:g}]")

    def mean(self, u):
        u = np.asarray(u, dtype=float)
        self._check(u)
        return np.polynomial.polynomial.polyval(u, self.mean_coeffs)

    def std(self, u):
        u = np.asarray(u, dtype=float)
        self._check(u)
        return np.maximum(np.polynomial.polynomial.polyval(u, self.std_coeffs), 0.0)


def _fit_through_origin(u, y):
    A = np.stack([u, u**2, u**3], axis=1)
    coef, _, rank, _ = np.linalg.lstsq(A, y, rcond=None)
    if rank < 3:
        raise DeviceError("degenerate calibration grid: cubic fit is rank deficient")
    return (0.0, *map(float, coef))


def fit_response_poly(grid: DeviceSampleGrid) -> ResponseModel:
    """Least-squares cubic fit of per-point mean and sigma over ``u``.

    ``fit_rmse`` is the mean absolute residual of the mean fit, as a fraction
    of vdd.
    """
    u = grid.u
    distinct = np.unique(u)
    if len(distinct) < 8 or distinct.min() >= 0 or distinct.max() <= 0:
        raise DeviceError("calibration grid needs >= 8 distinct u values of both signs")
    means = grid.samples.mean(axis=1)
    stds = grid.samples.std(axis=1, ddof=1) if grid.trials > 1 else np.zeros_like(means)
    mean_c = _fit_through_origin(u, means)
    std_c = _fit_through_origin(u, stds)
    resid = np.polynomial.polynomial.polyval(u, mean_c) - means
    rmse = float(np.mean(np.abs(resid)) / grid.vdd)
    return ResponseModel(mean_c, std_c, rmse, (float(u.min()), float(u.max())), grid.vdd)


def eval_response(m: ResponseModel, w, n, rng: np.random.Generator | None = None):
    """Voltage change for ``n`` events under weight ``w``.

    Without ``rng`` this is the fitted mean. With ``rng`` the value is a
    Gaussian draw around the mean truncated to one fitted sigma either side.
    Broadcasts over ``w`` and ``n``.
    """
    u = np.asarray(w, dtype=float) * np.asarray(n, dtype=float)
    mu = m.mean(u)
    if rng is None:
        return float(mu) if mu.ndim == 0 else mu
    sd = m.std(u)
    z = truncnorm.rvs(-1.0, 1.0, size=mu.shape, random_state=rng)
    out = mu + sd * z
    return float(out) if out.ndim == 0 else out


def expected_sigma(w: float, n: int, p: DeviceParams) -> float:
    """Predicted sigma of the total change after ``n`` steps of weight ``w``.

    Propagates per-step variance through the voltage dependence of later
    steps. The roll-off slope is weighted by the probability that the
    capacitor has already crossed the knee, which keeps the estimate honest
    at steps where the mean trajectory sits right on it.
    """
    s = clipped_sigma(p.sigma_frac)
    v, var = p.v_reset, 0.0
    base = abs(ideal_step(w, p))
    for _ in range(n):
        dv = nonlinear_step(w, v, p)
        slope = 0.0
        if p.knee > 0:
            headroom = p.vdd - v if w > 0 else v
            sd = np.sqrt(var)
            past_knee = norm.cdf((p.knee - headroom) / sd) if sd > 0 else float(headroom < p.knee)
            slope = -base / p.knee * past_knee
        var = var * (1.0 + slope) ** 2 + (dv * s) ** 2
        v = min(max(v + dv, 0.0), p.vdd)
    return float(np.sqrt(var))
