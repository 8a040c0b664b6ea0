import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from p2msim.device import (
    DeviceError,
    DeviceParams,
    ResponseModel,
    clipped_sigma,
    eval_response,
    expected_sigma,
    fit_response_poly,
    ideal_step,
    leak_drift,
    nonlinear_step,
    sample_device_grid,
    transient_trials,
)

P = DeviceParams()


def ref_step(w, v, vdd=0.8, max_step=0.025, knee=0.1, asym=0.9):
    """Scalar restatement of the device step, for cross-checking."""
    if w == 0:
        return 0.0
    base = w * max_step * (1.0 if w > 0 else asym)
    headroom = (vdd - v) if w > 0 else v
    roll = 1.0 if knee == 0 else min(1.0, headroom / knee)
    return min(max(v + base * roll, 0.0), vdd) - v


def test_ideal_step_examples():
    assert ideal_step(0.0, P) == 0.0
    assert ideal_step(1.0, P) == pytest.approx(0.025)
    assert ideal_step(-0.5, P) == pytest.approx(-0.01125)
    with pytest.raises(DeviceError):
        ideal_step(1.5, P)


def test_nonlinear_step_examples():
    assert nonlinear_step(0.0, 0.3, P) == 0.0
    assert nonlinear_step(1.0, 0.4, P) == pytest.approx(0.025)
    assert nonlinear_step(1.0, 0.75, P) == pytest.approx(0.0125)
    with pytest.raises(DeviceError):
        nonlinear_step(1.0, 0.9, P)


@given(st.floats(-1, 1), st.floats(0, 0.8))
@settings(max_examples=300)
def test_nonlinear_step_matches_reference_and_stays_in_rails(w, v):
    dv = nonlinear_step(w, v, P)
    assert dv == pytest.approx(ref_step(w, v), abs=1e-15)
    assert 0.0 <= v + dv <= 0.8 + 1e-15
    assert abs(dv) <= abs(ideal_step(w, P)) + 1e-15


@given(st.floats(0.01, 1), st.floats(0, 0.79))
def test_step_shrinks_toward_rail(w, v):
    # closer to the rail the weight drives toward means a smaller step
    assert nonlinear_step(w, v, P) >= nonlinear_step(w, min(v + 0.01, 0.8), P) - 1e-15
    assert -nonlinear_step(-w, 0.8 - v, P) >= -nonlinear_step(-w, max(0.8 - v - 0.01, 0.0), P) - 1e-15


def test_leak_examples():
    assert leak_drift(18.0, 18.0, 0, P) == 0.0
    assert leak_drift(18.0, 18.0, 1000, P) == pytest.approx(0.022)
    assert leak_drift(9.0, 18.0, 1000, P) == pytest.approx(0.011)
    with pytest.raises(DeviceError):
        leak_drift(19.0, 18.0, 1000, P)


def test_clipped_sigma_against_quadrature():
    from scipy.integrate import quad

    s = 0.05
    inner = quad(lambda z: z * z * math.exp(-z * z / 2) / math.sqrt(2 * math.pi), -3, 3)[0]
    tails = 2 * 9 * 0.5 * math.erfc(3 / math.sqrt(2))
    assert clipped_sigma(s) == pytest.approx(s * math.sqrt(inner + tails), rel=1e-9)
    assert clipped_sigma(0.0) == 0.0


def test_zero_sigma_trials_identical_and_zero_count():
    p = DeviceParams(sigma_frac=0.0)
    out = transient_trials([0.7, 1.0], [5, 0], p, 20, np.random.default_rng(0))
    assert np.all(out[0] == out[0, 0])
    assert np.all(out[1] == 0.0)


def test_mc_mean_and_sigma_at_half_weight():
    grid = sample_device_grid(P, [0.5], [4], 1000, seed=5)
    ref = 0.0
    v = 0.4
    for _ in range(4):
        dv = ref_step(0.5, v)
        ref += dv
        v += dv
    samples = grid.samples[0]
    assert samples.mean() == pytest.approx(ref, rel=0.01)
    # four independent 5% steps of a quarter of the total each
    assert samples.std(ddof=1) == pytest.approx(0.05 * abs(ref) / math.sqrt(4), rel=0.15)


def test_sample_grid_is_seeded():
    a = sample_device_grid(P, [-1, 0.5], [3, 7], 50, seed=9)
    b = sample_device_grid(P, [-1, 0.5], [3, 7], 50, seed=9)
    assert np.array_equal(a.samples, b.samples)
    assert a.samples.shape == (4, 50)


def test_linear_device_fits_exactly():
    p = DeviceParams.linear(0.8, 0.025)
    grid = sample_device_grid(p, np.linspace(-1, 1, 9), range(9), trials=1, seed=0)
    m = fit_response_poly(grid)
    c0, c1, c2, c3 = m.mean_coeffs
    assert c1 == pytest.approx(0.025, rel=1e-12)
    assert max(abs(c0), abs(c2), abs(c3)) < 1e-9 * p.vdd
    assert m.fit_rmse < 1e-12


def test_default_fit_quality_and_std_at_origin():
    grid = sample_device_grid(P, np.linspace(-1, 1, 21), range(17), 200, seed=1)
    m = fit_response_poly(grid)
    assert m.fit_rmse <= 0.01
    assert m.std(0.0) == pytest.approx(0.0, abs=1e-12)
    assert m.mean(0.0) == 0.0


def test_fit_rejects_degenerate_grid():
    grid = sample_device_grid(P, [0.5], [3], 10, seed=0)
    with pytest.raises(DeviceError):
        fit_response_poly(grid)
    one_sided = sample_device_grid(P, np.linspace(0.1, 1, 10), range(1, 5), 10, seed=0)
    with pytest.raises(DeviceError):
        fit_response_poly(one_sided)


MODEL = ResponseModel((0.0, 0.02, 1e-4, -2e-6), (0.0, 4e-4, 2e-5, 0.0), 0.003, (-16.0, 16.0))


def test_eval_response_deterministic():
    assert eval_response(MODEL, 0.0, 5) == 0.0
    assert eval_response(MODEL, 0.5, 6) == eval_response(MODEL, 0.5, 6)
    assert eval_response(MODEL, 0.5, 6) == pytest.approx(0.02 * 3 + 1e-4 * 9 - 2e-6 * 27)


def test_eval_response_draws_truncated():
    u = 6.0
    rng = np.random.default_rng(2)
    draws = eval_response(MODEL, np.full(10_000, 1.0), u, rng)
    mu, sd = MODEL.mean(u), MODEL.std(u)
    assert np.all(draws >= mu - sd) and np.all(draws <= mu + sd)
    assert draws.mean() == pytest.approx(mu, rel=0.02)
    # truncnorm(-1, 1) has variance 1 - 2*phi(1)/(Phi(1) - Phi(-1))
    phi1 = math.exp(-0.5) / math.sqrt(2 * math.pi)
    var = 1 - 2 * phi1 / math.erf(1 / math.sqrt(2))
    assert draws.std() == pytest.approx(sd * math.sqrt(var), rel=0.05)


def test_eval_response_outside_range():
    with pytest.raises(DeviceError):
        eval_response(MODEL, 1.0, 17)


@pytest.mark.parametrize("w,n", [(1.0, 16), (-1.0, 16), (0.5, 8), (0.8, 12), (-0.3, 5)])
def test_expected_sigma_tracks_monte_carlo(w, n):
    grid = sample_device_grid(P, [w], [n], 4000, seed=13)
    emp = grid.samples[0].std(ddof=1)
    assert expected_sigma(w, n, P) == pytest.approx(emp, rel=0.1)


@pytest.mark.parametrize("kw", [dict(vdd=0), dict(max_step=0.5), dict(knee=0.5), dict(asym=0),
                                dict(sigma_frac=-1), dict(leak_sign=0)])
def test_params_validation(kw):
    with pytest.raises(DeviceError):
        DeviceParams(**kw)
