import numpy as np
import pytest

from p2msim.array import KernelSpec, build_array, convolve_window_transient, threshold_phase
from p2msim.device import DeviceParams
from p2msim.oracle import (
    VOLTAGE_QUANTUM,
    OracleConfig,
    equivalence_report,
    ideal_conv_threshold,
    random_instance,
)

STEP = 2.0**-9


def test_zero_counts_no_spikes():
    w = np.ones((2, 3, 3, 2))
    m = ideal_conv_threshold(np.zeros((5, 5, 2), int), OracleConfig(w, STEP))
    assert m.count == 0 and m.spikes.shape == (3, 3, 2)


def test_one_tap_spike():
    w = np.zeros((1, 1, 1, 2))
    w[0, 0, 0, 0] = 1.0
    counts = np.zeros((2, 2, 2), int)
    counts[1, 0, 0] = 26  # 26 * 2**-9 V = 50.8 mV lifts 0.4 V past 0.45 V
    m = ideal_conv_threshold(counts, OracleConfig(w, STEP))
    assert m.spikes[:, :, 0].tolist() == [[False, False], [True, False]]
    counts[1, 0, 0] = 25  # 48.8 mV stays below
    assert ideal_conv_threshold(counts, OracleConfig(w, STEP)).count == 0


def test_negative_weights_use_asym_and_clamp():
    w = -np.ones((1, 1, 1, 2))
    counts = np.full((1, 1, 2), 1000)
    cfg = OracleConfig(w, 0.01, asym=0.5, v_th=0.001)
    assert ideal_conv_threshold(counts, cfg).count == 0  # clamped at ground, below 1 mV


def test_against_float_correlation():
    # independent float route, on thresholds half a voltage quantum off any reachable level
    rng = np.random.default_rng(3)
    for _ in range(20):
        k, s = int(rng.integers(1, 4)), int(rng.integers(1, 3))
        h, wd = int(rng.integers(k, 12)), int(rng.integers(k, 12))
        w = rng.integers(-16, 17, (3, k, k, 2)) / 16
        counts = rng.integers(0, 9, (h, wd, 2))
        v_th = 0.4 + (int(rng.integers(0, 160)) + 0.5) * VOLTAGE_QUANTUM
        got = ideal_conv_threshold(counts, OracleConfig(w, STEP, v_th=v_th, stride=s))
        oh, ow = (h - k) // s + 1, (wd - k) // s + 1
        ref = np.zeros((oh, ow, 3), bool)
        for oy in range(oh):
            for ox in range(ow):
                patch = counts[oy * s:oy * s + k, ox * s:ox * s + k]
                v = 0.4 + np.einsum("ijp,cijp->c", patch, w) * STEP
                ref[oy, ox] = np.clip(v, 0, 0.8) > v_th
        assert np.array_equal(got.spikes, ref)


def test_shape_errors():
    w = np.ones((1, 3, 3, 2))
    with pytest.raises(ValueError):
        ideal_conv_threshold(np.zeros((2, 2, 2), int), OracleConfig(w, STEP))
    with pytest.raises(ValueError):
        ideal_conv_threshold(np.zeros((4, 4)), OracleConfig(w, STEP))
    with pytest.raises(ValueError):
        ideal_conv_threshold(-np.ones((4, 4, 2), int), OracleConfig(w, STEP))
    with pytest.raises(ValueError):
        OracleConfig(np.ones((1, 3, 2, 2)), STEP)


def test_random_8x8_matches_transient():
    lin = DeviceParams.linear()
    rng = np.random.default_rng(8)
    w = rng.integers(-16, 17, (4, 3, 3, 2)) / 16
    counts = rng.integers(0, 6, (8, 8, 2))
    spec = KernelSpec(3, 1, 4, w, 0.4 + 30.5 * VOLTAGE_QUANTUM)
    arr = build_array(8, 8, spec)
    ev = []
    for (y, x, slot), n in np.ndenumerate(counts):
        ev += [(x, y, 0, 1 - slot)] * n
    ev = np.array(ev, dtype=[("x", "<u2"), ("y", "<u2"), ("t", "<i8"), ("p", "u1")])
    rng.shuffle(ev)
    sim = threshold_phase(convolve_window_transient(arr, ev, lin), spec)
    assert sim == ideal_conv_threshold(counts, OracleConfig(w, STEP, v_th=spec.v_th))


def test_random_instances_are_in_bounds():
    for seed in range(30):
        inst = random_instance(seed)
        s = inst.stream
        assert s.width <= 16 and s.height <= 16
        assert inst.spec.k in (1, 2, 3) and inst.spec.stride in (1, 2) and inst.spec.channels <= 8


def test_report_modes():
    assert equivalence_report(range(10)).passed
    assert equivalence_report([]).passed and equivalence_report([]).instances == 0
    bad = equivalence_report(range(10), vth_skew=0.003)
    assert not bad.passed
    c = bad.counterexample
    assert c.simulated != c.expected
    assert "FAIL" in bad.summary()
