import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from p2msim.aer import AerGeometry
from p2msim.energy import (
    BASELINE,
    MJ,
    P2M,
    PJ,
    EnergyConsts,
    LayerShape,
    StreamStats,
    backend_energy,
    compare,
    fixed_point_mac_ratio,
    frontend_energy,
    layer_energies,
    n_ac,
    n_read,
    sensing_energy,
)

CONSTS = EnergyConsts()
GEOM = AerGeometry(63, 63, 32, 128, 128)
CONV1 = LayerShape(63, 63, 2, 32, 3, is_first_layer=True, name="conv1")


def test_counts():
    unit = LayerShape(1, 1, 1, 1, 1)
    assert n_ac(unit) == 1 and n_read(unit) == 1
    assert n_ac(CONV1) == 63 * 63 * 9 * 2 * 32 == 2_286_144
    assert n_read(CONV1) == 576
    wide = LayerShape(63, 63, 2, 64, 3)
    assert n_ac(wide) == 2 * n_ac(CONV1)
    assert n_read(LayerShape(5, 9, 2, 32, 3)) == 576


def test_layer_validation():
    with pytest.raises(ValueError):
        LayerShape(0, 1, 1, 1, 1)
    with pytest.raises(ValueError):
        LayerShape(1, 1, 1, 1, 1, s=1.5)
    with pytest.raises(ValueError):
        EnergyConsts(e_ac=-1.0)


def test_frontend_terms():
    assert frontend_energy(0, GEOM, CONSTS, P2M) == pytest.approx(26.588 * MJ)
    assert frontend_energy(0, GEOM, CONSTS, BASELINE) == pytest.approx(26.032 * MJ)
    n = 10_000
    com_base = frontend_energy(n, GEOM, CONSTS, BASELINE) - sensing_energy(n, CONSTS, BASELINE)
    com_p2m = frontend_energy(n, GEOM, CONSTS, P2M) - sensing_energy(n, CONSTS, P2M)
    assert com_base == pytest.approx(4.1 * PJ * n * 15)
    assert com_base / com_p2m == pytest.approx(15 / 12)


def test_analytic_sensing_when_no_lumped_value():
    c = EnergyConsts(e_event=2 * PJ, E_bias=1e-6, E_sens_p2m=None, E_sens_base=None)
    assert sensing_energy(1000, c, P2M) == pytest.approx(2e-9 + 1e-6)


def test_backend_first_layer():
    base = backend_energy([CONV1], 1, CONSTS, BASELINE)
    assert base == pytest.approx(2_286_144 * 1.568 * PJ + 576 * CONSTS.e_read)
    assert 2_286_144 * 1.568 * PJ == pytest.approx(3.585e-6, rel=1e-3)
    assert backend_energy([CONV1], 1, CONSTS, P2M) == 0.0
    assert layer_energies([CONV1], 7, CONSTS, P2M)[0].total == 0.0


def test_mac_ratios():
    assert CONSTS.e_mac / CONSTS.e_ac == pytest.approx(52.27, abs=0.01)
    assert fixed_point_mac_ratio() == pytest.approx(32.0)


NET = [CONV1, LayerShape(63, 63, 32, 64, 3, 0.1, name="conv2"), LayerShape(1, 1, 1024, 10, 1, 0.2, name="fc")]


def test_compare_report():
    cmp = compare(NET, StreamStats(50_000, 10, None, 20_000), CONSTS, GEOM)
    assert cmp.baseline.E_backend > cmp.p2m.E_backend
    assert cmp.first_layer_share == pytest.approx(
        layer_energies(NET, 10, CONSTS, BASELINE)[0].total / cmp.baseline.E_backend)
    for r in (cmp.baseline, cmp.p2m):
        assert r.total == pytest.approx(r.E_frontend + r.E_backend)
        assert r.E_frontend == pytest.approx(r.E_sens + r.E_com)
        assert r.E_backend == pytest.approx(sum(e.total for e in r.layers))
    d = cmp.as_dict()
    assert d["mac_to_ac_ratio"] == pytest.approx(1.568 / 0.03)


def test_zero_events_frontend_ratio_is_sensing_ratio():
    cmp = compare(NET, StreamStats(0, 1), CONSTS, GEOM)
    assert cmp.frontend_ratio == pytest.approx(26.588 / 26.032, rel=1e-12)
    assert cmp.frontend_ratio == pytest.approx(1.021, abs=5e-4)


def test_sparsity_override():
    cmp = compare(NET, StreamStats(0, 1, (1.0, 0.5, 0.5)), CONSTS, GEOM)
    assert cmp.baseline.layers[1].compute == pytest.approx(CONSTS.e_ac * n_ac(NET[1]) * 0.5)
    with pytest.raises(ValueError):
        compare(NET, StreamStats(0, 1, (0.5,)), CONSTS, GEOM)


@given(st.floats(0.01, 100))
def test_homogeneity(alpha):
    stats = StreamStats(12_345, 4, None, 3_000)
    a = compare(NET, stats, CONSTS, GEOM)
    b = compare(NET, stats, CONSTS.scaled(alpha), GEOM)
    for ra, rb in ((a.baseline, b.baseline), (a.p2m, b.p2m)):
        assert rb.total == pytest.approx(alpha * ra.total, rel=1e-9)
        assert rb.E_backend == pytest.approx(alpha * ra.E_backend, rel=1e-9)


@given(st.integers(1, 64), st.integers(1, 64), st.integers(1, 4), st.integers(1, 64), st.floats(0, 1))
def test_backend_strictly_smaller_with_offload(h, c_o, k, c2, s):
    net = [LayerShape(h, h, 2, c_o, k, is_first_layer=True), LayerShape(h, h, c_o, c2, k, s)]
    assert backend_energy(net, 3, CONSTS, P2M) < backend_energy(net, 3, CONSTS, BASELINE)


@given(st.integers(8, 64), st.integers(1, 32), st.floats(0.01, 1))
def test_ratio_at_least_two_when_first_layer_dominates(h, c_o, s):
    first = LayerShape(h, h, 2, c_o, 3, is_first_layer=True)
    rest = [LayerShape(h, h, c_o, c_o, 3, s)]
    T = 2
    f = layer_energies([first] + rest, T, CONSTS, BASELINE)
    assume(f[0].total >= sum(e.total for e in f[1:]))
    cmp = compare([first] + rest, StreamStats(0, T), CONSTS, GEOM)
    assert cmp.backend_ratio >= 2.0
