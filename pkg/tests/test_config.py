import numpy as np
import pytest

from p2msim.array import save_weights
from p2msim.config import (
    ConfigError,
    device_from_config,
    energy_from_config,
    format_kv,
    kernel_from_config,
    load_config,
    network_from_config,
    parse_kv,
    read_model,
    shipped_config,
    write_model,
)
from p2msim.device import DeviceParams, ResponseModel
from p2msim.energy import MJ, PJ


def test_shipped_energy_constants():
    c = energy_from_config(load_config(shipped_config("energy_22nm.cfg")))
    assert c.E_sens_p2m == pytest.approx(26.588 * MJ)
    assert c.E_sens_base == pytest.approx(26.032 * MJ)
    assert c.e_comm == pytest.approx(4.1 * PJ)
    assert c.e_mac == pytest.approx(1.568 * PJ) and c.e_ac == pytest.approx(0.03 * PJ)


def test_shipped_network_includes_constants():
    cp = load_config(shipped_config("dvs_gesture.cfg"))
    layers, T, extra = network_from_config(cp)
    assert [l.name for l in layers] == ["conv1", "conv2", "conv3", "conv4", "fc1", "fc2"]
    assert layers[0].is_first_layer and not any(l.is_first_layer for l in layers[1:])
    assert T == 6000 and extra["sensor_width"] == "128"
    assert energy_from_config(cp).e_mac == pytest.approx(1.568 * PJ)
    spec = kernel_from_config(cp, seed=3)
    assert (spec.k, spec.stride, spec.channels) == (3, 2, 32)


def test_include_override_and_cycle(tmp_path):
    (tmp_path / "base.cfg").write_text("[device]\nvdd = 0.8\nknee = 0.1\n")
    (tmp_path / "top.cfg").write_text("[config]\ninclude = base.cfg\n[device]\nknee = 0.05\n")
    p = device_from_config(load_config(tmp_path / "top.cfg"))
    assert p.knee == 0.05 and p.vdd == 0.8
    (tmp_path / "a.cfg").write_text("[config]\ninclude = b.cfg\n")
    (tmp_path / "b.cfg").write_text("[config]\ninclude = a.cfg\n")
    with pytest.raises(ConfigError, match="cycle"):
        load_config(tmp_path / "a.cfg")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.cfg")


def test_bad_values(tmp_path):
    (tmp_path / "x.cfg").write_text("[energy]\ne_ac_pJ = lots\n")
    with pytest.raises(ConfigError):
        energy_from_config(load_config(tmp_path / "x.cfg"))
    (tmp_path / "y.cfg").write_text("[network]\nlayers = a\n")
    with pytest.raises(ConfigError):
        network_from_config(load_config(tmp_path / "y.cfg"))


def test_kernel_weights_file(tmp_path):
    w = np.random.default_rng(0).uniform(-1, 1, (4, 3, 3, 2)).astype(np.float32)
    save_weights(tmp_path / "k.bin", w)
    (tmp_path / "k.cfg").write_text("[kernel]\nk = 3\nstride = 1\nchannels = 4\nweights = k.bin\n")
    spec = kernel_from_config(load_config(tmp_path / "k.cfg"))
    assert np.array_equal(spec.weights, w.astype(np.float64))


def test_model_round_trip(tmp_path):
    m = ResponseModel((0.0, 0.0239, 1.03e-4, -3.1e-6), (0.0, 3.5e-5, 2.7e-5, -2.4e-7), 0.003, (-16.0, 16.0), 0.8)
    p = DeviceParams(knee=0.08)
    write_model(tmp_path / "m.cfg", m, p, {"trials": 10})
    m2, p2 = read_model(tmp_path / "m.cfg")
    assert m2 == m and p2 == p
    (tmp_path / "bad.cfg").write_text("[model]\nformat = other\n")
    with pytest.raises(ConfigError):
        read_model(tmp_path / "bad.cfg")


def test_kv_round_trip():
    items = [("a", 1), ("b", 0.1), ("c", [1, 2, 3]), ("d", "x y")]
    assert parse_kv(format_kv(items)) == {"a": "1", "b": "0.1", "c": "1 2 3", "d": "x y"}
    with pytest.raises(ConfigError):
        parse_kv("no equals sign\n")
