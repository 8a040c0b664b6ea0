"""Text configuration and model files.

Configs are INI-style key-value files. A ``[config]`` section may list
``include = other.cfg ...`` (paths relative to the including file); included
files load first and the including file overrides them key by key.

Recognized sections: ``[device]``, ``[kernel]``, ``[energy]``, ``[network]``
plus one ``[layer.<name>]`` per network layer, and ``[run]``.
"""

from __future__ import annotations

import configparser
from importlib import resources
from pathlib import Path

import numpy as np

from .array import KernelSpec, load_weights, random_kernel
from .device import DeviceParams, ResponseModel
from .energy import MJ, PJ, EnergyConsts, LayerShape

MODEL_FORMAT = "p2msim-response-model"
MODEL_VERSION = 1


class ConfigError(ValueError):
    pass


def _parser() -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str  # keep key case (E_bias vs e_event)
    return cp


def _merge(dst: configparser.ConfigParser, src: configparser.ConfigParser):
    for sec in src.sections():
        if not dst.has_section(sec):
            dst.add_section(sec)
        for key, val in src.items(sec):
            dst.set(sec, key, val)


def load_config(path, _stack=()) -> configparser.ConfigParser:
    path = Path(path).resolve()
    if path in _stack:
        raise ConfigError(f"include cycle through {path}")
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    own = _parser()
    try:
        own.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    merged = _parser()
    for inc in own.get("config", "include", fallback="").split():
        _merge(merged, load_config(path.parent / inc, _stack + (path,)))
    _merge(merged, own)
    merged.set(configparser.DEFAULTSECT, "__dir__", str(path.parent))
    return merged


def shipped_config(name: str) -> Path:
    """Path of a config bundled with the package (``energy_22nm.cfg``, ``dvs_gesture.cfg``)."""
    return Path(str(resources.files("p2msim") / "data" / name))


def _num(cp, section, key, fallback=None, cast=float):
    try:
        raw = cp.get(section, key, fallback=None)
    except configparser.NoSectionError:
        raw = None
    if raw is None:
        if fallback is None:
            raise ConfigError(f"missing [{section}] {key}")
        return fallback
    try:
        return cast(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r}") from None


def device_from_config(cp) -> DeviceParams:
    d = DeviceParams()
    if not cp.has_section("device"):
        return d
    kw = {k: _num(cp, "device", k, getattr(d, k)) for k in ("vdd", "max_step", "knee", "asym",
                                                              "sigma_frac", "leak_rate_max")}
    kw["leak_sign"] = _num(cp, "device", "leak_sign", d.leak_sign, int)
    return DeviceParams(**kw)


def kernel_from_config(cp, seed: int = 0) -> KernelSpec:
    """Kernel from ``[kernel]``; without a ``weights`` file the weights are random from ``seed``."""
    if not cp.has_section("kernel"):
        raise ConfigError("missing [kernel] section")
    k = _num(cp, "kernel", "k", 3, int)
    stride = _num(cp, "kernel", "stride", 2, int)
    channels = _num(cp, "kernel", "channels", 32, int)
    v_th = _num(cp, "kernel", "v_th", 0.45)
    wpath = cp.get("kernel", "weights", fallback=None)
    if wpath is None:
        return random_kernel(channels, k, stride, v_th, seed)
    full = Path(cp.get("kernel", "__dir__", fallback=".")) / wpath
    return KernelSpec(k, stride, channels, load_weights(full), v_th)


def energy_from_config(cp) -> EnergyConsts:
    """Constants from ``[energy]``; keys carry units: ``*_pJ`` per op, ``*_mJ`` lumped."""
    if not cp.has_section("energy"):
        raise ConfigError("missing [energy] section")
    sec = cp["energy"]

    def opt(key, unit):
        raw = sec.get(key)
        if raw is None or raw.strip().lower() == "none":
            return None
        try:
            return float(raw) * unit
        except ValueError:
            raise ConfigError(f"[energy] {key}: cannot parse {raw!r}") from None

    kw = {}
    for name, key, unit in (("e_event", "e_event_pJ", PJ), ("E_bias", "E_bias_mJ", MJ),
                            ("e_sens_to_tx", "e_sens_to_tx_pJ", PJ), ("e_tx", "e_tx_pJ", PJ),
                            ("e_mac", "e_mac_pJ", PJ), ("e_ac", "e_ac_pJ", PJ), ("e_read", "e_read_pJ", PJ)):
        val = opt(key, unit)
        if val is not None:
            kw[name] = val
    kw["E_sens_p2m"] = opt("E_sens_p2m_mJ", MJ)
    kw["E_sens_base"] = opt("E_sens_base_mJ", MJ)
    return EnergyConsts(**kw)


def network_from_config(cp) -> tuple[list[LayerShape], int, dict]:
    """Layers, time steps and extra ``[network]`` keys (sensor geometry, event counts)."""
    if not cp.has_section("network"):
        raise ConfigError("missing [network] section")
    names = cp.get("network", "layers", fallback="").split()
    if not names:
        raise ConfigError("[network] layers is empty")
    layers = []
    for i, name in enumerate(names):
        sec = f"layer.{name}"
        if not cp.has_section(sec):
            raise ConfigError(f"missing [{sec}] section")
        layers.append(LayerShape(
            _num(cp, sec, "h_o", cast=int), _num(cp, sec, "w_o", cast=int),
            _num(cp, sec, "c_i", cast=int), _num(cp, sec, "c_o", cast=int), _num(cp, sec, "k", cast=int),
            _num(cp, sec, "s", 1.0), cp.getboolean(sec, "first", fallback=(i == 0)), name))
    T = _num(cp, "network", "T", 1, int)
    extra = {k: v for k, v in cp.items("network") if k not in ("layers", "T", "__dir__")}
    return layers, T, extra


def write_model(path, model: ResponseModel, params: DeviceParams, meta: dict | None = None) -> None:
    """Human-readable model file; floats use shortest round-trip decimals."""
    lines = [f"# {MODEL_FORMAT} v{MODEL_VERSION}", "[model]", f"format = {MODEL_FORMAT}",
             f"version = {MODEL_VERSION}"]
    for k, v in (meta or {}).items():
        lines.append(f"{k} = {v}")
    lines.append("")
    lines.append("[device]")
    for k in ("vdd", "max_step", "knee", "asym", "sigma_frac", "leak_rate_max", "leak_sign"):
        lines.append(f"{k} = {getattr(params, k)!r}")
    lines.append("")
    lines.append("[response]")
    lines.append("mean_coeffs = " + " ".join(repr(float(c)) for c in model.mean_coeffs))
    lines.append("std_coeffs = " + " ".join(repr(float(c)) for c in model.std_coeffs))
    lines.append(f"fit_rmse = {model.fit_rmse!r}")
    lines.append(f"u_min = {model.u_range[0]!r}")
    lines.append(f"u_max = {model.u_range[1]!r}")
    lines.append(f"vdd = {model.vdd!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_model(path) -> tuple[ResponseModel, DeviceParams]:
    cp = load_config(path)
    if cp.get("model", "format", fallback=None) != MODEL_FORMAT:
        raise ConfigError(f"{path}: not a response model file")
    version = _num(cp, "model", "version", cast=int)
    if version != MODEL_VERSION:
        raise ConfigError(f"{path}: unsupported model version {version}")

    def coeffs(key):
        vals = [float(v) for v in cp.get("response", key).split()]
        if len(vals) != 4:
            raise ConfigError(f"{path}: {key} needs 4 coefficients")
        return tuple(vals)

    model = ResponseModel(coeffs("mean_coeffs"), coeffs("std_coeffs"), _num(cp, "response", "fit_rmse"),
                          (_num(cp, "response", "u_min"), _num(cp, "response", "u_max")),
                          _num(cp, "response", "vdd"))
    return model, device_from_config(cp)


def parse_kv(text: str) -> dict[str, str]:
    """Line-oriented ``key = value`` records, as written by the CLI."""
    out = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise ConfigError(f"not a key = value line: {line!r}")
        out[key.strip()] = val.strip()
    return out


def format_kv(items) -> str:
    def fmt(v):
        if isinstance(v, float):
            return repr(v)
        if isinstance(v, (list, tuple, np.ndarray)):
            return " ".join(fmt(x) for x in v)
        return str(v)

    return "".join(f"{k} = {fmt(v)}\n" for k, v in items)
