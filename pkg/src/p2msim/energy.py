"""Frontend and backend energy of a DVS + spiking-CNN system, with and without in-pixel compute.

Frontend energy is sensing plus off-chip address traffic; backend energy is
accumulate operations plus one read of every layer's parameters. In the
baseline system the first layer sees multi-bit window counts and therefore
costs full MACs at unit density; with in-pixel compute that layer disappears
from the backend and only its output spike addresses leave the sensor.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .aer import AerGeometry

BASELINE = "baseline"
P2M = "p2m"

PJ = 1e-12
MJ = 1e-3

# 45 nm 32-bit integer multiply and add energies (pJ); their MAC/add ratio is
# the ~32x figure usually quoted for fixed-point arithmetic.
INT32_MULT_PJ = 3.1
INT32_ADD_PJ = 0.1


def fixed_point_mac_ratio() -> float:
    return (INT32_MULT_PJ + INT32_ADD_PJ) / INT32_ADD_PJ


@dataclass(frozen=True)
class EnergyConsts:
    """Per-operation energies in joules.

    ``E_sens_p2m`` / ``E_sens_base`` are lumped sensing energies; when set they
    replace ``e_event * N + E_bias`` for that mode. The communication energy is
    only published as the sum ``e_sens_to_tx + e_tx``.
    """

    e_event: float = 0.0
    E_bias: float = 0.0
    e_sens_to_tx: float = 0.0
    e_tx: float = 4.1 * PJ
    e_mac: float = 1.568 * PJ
    e_ac: float = 0.03 * PJ
    e_read: float = 5.0 * PJ
    E_sens_p2m: float | None = 26.588 * MJ
    E_sens_base: float | None = 26.032 * MJ

    def __post_init__(self):
        for name, val in vars(self).items():
            if val is not None and val < 0:
                raise ValueError(f"{name} must be non-negative")

    @property
    def e_comm(self) -> float:
        return self.e_sens_to_tx + self.e_tx

    def scaled(self, alpha: float) -> "EnergyConsts":
        return replace(self, **{k: (None if v is None else v * alpha) for k, v in vars(self).items()})


@dataclass(frozen=True)
class LayerShape:
    h_o: int
    w_o: int
    c_i: int
    c_o: int
    k: int
    s: float = 1.0
    is_first_layer: bool = False
    name: str = ""

    def __post_init__(self):
        if min(self.h_o, self.w_o, self.c_i, self.c_o, self.k) < 1:
            raise ValueError("layer dimensions must be >= 1")
        if not 0 <= self.s <= 1:
            raise ValueError("sparsity must lie in [0, 1]")


def n_ac(layer: LayerShape) -> int:
    return layer.h_o * layer.w_o * layer.k**2 * layer.c_i * layer.c_o


def n_read(layer: LayerShape) -> int:
    return layer.k**2 * layer.c_i * layer.c_o


def _check_mode(mode):
    if mode not in (BASELINE, P2M):
        raise ValueError(f"mode must be {BASELINE!r} or {P2M!r}")


def sensing_energy(n_event: int, c: EnergyConsts, mode: str) -> float:
    _check_mode(mode)
    lumped = c.E_sens_p2m if mode == P2M else c.E_sens_base
    if lumped is not None:
        return lumped
    return c.e_event * n_event + c.E_bias


def bits_per_event(geometry: AerGeometry, mode: str) -> int:
    _check_mode(mode)
    return geometry.per_event_bits if mode == P2M else geometry.baseline_bits


def frontend_energy(n_event: int, geometry: AerGeometry, c: EnergyConsts, mode: str) -> float:
    """Sensing plus per-bit address communication for ``n_event`` transmitted events."""
    comm = c.e_comm * n_event * bits_per_event(geometry, mode)
    return sensing_energy(n_event, c, mode) + comm


@dataclass(frozen=True)
class LayerEnergy:
    name: str
    compute: float
    read: float

    @property
    def total(self) -> float:
        return self.compute + self.read


def layer_energies(layers: list[LayerShape], T: int, c: EnergyConsts, mode: str) -> list[LayerEnergy]:
    _check_mode(mode)
    out = []
    for i, layer in enumerate(layers):
        name = layer.name or f"layer{i}"
        if layer.is_first_layer and mode == P2M:
            out.append(LayerEnergy(name, 0.0, 0.0))
            continue
        if layer.is_first_layer:
            compute = c.e_mac * n_ac(layer) * 1.0 * T
        else:
            compute = c.e_ac * n_ac(layer) * layer.s * T
        out.append(LayerEnergy(name, compute, c.e_read * n_read(layer)))
    return out


def backend_energy(layers: list[LayerShape], T: int, c: EnergyConsts, mode: str) -> float:
    return sum(e.total for e in layer_energies(layers, T, c, mode))


@dataclass(frozen=True)
class StreamStats:
    """Activity figures feeding the comparison.

    ``n_event`` counts raw DVS events (baseline traffic); ``n_event_p2m``
    counts first-layer output spikes and defaults to ``n_event``.
    ``sparsity`` optionally overrides per-layer ``s`` in order.
    """

    n_event: int
    T: int
    sparsity: tuple[float, ...] | None = None
    n_event_p2m: int | None = None


@dataclass(frozen=True)
class EnergyReport:
    mode: str
    E_frontend: float
    E_backend: float
    E_sens: float
    E_com: float
    layers: list = field(default_factory=list)
    N_event: int = 0
    T: int = 1

    @property
    def total(self) -> float:
        return self.E_frontend + self.E_backend


@dataclass(frozen=True)
class Comparison:
    baseline: EnergyReport
    p2m: EnergyReport
    first_layer_share: float
    mac_to_ac_ratio: float
    fixed_point_ratio: float

    @property
    def backend_ratio(self) -> float:
        return self.baseline.E_backend / self.p2m.E_backend if self.p2m.E_backend else float("inf")

    @property
    def frontend_ratio(self) -> float:
        return self.p2m.E_frontend / self.baseline.E_frontend

    @property
    def first_layer_dominant(self) -> bool:
        return self.first_layer_share > 0.5

    def as_dict(self) -> dict[str, float]:
        return {
            "frontend_baseline_J": self.baseline.E_frontend,
            "frontend_p2m_J": self.p2m.E_frontend,
            "backend_baseline_J": self.baseline.E_backend,
            "backend_p2m_J": self.p2m.E_backend,
            "sensing_baseline_J": self.baseline.E_sens,
            "sensing_p2m_J": self.p2m.E_sens,
            "comm_baseline_J": self.baseline.E_com,
            "comm_p2m_J": self.p2m.E_com,
            "frontend_ratio_p2m_over_baseline": self.frontend_ratio,
            "backend_ratio_baseline_over_p2m": self.backend_ratio,
            "first_layer_share_of_baseline_backend": self.first_layer_share,
            "first_layer_dominant": float(self.first_layer_dominant),
            "mac_to_ac_ratio": self.mac_to_ac_ratio,
            "fixed_point_mac_ratio": self.fixed_point_ratio,
        }


def _report(layers, stats: StreamStats, n_event: int, geometry, c, mode) -> EnergyReport:
    e_sens = sensing_energy(n_event, c, mode)
    e_com = c.e_comm * n_event * bits_per_event(geometry, mode)
    per_layer = layer_energies(layers, stats.T, c, mode)
    return EnergyReport(mode, e_sens + e_com, sum(e.total for e in per_layer), e_sens, e_com,
                        per_layer, n_event, stats.T)


def compare(network: list[LayerShape], stats: StreamStats, c: EnergyConsts, geometry: AerGeometry) -> Comparison:
    """Both systems on the same network and activity: frontend and backend, baseline and in-pixel."""
    layers = list(network)
    if stats.sparsity is not None:
        if len(stats.sparsity) != len(layers):
            raise ValueError("one sparsity value per layer is required")
        layers = [replace(l, s=s) for l, s in zip(layers, stats.sparsity)]
    n_p2m = stats.n_event if stats.n_event_p2m is None else stats.n_event_p2m
    base = _report(layers, stats, stats.n_event, geometry, c, BASELINE)
    p2m = _report(layers, stats, n_p2m, geometry, c, P2M)
    first = sum(e.total for l, e in zip(layers, base.layers) if l.is_first_layer)
    share = first / base.E_backend if base.E_backend else 0.0
    return Comparison(base, p2m, share, c.e_mac / c.e_ac if c.e_ac else float("inf"), fixed_point_mac_ratio())


def format_comparison(cmp: Comparison) -> str:
    rows = [
        ("frontend", cmp.baseline.E_frontend, cmp.p2m.E_frontend),
        ("backend", cmp.baseline.E_backend, cmp.p2m.E_backend),
    ]
    lines = [f"{'':10s}{'baseline (J)':>16s}{'p2m (J)':>16s}"]
    lines += [f"{name:10s}{b:16.6e}{p:16.6e}" for name, b, p in rows]
    lines.append(f"frontend p2m/baseline      {cmp.frontend_ratio:.4f}")
    lines.append(f"backend baseline/p2m       {cmp.backend_ratio:.4f}")
    lines.append(f"first-layer backend share  {cmp.first_layer_share:.4f}")
    lines.append(f"e_mac/e_ac                 {cmp.mac_to_ac_ratio:.2f} (fixed-point ~{cmp.fixed_point_ratio:.0f}x)")
    return "\n".join(lines) + "\n"
