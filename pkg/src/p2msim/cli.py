"""Command-line entry point: ``p2msim <command> [options]``.

All randomness derives from ``--seed``; rerunning a command with the same
inputs and seed rewrites byte-identical files.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import aer
from .array import build_array, run_stream
from .config import (
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
from .device import DeviceError, DeviceParams, fit_response_poly, sample_device_grid
from .energy import StreamStats, compare, format_comparison
from .events import parse_event_stream, serialize_event_stream, synth_events
from .oracle import equivalence_report

# default calibration grid: 21 weights x 0..16 events spans both rails
DEFAULT_WEIGHTS = np.linspace(-1.0, 1.0, 21)
DEFAULT_COUNTS = np.arange(17)


def _fmt_from_path(path: Path, explicit: str | None) -> str:
    if explicit:
        return explicit
    return "binary" if path.suffix in (".bin", ".npx") else "csv"


def _floats(text):
    return [float(v) for v in text.replace(",", " ").split()]


def cmd_synth(args) -> int:
    stream = synth_events(args.width, args.height, args.duration, args.rate, args.seed)
    out = Path(args.out)
    out.write_bytes(serialize_event_stream(stream, _fmt_from_path(out, args.format)))
    print(f"wrote {len(stream)} events to {out}")
    return 0


def cmd_calibrate(args) -> int:
    params = device_from_config(load_config(args.config)) if args.config else DeviceParams()
    weights = _floats(args.weights) if args.weights else DEFAULT_WEIGHTS
    counts = [int(v) for v in _floats(args.counts)] if args.counts else DEFAULT_COUNTS
    grid = sample_device_grid(params, weights, counts, args.trials, args.seed)
    model = fit_response_poly(grid)
    write_model(args.out, model, params, {"trials": args.trials, "seed": args.seed,
                                          "window_us": args.window})
    print(f"fit_rmse = {model.fit_rmse:.6f}")
    return 0


def cmd_simulate(args) -> int:
    src = Path(args.events)
    stream = parse_event_stream(src.read_bytes(), _fmt_from_path(src, args.format))
    cp = load_config(args.config) if args.config else load_config(shipped_config("dvs_gesture.cfg"))
    spec = kernel_from_config(cp, args.seed)
    array = build_array(stream.width, stream.height, spec)
    seed = None if args.deterministic else args.seed
    if args.mode == "fitted":
        if not args.model:
            raise ConfigError("fitted mode needs --model (run `p2msim calibrate` first)")
        model, params = read_model(args.model)
        result = run_stream(array, stream, "fitted", args.window, model=model, seed=seed)
    else:
        params = read_model(args.model)[1] if args.model else device_from_config(cp)
        result = run_stream(array, stream, "transient", args.window, params=params, seed=seed)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    spikes = np.stack([m.spikes for m in result.maps]) if result.maps else np.zeros((0,) + array.shape, bool)
    np.save(out / "activations.npy", spikes, allow_pickle=False)
    geom = aer.AerGeometry.from_array(array)
    windows = [(m.window, aer.encode_window(m, geom)[0]) for m in result.maps]
    (out / "aer.bin").write_bytes(aer.write_aer_dump(windows, geom))
    per, base, saved = aer.bits_saved(geom)
    stats = [
        ("mode", args.mode), ("seed", args.seed), ("window_us", args.window),
        ("n_windows", len(result.maps)), ("n_event_in", result.n_events),
        ("n_event_out", result.total_spikes), ("n_sites", result.n_sites),
        ("sparsity", result.sparsity), ("per_event_bits", per), ("baseline_bits", base),
        ("bits_saved_per_event", saved), ("spike_counts", result.spike_counts),
    ]
    (out / "stats.txt").write_text(format_kv(stats))
    print(f"{len(result.maps)} windows, {result.total_spikes} output spikes "
          f"from {result.n_events} events (sparsity {result.sparsity:.4f})")
    print("per-window spikes:", " ".join(str(c) for c in result.spike_counts))
    return 0


def cmd_energy(args) -> int:
    if args.constants and not Path(args.constants).is_file():
        raise ConfigError(f"constants file not found: {args.constants}")
    cp = load_config(args.config) if args.config else load_config(shipped_config("dvs_gesture.cfg"))
    if args.constants:
        consts = energy_from_config(load_config(args.constants))
    else:
        consts = energy_from_config(cp)
    layers, T, extra = network_from_config(cp)
    sw = int(extra.get("sensor_width", 128))
    sh = int(extra.get("sensor_height", 128))
    first = next((l for l in layers if l.is_first_layer), layers[0])
    geom = aer.AerGeometry(first.w_o, first.h_o, first.c_o, sw, sh)
    n_event, n_p2m = int(extra.get("n_event", 0)), None
    sparsity = None
    if args.stats:
        st = parse_kv(Path(args.stats).read_text())
        n_event, n_p2m = int(st["n_event_in"]), int(st["n_event_out"])
        T = int(st["n_windows"]) or T
        # the first layer's output density feeds the second layer directly
        if len(layers) > 1:
            sparsity = tuple(l.s for l in layers)
            sparsity = (sparsity[0], float(st["sparsity"])) + sparsity[2:]
    cmp = compare(layers, StreamStats(n_event, T, sparsity, n_p2m), consts, geom)
    sys.stdout.write(format_comparison(cmp))
    if args.out:
        items = [("T", T), ("n_event", n_event), ("n_event_p2m", n_p2m if n_p2m is not None else n_event)]
        items += list(cmp.as_dict().items())
        items += [(f"layer.{e.name}.baseline_J", e.total) for e in cmp.baseline.layers]
        items += [(f"layer.{e.name}.p2m_J", e.total) for e in cmp.p2m.layers]
        Path(args.out).write_text(format_kv(items))
    return 0


def cmd_verify(args) -> int:
    rep = equivalence_report(range(args.seed, args.seed + args.seeds), max_dim=args.max_dim,
                             vth_skew=args.vth_skew)
    print(rep.summary())
    if args.out:
        c = rep.counterexample
        items = [("passed", int(rep.passed)), ("instances", rep.instances)]
        if c:
            items += [("seed", c.seed), ("mode", c.mode), ("window", c.window),
                      ("site", f"{c.site[0]} {c.site[1]}"), ("channel", c.channel)]
        Path(args.out).write_text(format_kv(items))
    return 0 if rep.passed else 1


def cmd_aer_trace(args) -> int:
    spikes = np.load(args.activations, allow_pickle=False)
    if not 0 <= args.window < len(spikes):
        raise ConfigError(f"window {args.window} not in dump of {len(spikes)} windows")
    oh, ow, ch = spikes.shape[1:]
    geom = aer.AerGeometry(ow, oh, ch, args.sensor_width, args.sensor_height)
    amap = aer.ActivationMap(spikes[args.window], args.window)
    words, trace = aer.encode_window(amap, geom)
    if aer.replay_trace(trace, geom, args.window) != amap:
        raise RuntimeError("trace replay does not reproduce the activation map")
    Path(args.out).write_text(aer.format_trace(trace))
    print(f"window {args.window}: {len(words)} words, {len(trace)} handshake edges")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="p2msim", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, out_required=True, config=True):
        p.add_argument("--seed", type=int, default=0)
        if config:
            p.add_argument("--config", help="key-value config file")
        p.add_argument("--out", required=out_required)

    p = sub.add_parser("synth", help="generate a Poisson event stream")
    common(p, config=False)
    p.add_argument("--width", type=int, default=128)
    p.add_argument("--height", type=int, default=128)
    p.add_argument("--duration", type=int, default=10000, help="microseconds")
    p.add_argument("--rate", type=float, default=0.05, help="events per pixel per ms")
    p.add_argument("--format", choices=("csv", "binary"))
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("calibrate", help="Monte-Carlo the device and fit the response model")
    common(p)
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--weights", help="normalized weights, e.g. '-1 -0.5 0 0.5 1'")
    p.add_argument("--counts", help="event counts, e.g. '0 1 2 4 8'")
    p.add_argument("--window", type=int, default=100, help="calibration window (us), recorded only")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("simulate", help="run an event stream through the pixel array")
    common(p)
    p.add_argument("--events", required=True)
    p.add_argument("--format", choices=("csv", "binary"))
    p.add_argument("--model", help="response model file from calibrate")
    p.add_argument("--mode", choices=("fitted", "transient"), default="fitted")
    p.add_argument("--window", type=int, default=1000, help="window length (us)")
    p.add_argument("--deterministic", action="store_true", help="disable device variation")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("energy", help="baseline vs in-pixel energy comparison")
    common(p, out_required=False)
    p.add_argument("--constants", help="energy constants file (overrides [energy] in --config)")
    p.add_argument("--stats", help="stats.txt written by simulate")
    p.set_defaults(func=cmd_energy)

    p = sub.add_parser("verify", help="oracle equivalence check")
    common(p, out_required=False, config=False)
    p.add_argument("--seeds", type=int, default=100)
    p.add_argument("--max-dim", type=int, default=16)
    p.add_argument("--vth-skew", type=float, default=0.0, help="inject a simulator threshold offset (V)")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("aer-trace", help="handshake trace of one simulated window")
    common(p, config=False)
    p.add_argument("--activations", required=True, help="activations.npy from simulate")
    p.add_argument("--window", type=int, default=0)
    p.add_argument("--sensor-width", type=int, default=128)
    p.add_argument("--sensor-height", type=int, default=128)
    p.set_defaults(func=cmd_aer_trace)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DeviceError, ValueError, OSError) as exc:
        print(f"p2msim {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
