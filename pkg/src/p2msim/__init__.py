"""Simulator of a DVS sensor with in-pixel analog convolution and spiking readout.

Modules:
    events   event streams, file formats, windowing
    device   analog accumulation model, Monte-Carlo calibration, response fit
    array    pixel array, area budget, per-window convolve and threshold
    aer      address-event readout and handshake traces
    energy   frontend/backend energy comparison
    oracle   brute-force ideal reference
"""

from .events import EventStream, parse_event_stream, serialize_event_stream, synth_events, window_events
from .device import DeviceParams, ResponseModel, fit_response_poly, sample_device_grid
from .array import AreaBudget, KernelSpec, build_array, max_channels, run_stream
from .aer import AerGeometry, bits_saved, encode_window, replay_trace
from .energy import EnergyConsts, LayerShape, compare

__version__ = "0.1.0"

__all__ = [
    "EventStream", "parse_event_stream", "serialize_event_stream", "synth_events", "window_events",
    "DeviceParams", "ResponseModel", "fit_response_poly", "sample_device_grid",
    "AreaBudget", "KernelSpec", "build_array", "max_channels", "run_stream",
    "AerGeometry", "bits_saved", "encode_window", "replay_trace",
    "EnergyConsts", "LayerShape", "compare",
]
