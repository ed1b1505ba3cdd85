"""Per-layer training-signal instrumentation.

The training signal of a layer is the mean absolute per-weight gradient
over that layer's synaptic weights. Signals are aggregated over windows of
mini-batches; the windowed standard deviation serves as the layer's noise
(temperature) estimate. ``detect_regimes`` locates the signal peak and the
onset of the late phase in which all layers decay with a common factor
(frozen log-ratios).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .net import FlatGradient, Network

CSV_COLUMNS = ("step", "layer", "signal", "noise", "window")


@dataclass
class LayerSignalRecord:
    """Windowed signal statistics for one layer.

    ``degenerate`` flags windows too short for a noise estimate (the noise
    is then reported as 0); it is not part of the CSV schema.
    """

    step: int
    layer: int
    signal: float
    noise: float
    window: int
    degenerate: bool = False


def layer_signal(grad: FlatGradient, net: Network, layer: int) -> float:
    """Mean absolute gradient over the synaptic weights of one layer."""
    if layer not in net.weight_index:
        raise ValueError(f"layer {layer} has no parameters (ordinals: {sorted(net.weight_index)})")
    return float(np.abs(grad.wgrad[net.weight_index[layer]]).mean())


def layer_signals(grad: FlatGradient, net: Network) -> dict:
    return {ordinal: layer_signal(grad, net, ordinal) for ordinal in net.weight_index}


def accumulate_window(step, layer, values) -> LayerSignalRecord:
    """Aggregate per-mini-batch signals into one record.

    Signal is the window mean; noise is the sample standard deviation
    (n-1 normalization), reported as 0 with the degenerate flag when the
    window holds fewer than two batches.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ValueError("cannot accumulate an empty window")
    mean = float(values.mean())
    if values.size < 2:
        return LayerSignalRecord(step, layer, mean, 0.0, int(values.size), degenerate=True)
    return LayerSignalRecord(step, layer, mean, float(values.std(ddof=1)), int(values.size))


class SignalRecorder:
    """Append-only sink of windowed layer-signal records.

    Call ``observe`` once per optimization step with the loss gradient; a
    record per layer is emitted every ``window`` steps. Appends may arrive
    out of order across threads; analysis sorts by step.
    """

    def __init__(self, net: Network, window: int = 50):
        if window < 1:
            raise ValueError("window must be >= 1")
        self.window = int(window)
        self._layers = sorted(net.weight_index)
        self._buffer = {ordinal: [] for ordinal in self._layers}
        self.records = []

    def observe(self, step: int, grad: FlatGradient, net: Network):
        for ordinal in self._layers:
            self._buffer[ordinal].append(layer_signal(grad, net, ordinal))
        if len(self._buffer[self._layers[0]]) >= self.window:
            self._flush(step)

    def _flush(self, step):
        for ordinal in self._layers:
            values = self._buffer[ordinal]
            if values:
                self.records.append(accumulate_window(step, ordinal, values))
            self._buffer[ordinal] = []

    def close(self, step: int):
        """Flush any partial trailing window."""
        self._flush(step)

    def export_csv(self, path):
        write_signal_csv(self.records, path)


def write_signal_csv(records, path):
    """CSV export: one row per (step, layer), linear signal/noise values."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(CSV_COLUMNS)
        for r in sorted(records, key=lambda r: (r.step, r.layer)):
            writer.writerow([r.step, r.layer, repr(r.signal), repr(r.noise), r.window])


def read_signal_csv(path):
    records = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        for row in reader:
            records.append(
                LayerSignalRecord(
                    step=int(row["step"]),
                    layer=int(row["layer"]),
                    signal=float(row["signal"]),
                    noise=float(row["noise"]),
                    window=int(row["window"]),
                )
            )
    return records


@dataclass
class RegimeReport:
    """Dynamical-regime summary of a signal series.

    ``signal_peak_step`` marks the end of the signal-dominated phase (the
    layer-averaged signal maximum); ``common_decay_step`` the first window
    from which every pair of layers keeps its log signal ratio inside a
    band of width ``band`` to the end of the series. When no such window
    exists the last step is reported and ``common_decay_found`` is False.
    """

    peak_step: dict
    signal_peak_step: int
    common_decay_step: int
    common_decay_found: bool
    ratio_cv: dict
    band: float

    @property
    def boundaries(self):
        return (self.signal_peak_step, self.common_decay_step)


def detect_regimes(records, band: float = 0.2, tail_fraction: float = 0.2) -> RegimeReport:
    """Locate the regime boundaries of a windowed layer-signal series.

    Requires records for at least 3 windows, with every layer present at
    every window step. ``ratio_cv`` holds the coefficient of variation of
    each pairwise signal ratio over the final ``tail_fraction`` of windows.
    """
    by_layer = {}
    for r in records:
        by_layer.setdefault(r.layer, {})[r.step] = r.signal
    if not by_layer:
        raise ValueError("empty signal series")
    layers = sorted(by_layer)
    steps = sorted(by_layer[layers[0]])
    if len(steps) < 3:
        raise ValueError(f"need at least 3 windows per layer, got {len(steps)}")
    for ordinal in layers:
        if sorted(by_layer[ordinal]) != steps:
            raise ValueError(f"layer {ordinal} does not cover the same steps as layer {layers[0]}")

    sig = np.array([[by_layer[l][s] for s in steps] for l in layers])  # (L, T)
    t_count = len(steps)

    peak_idx = {l: int(np.argmax(sig[i])) for i, l in enumerate(layers)}
    peak_step = {l: steps[peak_idx[l]] for l in layers}
    mean_peak_idx = int(np.argmax(sig.mean(axis=0)))
    signal_peak_step = steps[mean_peak_idx]

    # Common decay: suffix range of every pairwise log-ratio within `band`.
    # The search starts at the signal peak so the two boundaries are ordered.
    with np.errstate(divide="ignore", invalid="ignore"):
        logsig = np.log(sig)
    found_idx = None
    for t in range(mean_peak_idx, t_count):
        ok = True
        for i, j in combinations(range(len(layers)), 2):
            ratio = logsig[i, t:] - logsig[j, t:]
            if not np.all(np.isfinite(ratio)) or ratio.max() - ratio.min() > band:
                ok = False
                break
        if ok:
            found_idx = t
            break
    common_decay_found = found_idx is not None
    common_decay_step = steps[found_idx] if common_decay_found else steps[-1]

    tail = max(2, int(np.ceil(tail_fraction * t_count)))
    ratio_cv = {}
    for i, j in combinations(range(len(layers)), 2):
        with np.errstate(divide="ignore", invalid="ignore"):
            r = sig[i, -tail:] / sig[j, -tail:]
        mean = r.mean()
        if not np.all(np.isfinite(r)) or mean == 0:
            ratio_cv[(layers[i], layers[j])] = float("inf")
        else:
            ratio_cv[(layers[i], layers[j])] = float(r.std(ddof=1) / abs(mean))

    return RegimeReport(
        peak_step=peak_step,
        signal_peak_step=signal_peak_step,
        common_decay_step=common_decay_step,
        common_decay_found=common_decay_found,
        ratio_cv=ratio_cv,
        band=band,
    )
