"""Checkpoint-time weight statistics for the GPT model.

A snapshot reads (never writes) the model: one population std/mean per
(layer, group) plus fixed-bin histograms for configured target tensors.
Histogram bins are anchored at the init scale (+-4 * sigma0 * K) so they are
comparable across the whole run.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .gpt import BLOCK_GROUPS, Gpt
from .numerics import histogram, summarize

GROUPS = ("Q", "K", "V", "O", "MLP1", "MLP2", "Emb")
_SUFFIX = {g: s for s, g in BLOCK_GROUPS.items()}

HIST_BINS = 64
HIST_K = 10.0


class ConfigError(ValueError):
    pass


def group_tensor(model: Gpt, layer: int, group: str) -> np.ndarray:
    if group not in GROUPS:
        raise ConfigError(f"unknown parameter group {group!r}; expected one of {GROUPS}")
    if group == "Emb":
        return model.params["wte"]
    if not 0 <= layer < model.config.n_layers:
        raise ConfigError(f"layer {layer} outside [0, {model.config.n_layers})")
    return model.params[f"h{layer}.{_SUFFIX[group]}"]


@dataclass(frozen=True)
class StdEntry:
    step: int
    layer: int
    group: str
    std: float
    mean: float


@dataclass
class LayerStdSeries:
    entries: list[StdEntry] = field(default_factory=list)

    def add(self, entry: StdEntry) -> None:
        last = self.last_step(entry.layer, entry.group)
        if last is not None and entry.step < last:
            raise ValueError(f"step {entry.step} precedes {last} for layer {entry.layer} group {entry.group}")
        self.entries.append(entry)

    def last_step(self, layer: int, group: str) -> int | None:
        for e in reversed(self.entries):
            if e.layer == layer and e.group == group:
                return e.step
        return None

    def keys(self) -> list[tuple[int, str]]:
        seen = {}
        for e in self.entries:
            seen.setdefault((e.layer, e.group), None)
        return list(seen)

    def steps(self) -> list[int]:
        return sorted({e.step for e in self.entries})

    def trajectory(self, layer: int, group: str) -> tuple[np.ndarray, np.ndarray]:
        rows = [(e.step, e.std) for e in self.entries if e.layer == layer and e.group == group]
        if not rows:
            return np.array([], dtype=np.int64), np.array([])
        steps, stds = zip(*rows)
        return np.asarray(steps), np.asarray(stds)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "layer", "group", "mean", "std"])
        for e in self.entries:
            w.writerow([e.step, e.layer, e.group, repr(e.mean), repr(e.std)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "LayerStdSeries":
        series = cls()
        for row in csv.DictReader(io.StringIO(text)):
            series.add(StdEntry(int(row["step"]), int(row["layer"]), row["group"],
                                float(row["std"]), float(row["mean"])))
        return series


@dataclass
class HistogramSeries:
    layer: int
    group: str
    snapshots: list[dict] = field(default_factory=list)

    def to_jsonl(self) -> str:
        lines = []
        for snap in self.snapshots:
            rec = {"layer": self.layer, "group": self.group, **snap}
            lines.append(json.dumps(rec, sort_keys=True))
        return "".join(line + "\n" for line in lines)

    @classmethod
    def from_jsonl(cls, text: str) -> list["HistogramSeries"]:
        out: dict[tuple[int, str], HistogramSeries] = {}
        for line in text.splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            key = (rec.pop("layer"), rec.pop("group"))
            out.setdefault(key, cls(*key)).snapshots.append(rec)
        return list(out.values())


def sparsity_metric(tensor, threshold_fraction: float = 0.1, absolute_fallback: float = 1e-12) -> float:
    """Fraction of entries with ``|w| < threshold_fraction * std(w)``.

    A zero-std tensor uses ``absolute_fallback`` as the threshold instead.
    """
    w = np.asarray(tensor, dtype=np.float64).ravel()
    if w.size == 0:
        raise ValueError("sparsity of an empty tensor is undefined")
    std = float(w.std())
    threshold = threshold_fraction * std if std > 0 else absolute_fallback
    return float(np.mean(np.abs(w) < threshold))


class Instrument:
    """Accumulates std series and histograms across snapshots of one model."""

    def __init__(self, groups=("Q", "K", "V"), layers=None, histogram_targets=((0, "V"),),
                 sigma0: float = 0.02, k: float = HIST_K, bins: int = HIST_BINS,
                 sparsity_fraction: float = 0.1):
        for g in groups:
            if g not in GROUPS:
                raise ConfigError(f"unknown parameter group {g!r}")
        for _, g in histogram_targets:
            if g not in GROUPS:
                raise ConfigError(f"unknown histogram group {g!r}")
        self.groups = tuple(groups)
        self.layers = None if layers is None else tuple(layers)
        self.half_range = 4.0 * sigma0 * k
        self.bins = bins
        self.sparsity_fraction = sparsity_fraction
        self.series = LayerStdSeries()
        self.histograms = [HistogramSeries(l, g) for l, g in histogram_targets]

    def snapshot(self, model: Gpt, step: int) -> list[StdEntry]:
        layers = self.layers if self.layers is not None else range(model.config.n_layers)
        new = []
        for layer in layers:
            for group in self.groups:
                if group == "Emb" and layer != 0:
                    continue
                s = summarize(group_tensor(model, layer, group))
                entry = StdEntry(step, layer, group, s.std, s.mean)
                self.series.add(entry)
                new.append(entry)
        for hs in self.histograms:
            w = group_tensor(model, hs.layer, hs.group)
            h = histogram(w, self.bins, -self.half_range, self.half_range)
            hs.snapshots.append({
                "step": step,
                "bin_edges": [float(e) for e in h.edges],
                "counts": [int(c) for c in h.counts],
                "overflow_lo": h.overflow_lo,
                "overflow_hi": h.overflow_hi,
                "std": summarize(w).std,
                "sparsity": sparsity_metric(w, self.sparsity_fraction),
            })
        return new


@dataclass(frozen=True)
class EquilibrationEntry:
    layer: int
    group: str
    early_growth: float
    late_drift: float
    converged: bool


@dataclass
class EquilibrationReport:
    early_step: int
    window: int
    threshold: float
    entries: list[EquilibrationEntry]

    def get(self, layer: int, group: str) -> EquilibrationEntry:
        for e in self.entries:
            if e.layer == layer and e.group == group:
                return e
        raise KeyError((layer, group))

    def depth_summary(self) -> dict:
        """Shallow-half vs deep-half mean early growth per group (reported, never asserted)."""
        out = {}
        for group in sorted({e.group for e in self.entries}):
            rows = sorted((e.layer, e.early_growth) for e in self.entries if e.group == group)
            if len(rows) < 2:
                continue
            half = len(rows) // 2
            shallow = float(np.mean([g for _, g in rows[:half]]))
            deep = float(np.mean([g for _, g in rows[-half:]]))
            layers = np.array([l for l, _ in rows], dtype=float)
            growth = np.array([g for _, g in rows])
            corr = float(np.corrcoef(layers, growth)[0, 1]) if growth.std() > 0 else 0.0
            out[group] = {"shallow_mean_early_growth": shallow, "deep_mean_early_growth": deep,
                          "shallow_faster": shallow > deep, "depth_growth_correlation": corr}
        return out

    def to_json(self) -> dict:
        return {
            "early_step": self.early_step, "window": self.window, "threshold": self.threshold,
            "entries": [e.__dict__ for e in self.entries],
            "all_converged": all(e.converged for e in self.entries),
            "depth_summary": self.depth_summary(),
        }


def equilibration_report(series: LayerStdSeries, early_step: int, window: int,
                         threshold: float = 0.05) -> EquilibrationReport:
    """Early growth std(early_step)/std(0) and late drift over the final ``window`` steps.

    ``early_step`` resolves to the last snapshot at or before it.  Late drift
    is ``max |std_s / std_w - 1|`` over snapshots s in [last - window, last],
    with std_w the first snapshot in that window; a (layer, group) is
    converged when the drift is below ``threshold``.
    """
    entries = []
    for layer, group in series.keys():
        steps, stds = series.trajectory(layer, group)
        if len(steps) < 2 or steps[0] != 0:
            raise ValueError(f"layer {layer} group {group}: need >= 2 snapshots starting at step 0")
        last = int(steps[-1])
        if not 0 < window < last:
            raise ValueError(f"window {window} must lie in (0, {last})")
        early_idx = int(np.searchsorted(steps, early_step, side="right")) - 1
        early_growth = float(stds[early_idx] / stds[0]) if stds[0] > 0 else math.inf
        in_window = stds[steps >= last - window]
        ref = in_window[0]
        late_drift = float(np.max(np.abs(in_window / ref - 1.0))) if ref > 0 else 0.0
        entries.append(EquilibrationEntry(layer, group, early_growth, late_drift, late_drift < threshold))
    return EquilibrationReport(early_step, window, threshold, entries)
