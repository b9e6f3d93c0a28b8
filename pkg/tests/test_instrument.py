import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from initlab.gpt import Gpt, GptConfig
from initlab.instrument import (ConfigError, HistogramSeries, Instrument, LayerStdSeries, StdEntry,
                                equilibration_report, group_tensor, sparsity_metric)
from initlab.numerics import RngState, summarize


@pytest.fixture(scope="module")
def model():
    return Gpt.initialize(GptConfig(n_layers=3, d_model=64, n_heads=4, d_ff=256, ctx_len=16), RngState(0))


def test_fresh_qkv_std_in_concentration_band(model):
    inst = Instrument()
    for e in inst.snapshot(model, 0):
        assert 0.0185 <= e.std <= 0.0215, e


def test_series_std_equals_summarize_exactly(model):
    inst = Instrument(groups=("Q", "K", "V", "O", "MLP1", "MLP2", "Emb"))
    for e in inst.snapshot(model, 0):
        assert e.std == summarize(group_tensor(model, e.layer, e.group)).std


def test_snapshot_does_not_mutate_model(model):
    before = model.checksum()
    Instrument(histogram_targets=((0, "V"), (2, "MLP1"))).snapshot(model, 0)
    assert model.checksum() == before


def test_repeated_snapshot_same_step_identical(model):
    inst = Instrument()
    a = inst.snapshot(model, 5)
    b = inst.snapshot(model, 5)
    assert a == b
    assert inst.histograms[0].snapshots[0] == inst.histograms[0].snapshots[1]


def test_zero_tensor_histogram_central_bin(model):
    m = Gpt(model.config, {k: v.copy() for k, v in model.params.items()})
    m.params["h0.attn.v.w"][:] = 0.0
    inst = Instrument()
    inst.snapshot(m, 0)
    snap = inst.histograms[0].snapshots[0]
    counts = snap["counts"]
    assert snap["std"] == 0.0 and snap["sparsity"] == 1.0
    assert counts[32] == 64 * 64 and sum(counts) == 64 * 64
    assert snap["bin_edges"][32] == 0.0
    assert snap["bin_edges"][0] == pytest.approx(-0.8) and len(snap["bin_edges"]) == 65


def test_histogram_conserves_count(model):
    inst = Instrument()
    inst.snapshot(model, 0)
    s = inst.histograms[0].snapshots[0]
    assert sum(s["counts"]) + s["overflow_lo"] + s["overflow_hi"] == model.params["h0.attn.v.w"].size


def test_unknown_group_rejected(model):
    with pytest.raises(ConfigError):
        Instrument(groups=("Q", "W"))
    with pytest.raises(ConfigError):
        Instrument(histogram_targets=((0, "bias"),))
    with pytest.raises(ConfigError):
        group_tensor(model, 3, "Q")


def test_series_rejects_step_regression():
    s = LayerStdSeries()
    s.add(StdEntry(10, 0, "Q", 0.1, 0.0))
    with pytest.raises(ValueError):
        s.add(StdEntry(5, 0, "Q", 0.1, 0.0))
    s.add(StdEntry(5, 1, "Q", 0.1, 0.0))  # other key is independent


@given(st.lists(st.tuples(st.integers(0, 3), st.sampled_from(["Q", "K", "V"]),
                          st.floats(0, 10, allow_nan=False), st.floats(-1, 1, allow_nan=False)), max_size=30))
def test_csv_round_trip_lossless(rows):
    s = LayerStdSeries()
    for step, (layer, group, std, mean) in enumerate(rows):
        s.add(StdEntry(step, layer, group, std, mean))
    assert LayerStdSeries.from_csv(s.to_csv()).entries == s.entries


def test_jsonl_round_trip(model):
    inst = Instrument(histogram_targets=((0, "V"), (1, "Q")))
    inst.snapshot(model, 0)
    inst.snapshot(model, 50)
    text = "".join(h.to_jsonl() for h in inst.histograms)
    back = HistogramSeries.from_jsonl(text)
    assert back == inst.histograms
    assert len(text.splitlines()) == 4


def _series(values, steps):
    s = LayerStdSeries()
    for st_, v in zip(steps, values):
        s.add(StdEntry(st_, 0, "Q", v, 0.0))
    return s


def test_equilibration_constant():
    rep = equilibration_report(_series([0.02] * 5, [0, 50, 100, 150, 200]), 50, 100)
    e = rep.get(0, "Q")
    assert e.early_growth == 1.0 and e.late_drift == 0.0 and e.converged


def test_equilibration_doubling_then_flat():
    rep = equilibration_report(_series([0.02, 0.04, 0.04, 0.04, 0.04], [0, 50, 100, 150, 200]), 50, 100)
    e = rep.get(0, "Q")
    assert e.early_growth == 2.0 and e.late_drift == 0.0


def test_equilibration_drift_marks_unconverged():
    rep = equilibration_report(_series([1.0, 1.0, 1.0, 1.1, 1.2], [0, 50, 100, 150, 200]), 50, 100, 0.05)
    e = rep.get(0, "Q")
    assert e.late_drift == pytest.approx(0.2) and not e.converged
    assert rep.to_json()["all_converged"] is False


def test_equilibration_errors():
    with pytest.raises(ValueError):
        equilibration_report(_series([1.0], [0]), 0, 1)
    with pytest.raises(ValueError):
        equilibration_report(_series([1.0, 1.0], [0, 50]), 0, 50)


def test_depth_summary_reported():
    s = LayerStdSeries()
    for step in (0, 50, 100):
        for layer in range(4):
            s.add(StdEntry(step, layer, "Q", 1.0 + (step > 0) * (4 - layer) * 0.1, 0.0))
    ds = equilibration_report(s, 50, 50).depth_summary()["Q"]
    assert ds["shallow_faster"] and ds["depth_growth_correlation"] < 0


def test_sparsity_examples():
    assert sparsity_metric(np.zeros(10)) == 1.0
    assert sparsity_metric(np.array([-1.0, 1.0]), 0.5) == 0.0
    x = np.random.default_rng(0).standard_normal(10**6)
    assert abs(sparsity_metric(x, 1.0) - (math.erf(1 / math.sqrt(2)))) < 0.005
    with pytest.raises(ValueError):
        sparsity_metric(np.array([]))


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=50), st.floats(0, 3))
def test_sparsity_is_a_fraction(xs, frac):
    assert 0.0 <= sparsity_metric(np.array(xs), frac) <= 1.0
