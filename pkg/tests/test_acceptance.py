"""Acceptance criteria, one test per criterion, each reporting a PASS/FAIL line.

Criteria 4-7 drive the CLI with the shipped configs, so this module takes
about 15 minutes on one CPU core (the 2,000-step GPT run dominates).
"""
import json
import math
import time

import numpy as np
import pytest
from scipy import integrate, special

from initlab.cli import main
from initlab.config import shipped_config_path
from initlab.gpt import Gpt, GptConfig, LmBatch, gpt_backward, gpt_forward_loss
from initlab.init import FanSpec, InitScheme
from initlab.instrument import LayerStdSeries
from initlab.nn import Mlp, backward, bce_with_logits, forward, softmax_cross_entropy
from initlab.numerics import RngState
from initlab.stats import paired_t_test
from initlab.theory import Method, gains, mc_propagation_check

pytestmark = pytest.mark.acceptance


def _pdf(z):
    return math.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)


def _quad_gaussian(f):
    return integrate.quad(lambda z: f(z) * _pdf(z), -np.inf, np.inf, epsabs=1e-14, epsrel=1e-13, limit=200)[0]


def _run_cli(args):
    start = time.monotonic()
    code = main(args)
    return code, time.monotonic() - start


def _config_with(tmp_path, name, **overrides):
    cfg = json.loads(shipped_config_path(f"{name}.json").read_text())
    for path, value in overrides.items():
        node = cfg
        *parents, leaf = path.split(".")
        for p in parents:
            node = node[p]
        node[leaf] = value
    out = tmp_path / f"{name}-custom.json"
    out.write_text(json.dumps(cfg))
    return out


# --------------------------------------------------------------------------


def test_criterion_1_theory_gains(acceptance_report):
    start = time.monotonic()
    relu = gains("relu")
    checks = {"relu_exact": (relu.c_phi, relu.d_phi) == (0.5, 0.5)}
    worst_z = 0.0
    for kind in ("relu", "gelu"):
        ref, mc = gains(kind), gains(kind, Method.MONTE_CARLO, 10**6, RngState(11))
        zc = abs(mc.c_phi - ref.c_phi) / mc.c_stderr
        zd = abs(mc.d_phi - ref.d_phi) / mc.d_stderr
        worst_z = max(worst_z, zc, zd)
        checks[f"{kind}_mc_3se"] = zc <= 3 and zd <= 3
    gelu = gains("gelu")
    c_oracle = _quad_gaussian(lambda z: (z * special.ndtr(z)) ** 2)
    d_oracle = _quad_gaussian(lambda z: (special.ndtr(z) + z * _pdf(z)) ** 2)
    err = max(abs(gelu.c_phi - c_oracle), abs(gelu.d_phi - d_oracle))
    checks["gelu_oracle_1e-6"] = err <= 1e-6
    elapsed = time.monotonic() - start
    checks["runtime_lt_10s"] = elapsed < 10
    acceptance_report(1, "theory gains", checks,
                      f"(gelu c={gelu.c_phi:.6f} d={gelu.d_phi:.6f}, oracle err {err:.1e}, worst MC z {worst_z:.2f}, "
                      f"{elapsed:.1f}s)")


def test_criterion_2_variance_propagation(acceptance_report):
    start = time.monotonic()
    fans = [FanSpec(256, 256)] * 10
    # 16 independent networks per profile: the maps are expectations over the weights too
    kaiming = mc_propagation_check(fans, InitScheme.kaiming("normal", "fan_in", "relu"), "relu", 1024,
                                   RngState(21), draws=16)
    tiny = mc_propagation_check(fans, InitScheme.constant(1e-3), "relu", 1024, RngState(22), draws=16)
    ratios = []
    for prof in (kaiming, tiny):
        ratios += [m / p for m, p in zip(prof.measured_forward, prof.forward_vars)]
        ratios += [m / p for m, p in zip(prof.measured_backward, prof.backward_vars)]
    attenuation = tiny.measured_forward[-1] / tiny.measured_forward[0]
    elapsed = time.monotonic() - start
    checks = {
        "kaiming_in_[0.5,2]": all(0.5 <= v <= 2.0 for v in kaiming.measured_forward),
        "small_sigma_attenuates_1e10": attenuation <= 1e-10,
        "mc_vs_map_x1.5": all(1 / 1.5 <= r <= 1.5 for r in ratios),
        "runtime_lt_30s": elapsed < 30,
    }
    acceptance_report(2, "variance propagation", checks,
                      f"(kaiming range [{min(kaiming.measured_forward):.3f}, {max(kaiming.measured_forward):.3f}], "
                      f"attenuation {attenuation:.2e}, ratio range [{min(ratios):.3f}, {max(ratios):.3f}], "
                      f"{elapsed:.1f}s)")


def _mlp_fd_worst(sizes, activation, loss_fn, x, h=1e-5):
    mlp = Mlp.build(sizes, activation)
    mlp.initialize(RngState(31), InitScheme.xavier())
    g = np.random.default_rng(32)
    for layer in mlp.layers:
        layer.bias = 0.1 * g.standard_normal(layer.bias.shape)
    out, cache = forward(mlp, x)
    grads = backward(mlp, cache, loss_fn(out)[1])
    worst = 0.0
    for p, gp in zip(mlp.parameters(), grads):
        for i in np.ndindex(p.shape):
            old = p[i]
            p[i] = old + h
            up = loss_fn(forward(mlp, x)[0])[0]
            p[i] = old - h
            down = loss_fn(forward(mlp, x)[0])[0]
            p[i] = old
            num = (up - down) / (2 * h)
            worst = max(worst, abs(num - gp[i]) / max(abs(num) + abs(gp[i]), 1e-8))
    return worst


def _gpt_fd_worst(h=1e-5):
    cfg = GptConfig(n_layers=2, d_model=8, n_heads=2, d_ff=16, vocab_size=11, ctx_len=5, proj_std=0.3)
    model = Gpt.initialize(cfg, RngState(33))
    g = np.random.default_rng(34)
    for p in model.params.values():
        if p.ndim == 1:
            p += 0.2 * g.standard_normal(p.shape)
    batch = LmBatch(g.integers(0, 11, (3, 5)), g.integers(0, 11, (3, 5)))
    _, cache = gpt_forward_loss(model, batch)
    grads = gpt_backward(model, cache)
    worst = {}
    for name, p in model.params.items():
        num = np.zeros_like(p)
        for i in np.ndindex(p.shape):
            old = p[i]
            p[i] = old + h
            up = gpt_forward_loss(model, batch)[0]
            p[i] = old - h
            down = gpt_forward_loss(model, batch)[0]
            p[i] = old
            num[i] = (up - down) / (2 * h)
        # per-tensor relative error; the floor covers attn.k.b, whose true gradient is zero
        worst[name] = np.abs(num - grads[name]).max() / max(np.abs(num).max(), np.abs(grads[name]).max(), 1e-6)
    return worst


def test_criterion_3_gradient_correctness(acceptance_report):
    start = time.monotonic()
    g = np.random.default_rng(30)
    x = g.standard_normal((6, 5))
    labels = g.integers(0, 4, 6)
    bits = g.integers(0, 2, 6)
    ce = max(_mlp_fd_worst([5, 8, 7, 4], act, lambda o: softmax_cross_entropy(o, labels), x)
             for act in ("relu", "gelu"))
    bce = max(_mlp_fd_worst([5, 8, 7, 1], act, lambda o: bce_with_logits(o, bits), x) for act in ("relu", "gelu"))
    gpt = _gpt_fd_worst()
    elapsed = time.monotonic() - start
    checks = {"mlp_softmax_ce_1e-5": ce < 1e-5, "mlp_bce_1e-5": bce < 1e-5,
              f"gpt_all_{len(gpt)}_tensors_1e-4": max(gpt.values()) < 1e-4, "runtime_lt_2min": elapsed < 120}
    acceptance_report(3, "gradient correctness", checks,
                      f"(mlp ce {ce:.1e}, bce {bce:.1e}, gpt worst {max(gpt.values()):.1e} "
                      f"at {max(gpt, key=gpt.get)}, {elapsed:.1f}s)")


# --------------------------------------------------------------------------


@pytest.fixture(scope="module")
def e1_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("e1")
    code, elapsed = _run_cli(["e1", "--config", str(shipped_config_path("e1.json")), "--output-dir", str(out)])
    return code, elapsed, out


def test_criterion_4_e1_sigma_sweep(acceptance_report, e1_run):
    code, elapsed, out = e1_run
    res = json.loads((out / "results.json").read_text())
    table, reg = res["table"], res["regimes"]
    sigmas = [r["sigma"] for r in table]
    acc = [r["final_accuracy"] for r in table]
    best = int(np.argmax(acc))
    band_best = max(a for s, a in zip(sigmas, acc) if 1e-2 <= s <= 1e-1)
    small = [a for s, a in zip(sigmas, acc) if s <= 1e-3]
    flagged = [r["sigma"] for r in table if r["sigma"] >= 1 and (r["spike"] or r["diverged"])]
    checks = {
        "exit_0": code == 0,
        "25_sigmas_10_epochs": len(table) == 25 and all(r["epochs_completed"] == 10 or r["diverged"] for r in table),
        "best_in_[1e-2,1e-1]": 1e-2 <= sigmas[best] <= 1e-1,
        "small_sigma_20pts_below": bool(small) and all(band_best - a >= 0.20 for a in small),
        "large_sigma_flagged": bool(flagged),
        "runtime_lt_15min": elapsed < 900,
    }
    acceptance_report(4, "E1 sigma sweep", checks,
                      f"(best sigma {sigmas[best]:.4g} acc {acc[best]:.3f}; sigma<=1e-3 acc "
                      f"[{min(small):.3f}, {max(small):.3f}] gap {band_best - max(small):.3f}; "
                      f"flagged large sigmas {flagged}; regimes {reg['best_in_stable_band']}; {elapsed:.0f}s)")


@pytest.fixture(scope="module")
def e2_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("e2")
    code, elapsed = _run_cli(["e2", "--config", str(shipped_config_path("e2.json")), "--output-dir", str(out)])
    return code, elapsed, out


def test_criterion_5_e2_xavier_vs_kaiming(acceptance_report, e2_run):
    code, elapsed, out = e2_run
    res = json.loads((out / "results.json").read_text())
    k, x = res["schemes"]["kaiming_uniform"], res["schemes"]["xavier_normal"]
    km = math.inf if k["median_epochs_to_target"] is None else k["median_epochs_to_target"]
    xm = math.inf if x["median_epochs_to_target"] is None else x["median_epochs_to_target"]
    t = paired_t_test([2, 0, 2, 0], [0, 0, 0, 0])
    tail = integrate.quad(lambda s: special.gamma(2) / (math.sqrt(3 * math.pi) * special.gamma(1.5))
                          * (1 + s * s / 3) ** -2, t.t_stat, np.inf, epsabs=1e-14, epsrel=1e-13)[0]
    fl = res["t_tests"]["final_loss"]
    checks = {
        "exit_0": code == 0,
        "10_paired_runs": len(res["seeds"]) == 10 and len(res["runs"]) == 20,
        "kaiming_median_epochs_le_xavier": math.isfinite(km) and km <= xm,
        "kaiming_mean_loss_std_le_xavier": k["mean_loss_std"] <= x["mean_loss_std"],
        "t_1.73205": abs(t.t_stat - 1.73205) <= 1e-5 and t.dof == 3,
        "p_vs_quadrature_1e-6": abs(t.p_two_sided - 2 * tail) <= 1e-6,
        "runtime_lt_5min": elapsed < 300,
    }
    acceptance_report(5, "E2 Xavier vs Kaiming", checks,
                      f"(median epochs-to-target kaiming {k['median_epochs_to_target']} vs xavier "
                      f"{x['median_epochs_to_target']}; mean loss std {k['mean_loss_std']:.4f} vs "
                      f"{x['mean_loss_std']:.4f}; reported final-loss t={fl.get('t_stat')} "
                      f"p={fl.get('p_two_sided', float('nan')):.3g}; {elapsed:.0f}s)")


@pytest.fixture(scope="module")
def e3_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("e3")
    code, elapsed = _run_cli(["e3", "--config", str(shipped_config_path("e3.json")), "--output-dir", str(out)])
    return code, elapsed, out


def test_criterion_6_e3_gpt_pretraining(acceptance_report, e3_run):
    code, elapsed, out = e3_run
    res = json.loads((out / "results.json").read_text())
    cfg = res["config"]
    series = LayerStdSeries.from_csv((out / "series.csv").read_text())
    want = {(l, g) for l in range(12) for g in ("Q", "K", "V")}
    steps = series.steps()
    coverage = bool(steps) and all(
        want <= {(e.layer, e.group) for e in series.entries if e.step == s} for s in steps)
    eq = res["equilibration"]
    inv = res["invariants"]
    checks = {
        "exit_0": code == 0,
        "config_12L_d64_adamw_1e-4_b16_2000": (cfg["model"]["n_layers"], cfg["model"]["d_model"], cfg["train"]["lr"],
                                              cfg["train"]["batch_size"]) == (12, 64, 1e-4, 16)
                                             and res["steps_completed"] >= 2000,
        "initial_loss_ln256_5pct": abs(res["initial_loss"] - math.log(256)) <= 0.05 * math.log(256),
        "final_lt_0.8x_initial": res["final_train_loss"] < 0.8 * res["initial_loss"],
        "series_covers_12x_QKV_every_snapshot": coverage and len(steps) == res["steps_completed"] // 50 + 1,
        "equilibration_report": eq is not None and len(eq["entries"]) == 36,
        "invariants_every_checkpoint": len(inv) == len(steps) and all(c["ok"] for c in inv),
        "runtime_lt_30min": elapsed < 1800,
    }
    depth = {g: eq["depth_summary"][g]["shallow_faster"] for g in ("Q", "K", "V")} if eq else {}
    acceptance_report(6, "E3 GPT pretraining", checks,
                      f"(initial {res['initial_loss']:.4f}, final {res['final_train_loss']:.4f}, "
                      f"ratio {res['final_train_loss_ratio']:.3f}; reported only: shallow faster {depth}, "
                      f"all converged {eq['all_converged'] if eq else None}; {elapsed:.0f}s)")


def test_criterion_7_determinism(acceptance_report, e1_run, e2_run, tmp_path):
    checks = {}
    for name, first in (("e1", e1_run), ("e2", e2_run)):
        again = tmp_path / name
        code, _ = _run_cli([name, "--config", str(shipped_config_path(f"{name}.json")), "--output-dir", str(again)])
        checks[f"{name}_byte_identical"] = code == 0 and \
            (first[2] / "results.json").read_bytes() == (again / "results.json").read_bytes()
    # the GPT config is rerun at 100 steps (same model, same cadence) to keep the suite under 20 minutes
    short = _config_with(tmp_path, "e3", **{"train.steps": 100})
    blobs = []
    for i in range(2):
        code, _ = _run_cli(["e3", "--config", str(short), "--output-dir", str(tmp_path / f"e3-{i}")])
        blobs.append((code, (tmp_path / f"e3-{i}" / "results.json").read_bytes(),
                      (tmp_path / f"e3-{i}" / "checkpoint.bin").read_bytes()))
    checks["e3_byte_identical"] = blobs[0][0] == 0 and blobs[0][1:] == blobs[1][1:]
    acceptance_report(7, "determinism", checks, "(e3 rerun at 100 steps)")
