"""E1 sigma sweep, E2 Xavier-vs-Kaiming comparison and E3 GPT pretraining.

Runners return plain result objects; ``write_*`` functions lay them out on
disk as ``results.json``, ``runs/*.csv`` and ``plots/*.svg`` (plus
``series.csv``/``histograms.jsonl`` for E3).  Nothing written depends on wall
time or run order, so a config replays to byte-identical files.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import Corpus, Dataset
from .gpt import Gpt, GptConfig, InvariantCheck, check_invariants, gpt_forward_loss, gpt_optimizer, \
    gpt_train_step, sample_batch
from .init import InitScheme
from .instrument import EquilibrationReport, Instrument, equilibration_report
from .nn import AdamConfig, Mlp, TrainRecord, _jsonable, train
from .numerics import ParameterError, RngState
from .stats import epochs_to_target, paired_t_test
from .svg import emit_svg_lineplot

STABLE_BAND = (1e-2, 1e-1)
VANISHING_MAX_SIGMA = 1e-3
EXPLODING_MIN_SIGMA = 1.0
VANISHING_GAP = 0.20


def dump_json(obj) -> str:
    """Canonical JSON: sorted keys, fixed indent, non-finite floats as strings."""
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def _map(fn, tasks, workers: int):
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))


def _final(values) -> float:
    return float(values[-1]) if values else float("nan")


# --------------------------------------------------------------------------
# E1: constant-std sweep


@dataclass(frozen=True)
class SweepConfig:
    sigma_count: int = 25
    sigma_lo: float = 1e-4
    sigma_hi: float = 10.0
    epochs: int = 10
    lr: float = 0.01
    seed: int = 0
    batch_size: int = 32
    distribution: str = "normal"
    sizes: tuple[int, ...] = (784, 64, 32, 32, 10)
    activation: str = "relu"
    workers: int = 1

    def __post_init__(self):
        if self.sigma_count < 2:
            raise ParameterError(f"sigma_count must be >= 2, got {self.sigma_count}")
        if not 0 < self.sigma_lo < self.sigma_hi:
            raise ParameterError(f"need 0 < sigma_lo < sigma_hi, got {self.sigma_lo}, {self.sigma_hi}")
        if self.epochs < 1 or self.batch_size < 1 or self.lr <= 0:
            raise ParameterError("epochs, batch_size and lr must be positive")


def sigma_grid(config: SweepConfig) -> np.ndarray:
    """``sigma_count`` values log10-equally spaced over [lo, hi], endpoints exact."""
    if config.sigma_count < 2:
        raise ParameterError(f"sigma_count must be >= 2, got {config.sigma_count}")
    exps = np.linspace(math.log10(config.sigma_lo), math.log10(config.sigma_hi), config.sigma_count)
    grid = 10.0 ** exps
    grid[0], grid[-1] = config.sigma_lo, config.sigma_hi
    return grid


def _e1_task(task):
    config, sigma, train_set, test_set = task
    mlp = Mlp.build(list(config.sizes), config.activation)
    scheme = InitScheme.constant(float(sigma), config.distribution)
    # every sigma shares one stream: same data order and same normalized weight draw
    rng = RngState(config.seed)
    return train(mlp, train_set, scheme, AdamConfig(lr=config.lr), config.epochs, rng,
                 loss="softmax_ce", batch_size=config.batch_size, test=test_set)


@dataclass
class SweepResult:
    config: SweepConfig
    sigmas: list[float]
    records: list[TrainRecord]

    def final_accuracy(self, i: int) -> float:
        rec = self.records[i]
        return _final(rec.test_accuracy) if rec.test_accuracy else _final(rec.accuracy)

    def table(self) -> list[dict]:
        rows = []
        for i, (sigma, rec) in enumerate(zip(self.sigmas, self.records)):
            rows.append({
                "index": i, "sigma": sigma,
                "final_accuracy": self.final_accuracy(i),
                "final_train_accuracy": _final(rec.accuracy),
                "final_loss": _final(rec.loss),
                "initial_loss": rec.initial_loss,
                "epochs_completed": rec.epochs,
                "spike": rec.any_spike, "excursion": any(rec.excursion), "diverged": rec.any_diverged,
            })
        return rows

    def regimes(self) -> dict:
        """Regime ordering checks (reported; the acceptance suite gates on them)."""
        acc = [self.final_accuracy(i) for i in range(len(self.sigmas))]
        finite = [(a, s) for a, s in zip(acc, self.sigmas) if math.isfinite(a)]
        best_acc, best_sigma = max(finite, key=lambda p: p[0]) if finite else (float("nan"), float("nan"))
        lo, hi = STABLE_BAND
        band = [a for a, s in zip(acc, self.sigmas) if lo <= s <= hi and math.isfinite(a)]
        band_best = max(band) if band else float("nan")
        small = [(s, a) for s, a in zip(self.sigmas, acc) if s <= VANISHING_MAX_SIGMA]
        gaps = [band_best - (a if math.isfinite(a) else 0.0) for _, a in small]
        large = [(s, r) for s, r in zip(self.sigmas, self.records) if s >= EXPLODING_MIN_SIGMA]
        return {
            "best_sigma": best_sigma, "best_accuracy": best_acc,
            "best_in_stable_band": bool(lo <= best_sigma <= hi),
            "stable_band": list(STABLE_BAND), "stable_band_best_accuracy": band_best,
            "vanishing_min_gap": min(gaps) if gaps else float("nan"),
            "vanishing_all_below_by_gap": bool(gaps) and all(g >= VANISHING_GAP for g in gaps),
            "exploding_flagged_sigmas": [s for s, r in large if r.any_spike or r.any_diverged],
            "exploding_any_flag": any(r.any_spike or r.any_diverged for _, r in large),
        }

    def all_diverged(self) -> bool:
        return all(r.any_diverged for r in self.records)

    def summary(self) -> dict:
        return {"experiment": "e1", "sigmas": self.sigmas, "table": self.table(), "regimes": self.regimes()}


def run_e1_sweep(config: SweepConfig, dataset: Dataset, test: Dataset | None = None) -> SweepResult:
    """Train one MLP per sigma with ConstantStd init; divergent runs are kept."""
    if dataset.n_features != config.sizes[0]:
        raise ParameterError(f"dataset has {dataset.n_features} features, model expects {config.sizes[0]}")
    sigmas = [float(s) for s in sigma_grid(config)]
    tasks = [(config, s, dataset, test) for s in sigmas]
    return SweepResult(config, sigmas, _map(_e1_task, tasks, config.workers))


def write_e1_outputs(result: SweepResult, outdir, config_echo: dict) -> Path:
    out = _prepare(outdir)
    for i, rec in enumerate(result.records):
        (out / "runs" / f"sigma_{i:02d}.csv").write_text(rec.to_csv())
    summary = result.summary()
    summary["config"] = config_echo
    summary["artifacts"] = sorted(
        [f"runs/sigma_{i:02d}.csv" for i in range(len(result.records))]
        + ["plots/accuracy_vs_sigma.svg", "plots/loss_trajectories.svg"])
    (out / "results.json").write_text(dump_json(summary))
    acc = [result.final_accuracy(i) for i in range(len(result.sigmas))]
    (out / "plots" / "accuracy_vs_sigma.svg").write_text(emit_svg_lineplot(
        [("final accuracy", result.sigmas, acc)], title="Final accuracy vs initial std",
        xlabel="sigma", ylabel="accuracy", log_x=True))
    n = len(result.sigmas)
    picks = sorted({0, n // 4, n // 2, (3 * n) // 4, n - 1})
    lines = [(f"sigma={result.sigmas[i]:.3g}", list(range(result.records[i].epochs + 1)),
              result.records[i].loss_trajectory()) for i in picks]
    (out / "plots" / "loss_trajectories.svg").write_text(emit_svg_lineplot(
        lines, title="Loss trajectories", xlabel="epoch", ylabel="loss", log_y=True))
    return out


# --------------------------------------------------------------------------
# E2: paired Xavier-normal vs Kaiming-uniform comparison

SCHEMES = {
    "xavier_normal": InitScheme.xavier("normal"),
    "kaiming_uniform": InitScheme.kaiming("uniform", "fan_in", "relu"),
}
SCHEME_ORDER = ("xavier_normal", "kaiming_uniform")


@dataclass(frozen=True)
class CompareConfig:
    runs: int = 10
    schemes: tuple[str, ...] = SCHEME_ORDER
    loss_reduction_target: float = 0.95
    epochs: int = 40
    lr: float = 1e-3
    base_seed: int = 0
    batch_size: int = 32
    sizes: tuple[int, ...] = (11, 16, 32, 32, 1)
    activation: str = "relu"
    workers: int = 1

    def __post_init__(self):
        if set(self.schemes) != set(SCHEME_ORDER) or len(self.schemes) != 2:
            raise ParameterError(f"schemes must be exactly {sorted(SCHEME_ORDER)}, got {list(self.schemes)}")
        if self.runs < 2:
            raise ParameterError(f"runs must be >= 2 for paired t-tests, got {self.runs}")
        if not 0 < self.loss_reduction_target < 1:
            raise ParameterError("loss_reduction_target must lie in (0, 1)")
        if self.epochs < 1 or self.batch_size < 1 or self.lr <= 0:
            raise ParameterError("epochs, batch_size and lr must be positive")


@dataclass(frozen=True)
class CompareRun:
    scheme: str
    run_index: int
    seed: int
    record: TrainRecord

    def metrics(self, reduction: float) -> dict:
        rec = self.record
        losses = [v for v in rec.loss if math.isfinite(v)]
        return {
            "scheme": self.scheme, "run_index": self.run_index, "seed": self.seed,
            "final_loss": _final(rec.loss), "final_accuracy": _final(rec.accuracy),
            "final_test_accuracy": _final(rec.test_accuracy),
            "epochs_to_target": epochs_to_target(rec.loss_trajectory(), reduction),
            "loss_std": float(np.std(losses)) if losses else float("nan"),
            "spike": rec.any_spike, "excursion": any(rec.excursion), "diverged": rec.any_diverged,
        }


def _e2_task(task):
    config, scheme, i, train_set, test_set = task
    seed = config.base_seed + i
    mlp = Mlp.build(list(config.sizes), config.activation)
    rec = train(mlp, train_set, SCHEMES[scheme], AdamConfig(lr=config.lr), config.epochs, RngState(seed),
                loss="bce", batch_size=config.batch_size, test=test_set)
    return CompareRun(scheme, i, seed, rec)


def _median_epochs(values) -> float | None:
    # never-reached runs count as +inf so they push the median up
    arr = np.array([math.inf if v is None else v for v in values], dtype=float)
    med = float(np.median(arr))
    return med if math.isfinite(med) else None


@dataclass
class CompareResult:
    config: CompareConfig
    runs: list[CompareRun]

    def aggregate(self) -> dict:
        """Per-scheme medians/means and paired t-tests (kaiming minus xavier).

        Runs are sorted by seed first, so the aggregate is independent of the
        order in which runs finished or were listed.
        """
        target = self.config.loss_reduction_target
        by_scheme: dict[str, list[dict]] = {s: [] for s in SCHEME_ORDER}
        for run in sorted(self.runs, key=lambda r: (r.scheme, r.seed)):
            by_scheme[run.scheme].append(run.metrics(target))
        seeds = {s: [m["seed"] for m in ms] for s, ms in by_scheme.items()}
        if seeds["xavier_normal"] != seeds["kaiming_uniform"]:
            raise ParameterError("runs are not paired: seed lists differ between schemes")
        schemes = {}
        for s, ms in by_scheme.items():
            schemes[s] = {
                "median_epochs_to_target": _median_epochs([m["epochs_to_target"] for m in ms]),
                "runs_reaching_target": sum(m["epochs_to_target"] is not None for m in ms),
                "mean_loss_std": float(np.mean([m["loss_std"] for m in ms])),
                "median_final_loss": float(np.median([m["final_loss"] for m in ms])),
                "median_final_accuracy": float(np.median([m["final_accuracy"] for m in ms])),
            }
        k, x = by_scheme["kaiming_uniform"], by_scheme["xavier_normal"]

        def ttest(key) -> dict:
            a, b = [m[key] for m in k], [m[key] for m in x]
            if not all(math.isfinite(v) for v in a + b):
                # diverged runs, or no test split for the test metric
                return {"skipped": "non-finite values in the paired samples"}
            return paired_t_test(a, b).to_json()

        return {
            "schemes": schemes,
            "seeds": seeds["xavier_normal"],
            "runs": [m for s in SCHEME_ORDER for m in by_scheme[s]],
            "t_tests": {"final_loss": ttest("final_loss"),
                        "final_accuracy": ttest("final_accuracy"),
                        "final_test_accuracy": ttest("final_test_accuracy"),
                        "difference": "kaiming_uniform - xavier_normal"},
        }

    def checks(self, agg: dict | None = None) -> dict:
        agg = agg or self.aggregate()
        k, x = agg["schemes"]["kaiming_uniform"], agg["schemes"]["xavier_normal"]
        km, xm = k["median_epochs_to_target"], x["median_epochs_to_target"]
        km_v = math.inf if km is None else km
        xm_v = math.inf if xm is None else xm
        return {
            "kaiming_median_epochs_le_xavier": bool(km_v <= xm_v) and km is not None,
            "kaiming_mean_loss_std_le_xavier": bool(k["mean_loss_std"] <= x["mean_loss_std"]),
            "final_loss_p_below_0_05": bool(agg["t_tests"]["final_loss"].get("p_two_sided", 1.0) < 0.05),
            "final_accuracy_p_below_0_05": bool(agg["t_tests"]["final_accuracy"].get("p_two_sided", 1.0) < 0.05),
        }

    def all_diverged(self) -> bool:
        return all(r.record.any_diverged for r in self.runs)

    def summary(self) -> dict:
        agg = self.aggregate()
        return {"experiment": "e2", **agg, "checks": self.checks(agg),
                "metadata": {
                    "kaiming_variant": "uniform, bound sqrt(3) * sqrt(2 / fan_in)",
                    "kaiming_variant_note": "the normal variant is available as "
                                            "InitScheme.kaiming('normal') but is not part of this comparison",
                    "seed_rule": "seed = base_seed + run_index, shared by both schemes",
                    "loss_std_definition": "population std of the per-epoch mean training losses",
                }}


def run_e2_compare(config: CompareConfig, dataset: Dataset, test: Dataset | None = None) -> CompareResult:
    """``runs`` seed-paired trainings per scheme; pair members share data order."""
    if dataset.n_features != config.sizes[0]:
        raise ParameterError(f"dataset has {dataset.n_features} features, model expects {config.sizes[0]}")
    tasks = [(config, s, i, dataset, test) for i in range(config.runs) for s in SCHEME_ORDER]
    return CompareResult(config, _map(_e2_task, tasks, config.workers))


def write_e2_outputs(result: CompareResult, outdir, config_echo: dict) -> Path:
    out = _prepare(outdir)
    names = []
    for run in sorted(result.runs, key=lambda r: (r.scheme, r.seed)):
        name = f"runs/{run.scheme}_run{run.run_index:02d}.csv"
        (out / name).write_text(run.record.to_csv())
        names.append(name)
    summary = result.summary()
    summary["config"] = config_echo
    summary["artifacts"] = sorted(names + ["plots/mean_loss.svg", "plots/mean_accuracy.svg"])
    (out / "results.json").write_text(dump_json(summary))
    loss_lines, acc_lines = [], []
    for s in SCHEME_ORDER:
        recs = [r.record for r in sorted(result.runs, key=lambda r: r.seed) if r.scheme == s]
        n = min(len(r.loss_trajectory()) for r in recs)
        loss = np.mean([r.loss_trajectory()[:n] for r in recs], axis=0)
        acc = np.mean([[r.initial_accuracy] + r.accuracy[:n - 1] for r in recs], axis=0)
        loss_lines.append((s, list(range(n)), loss))
        acc_lines.append((s, list(range(n)), acc))
    (out / "plots" / "mean_loss.svg").write_text(emit_svg_lineplot(
        loss_lines, title="Mean training loss over paired runs", xlabel="epoch", ylabel="loss", log_y=True))
    (out / "plots" / "mean_accuracy.svg").write_text(emit_svg_lineplot(
        acc_lines, title="Mean training accuracy over paired runs", xlabel="epoch", ylabel="accuracy"))
    return out


# --------------------------------------------------------------------------
# E3: GPT pretraining with weight-statistics instrumentation


@dataclass(frozen=True)
class PretrainConfig:
    steps: int = 2000
    snapshot_every: int = 50
    batch_size: int = 16
    lr: float = 1e-4
    weight_decay: float = 0.01
    seed: int = 0
    eval_batches: int = 4
    early_step: int | None = None
    window: int | None = None
    stability_threshold: float = 0.05
    groups: tuple[str, ...] = ("Q", "K", "V")
    histogram_targets: tuple[tuple[int, str], ...] = ((0, "V"),)
    hist_k: float = 10.0
    hist_bins: int = 64

    def __post_init__(self):
        if self.snapshot_every < 1 or self.steps < self.snapshot_every:
            raise ParameterError(f"steps ({self.steps}) must cover at least one snapshot interval "
                                 f"({self.snapshot_every}) so there are >= 2 snapshots")
        if self.batch_size < 1 or self.lr <= 0 or self.eval_batches < 1:
            raise ParameterError("batch_size, lr and eval_batches must be positive")

    @property
    def resolved_early_step(self) -> int:
        return self.early_step if self.early_step is not None else self.steps // 4

    @property
    def resolved_window(self) -> int:
        return self.window if self.window is not None else max(self.snapshot_every, self.steps // 4)


def snapshot_steps(steps: int, cadence: int) -> list[int]:
    return list(range(0, steps + 1, cadence))


@dataclass
class PretrainResult:
    gpt_config: GptConfig
    config: PretrainConfig
    model: Gpt
    step_loss: list[float] = field(default_factory=list)
    step_grad_norm: list[float] = field(default_factory=list)
    evals: list[dict] = field(default_factory=list)
    invariants: list[dict] = field(default_factory=list)
    instrument: Instrument | None = None
    report: EquilibrationReport | None = None
    diverged: bool = False

    def coverage_ok(self) -> bool:
        """Every configured (layer, group) appears at every snapshot step."""
        series = self.instrument.series
        want = {(l, g) for l in range(self.gpt_config.n_layers) for g in self.config.groups}
        for step in series.steps():
            have = {(e.layer, e.group) for e in series.entries if e.step == step}
            if not want <= have:
                return False
        return bool(series.steps())

    def steps_train_csv(self) -> str:
        lines = ["step,loss,grad_norm"]
        for i, (loss, g) in enumerate(zip(self.step_loss, self.step_grad_norm)):
            lines.append(f"{i + 1},{loss!r},{g!r}")
        return "\n".join(lines) + "\n"

    def evals_csv(self) -> str:
        lines = ["step,train_loss,test_loss"]
        for e in self.evals:
            lines.append(f"{e['step']},{e['train_loss']!r},{e['test_loss']!r}")
        return "\n".join(lines) + "\n"

    def summary(self) -> dict:
        ln_v = math.log(self.gpt_config.vocab_size)
        initial = self.evals[0]["train_loss"] if self.evals else float("nan")
        tail = [v for v in self.step_loss[-self.config.snapshot_every:] if math.isfinite(v)]
        final_train = float(np.mean(tail)) if tail else float("nan")
        out = {
            "experiment": "e3",
            "ln_vocab": ln_v,
            "initial_loss": initial,
            "initial_loss_rel_error": abs(initial - ln_v) / ln_v,
            "first_batch_loss": self.step_loss[0] if self.step_loss else float("nan"),
            "final_train_loss": final_train,
            "final_train_loss_ratio": final_train / initial,
            "final_eval": self.evals[-1] if self.evals else None,
            "steps_completed": len(self.step_loss),
            "snapshot_steps": self.instrument.series.steps() if self.instrument else [],
            "series_coverage_ok": self.coverage_ok() if self.instrument else False,
            "invariants_all_ok": bool(self.invariants) and all(c["ok"] for c in self.invariants),
            "invariant_checks": len(self.invariants),
            "diverged": self.diverged,
            "n_params": self.model.n_params(),
            "model_checksum": self.model.checksum(),
            "equilibration": self.report.to_json() if self.report else None,
        }
        if self.report:
            drift = {}
            for g in sorted({e.group for e in self.report.entries}):
                d = [e.late_drift for e in self.report.entries if e.group == g]
                drift[g] = {"median_late_drift": float(np.median(d)), "max_late_drift": float(np.max(d))}
            out["late_window_drift"] = drift
        return out


def _eval_loss(model: Gpt, batches) -> float:
    return float(np.mean([gpt_forward_loss(model, b)[0] for b in batches]))


def run_e3_pretrain(gpt_config: GptConfig, corpus: Corpus, config: PretrainConfig,
                    progress=None) -> PretrainResult:
    """AdamW pretraining with snapshots at step 0 and every ``snapshot_every`` steps.

    At each snapshot: weight std series and histograms, train/test loss on
    fixed evaluation batches, and causality/softmax invariant checks.
    """
    need = gpt_config.ctx_len + 1
    if len(corpus.train) < need or len(corpus.test) < need:
        raise OSError(f"corpus split ({len(corpus.train)}/{len(corpus.test)} tokens) is too small "
                      f"for ctx_len {gpt_config.ctx_len}")
    rng = RngState(config.seed)
    model = Gpt.initialize(gpt_config, rng.child("init"))
    opt = gpt_optimizer(model, lr=config.lr, weight_decay=config.weight_decay)
    batch_gen = rng.child("batches").generator
    ev_train_gen = rng.child("eval-train").generator
    ev_test_gen = rng.child("eval-test").generator
    eval_train = [sample_batch(corpus.train, config.batch_size, gpt_config.ctx_len, ev_train_gen)
                  for _ in range(config.eval_batches)]
    eval_test = [sample_batch(corpus.test, config.batch_size, gpt_config.ctx_len, ev_test_gen)
                 for _ in range(config.eval_batches)]
    probe = sample_batch(corpus.test, 2, gpt_config.ctx_len, rng.child("probe").generator).token_ids
    inst = Instrument(groups=config.groups, histogram_targets=config.histogram_targets,
                      sigma0=gpt_config.proj_std, k=config.hist_k, bins=config.hist_bins)
    result = PretrainResult(gpt_config, config, model, instrument=inst)

    def snapshot(step: int):
        inst.snapshot(model, step)
        with np.errstate(over="ignore", invalid="ignore"):
            result.evals.append({"step": step, "train_loss": _eval_loss(model, eval_train),
                                 "test_loss": _eval_loss(model, eval_test)})
            chk: InvariantCheck = check_invariants(model, probe)
        result.invariants.append({"step": step, "causal": chk.causal,
                                  "max_row_sum_error": chk.max_row_sum_error,
                                  "probabilities_in_unit_interval": chk.probabilities_in_unit_interval,
                                  "ok": chk.ok})
        if progress:
            progress(step, result)

    snapshot(0)
    for step in range(1, config.steps + 1):
        batch = sample_batch(corpus.train, config.batch_size, gpt_config.ctx_len, batch_gen)
        rec = gpt_train_step(model, opt, batch)
        result.step_loss.append(rec.loss)
        result.step_grad_norm.append(rec.grad_norm)
        if rec.diverged:
            result.diverged = True
            break
        if step % config.snapshot_every == 0:
            snapshot(step)
    try:
        result.report = equilibration_report(inst.series, config.resolved_early_step, config.resolved_window,
                                             config.stability_threshold)
    except ValueError:
        result.report = None  # too few snapshots, e.g. after an early divergence
    return result


def write_e3_outputs(result: PretrainResult, outdir, config_echo: dict, checkpoint: bool = True) -> Path:
    from .gpt import save_checkpoint

    out = _prepare(outdir)
    (out / "runs" / "train_steps.csv").write_text(result.steps_train_csv())
    (out / "runs" / "eval.csv").write_text(result.evals_csv())
    (out / "series.csv").write_text(result.instrument.series.to_csv())
    (out / "histograms.jsonl").write_text("".join(h.to_jsonl() for h in result.instrument.histograms))
    summary = result.summary()
    summary["config"] = config_echo
    summary["invariants"] = result.invariants
    plots = ["plots/loss.svg"]
    steps = list(range(1, len(result.step_loss) + 1))
    ev_steps = [e["step"] for e in result.evals]
    (out / "plots" / "loss.svg").write_text(emit_svg_lineplot(
        [("train (per step)", steps, result.step_loss),
         ("train (eval)", ev_steps, [e["train_loss"] for e in result.evals]),
         ("test (eval)", ev_steps, [e["test_loss"] for e in result.evals])],
        title="Pretraining loss", xlabel="step", ylabel="cross-entropy", markers=False))
    series = result.instrument.series
    for group in result.config.groups:
        lines = []
        for layer in range(result.gpt_config.n_layers):
            s, v = series.trajectory(layer, group)
            lines.append((f"layer {layer}", s, v))
        name = f"plots/std_{group}.svg"
        (out / name).write_text(emit_svg_lineplot(
            lines, title=f"Weight std per layer ({group})", xlabel="step", ylabel="std", markers=False))
        plots.append(name)
    for hs in result.instrument.histograms:
        snaps = hs.snapshots
        picks = sorted({0, len(snaps) // 2, len(snaps) - 1})
        lines = []
        for i in picks:
            edges = np.asarray(snaps[i]["bin_edges"])
            centers = 0.5 * (edges[:-1] + edges[1:])
            lines.append((f"step {snaps[i]['step']}", centers, snaps[i]["counts"]))
        name = f"plots/hist_L{hs.layer}_{hs.group}.svg"
        (out / name).write_text(emit_svg_lineplot(
            lines, title=f"Weight histogram, layer {hs.layer} {hs.group}", xlabel="weight", ylabel="count",
            markers=False))
        plots.append(name)
    artifacts = ["runs/train_steps.csv", "runs/eval.csv", "series.csv", "histograms.jsonl"] + plots
    if checkpoint:
        save_checkpoint(result.model, out / "checkpoint.bin")
        artifacts.append("checkpoint.bin")
    summary["artifacts"] = sorted(artifacts)
    (out / "results.json").write_text(dump_json(summary))
    return out


def _prepare(outdir) -> Path:
    out = Path(outdir)
    (out / "runs").mkdir(parents=True, exist_ok=True)
    (out / "plots").mkdir(parents=True, exist_ok=True)
    return out


def config_dict(obj) -> dict:
    return _jsonable(asdict(obj))
