"""Command-line entry point: ``initlab {e1,e2,e3,theory,analyze}``.

Exit codes: 0 success, 1 config/usage error, 2 I/O or input-format error,
3 when every run diverged.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from . import config as cfgmod
from .data import FormatError
from .experiments import dump_json, run_e1_sweep, run_e2_compare, run_e3_pretrain, write_e1_outputs, \
    write_e2_outputs, write_e3_outputs
from .init import FanSpec, InitScheme, target_std
from .instrument import ConfigError as InstrumentConfigError, LayerStdSeries, equilibration_report
from .numerics import ParameterError, RngState
from .theory import gains, mc_propagation_check

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_DIVERGED = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors; usage errors are config errors here."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="initlab", description="Weight-initialization experiments.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    for name, help_ in (("e1", "constant-std sweep on the MNIST subset"),
                        ("e2", "paired Xavier-normal vs Kaiming-uniform comparison"),
                        ("e3", "GPT pretraining with weight-statistics instrumentation")):
        e = sub.add_parser(name, help=help_)
        e.add_argument("--config", required=True, help="experiment JSON config")
        e.add_argument("--seed", type=int, help="override the config seed")
        e.add_argument("--output-dir", help="override the config output directory")
        if name != "e3":
            e.add_argument("--workers", type=int, help="process pool size")
    t = sub.add_parser("theory", help="print c_phi/d_phi and the predicted variance map")
    t.add_argument("--activation", required=True, choices=["linear", "relu", "gelu"])
    t.add_argument("--fans", default="256,256,256,256",
                   help="comma-separated widths n0,n1,...,nL (default: 256 x 4)")
    t.add_argument("--scheme", default="kaiming", choices=["kaiming", "xavier", "lecun", "constant"])
    t.add_argument("--sigma", type=float, help="std for --scheme constant")
    t.add_argument("--mc-batch", type=int, default=0, help="also measure with this batch size (>= 256)")
    t.add_argument("--mc-draws", type=int, default=1, help="independent networks averaged in the measurement")
    t.add_argument("--seed", type=int, default=0)
    a = sub.add_parser("analyze", help="equilibration report from a saved series.csv")
    a.add_argument("--series", required=True)
    a.add_argument("--early-step", type=int)
    a.add_argument("--window", type=int)
    a.add_argument("--threshold", type=float, default=0.05)
    a.add_argument("--seed", type=int, help="accepted for symmetry; analysis is deterministic")
    return p


def _load(args) -> dict:
    cfg = cfgmod.load_config(args.config)
    if cfg["experiment"] != args.command:
        raise cfgmod.ConfigError(f"{args.config} is an {cfg['experiment']!r} config, not {args.command!r}")
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.output_dir is not None:
        cfg["output_dir"] = args.output_dir
    if getattr(args, "workers", None) is not None:
        cfg["workers"] = args.workers
    return cfgmod.parse_config(cfg)


def _echo(cfg: dict) -> dict:
    # the echo omits where results were written so relocated reruns compare equal
    return {k: v for k, v in cfg.items() if k not in ("output_dir", "workers")}


def _cmd_e1(args) -> int:
    cfg = _load(args)
    train, test = cfgmod.e1_datasets(cfg)
    result = run_e1_sweep(cfgmod.sweep_config(cfg), train, test)
    out = write_e1_outputs(result, cfg["output_dir"], _echo(cfg))
    reg = result.regimes()
    print(f"e1: best sigma {reg['best_sigma']:.4g} (accuracy {reg['best_accuracy']:.4f}); results in {out}")
    return EXIT_DIVERGED if result.all_diverged() else EXIT_OK


def _cmd_e2(args) -> int:
    cfg = _load(args)
    train, test = cfgmod.e2_datasets(cfg)
    result = run_e2_compare(cfgmod.compare_config(cfg), train, test)
    out = write_e2_outputs(result, cfg["output_dir"], _echo(cfg))
    agg = result.aggregate()
    for s, v in agg["schemes"].items():
        print(f"e2: {s}: median epochs-to-target {v['median_epochs_to_target']}, "
              f"mean loss std {v['mean_loss_std']:.4g}")
    tl = agg["t_tests"]["final_loss"]
    if "skipped" in tl:
        print(f"e2: final-loss paired t-test skipped ({tl['skipped']}); results in {out}")
    else:
        print(f"e2: final-loss paired t = {tl['t_stat']}, p = {tl['p_two_sided']:.4g}; results in {out}")
    return EXIT_DIVERGED if result.all_diverged() else EXIT_OK


def _cmd_e3(args) -> int:
    cfg = _load(args)
    corpus = cfgmod.e3_corpus(cfg)
    start = time.monotonic()

    def progress(step, res):
        ev = res.evals[-1]
        print(f"e3: step {step:5d} train {ev['train_loss']:.4f} test {ev['test_loss']:.4f} "
              f"({time.monotonic() - start:.0f}s)", file=sys.stderr, flush=True)

    result = run_e3_pretrain(cfgmod.gpt_config(cfg), corpus, cfgmod.pretrain_config(cfg), progress)
    out = write_e3_outputs(result, cfg["output_dir"], _echo(cfg), checkpoint=cfg["checkpoint"])
    s = result.summary()
    print(f"e3: initial loss {s['initial_loss']:.4f} (ln V = {s['ln_vocab']:.4f}), "
          f"final train loss {s['final_train_loss']:.4f}; results in {out}")
    return EXIT_DIVERGED if result.diverged else EXIT_OK


def _cmd_theory(args) -> int:
    try:
        widths = [int(w) for w in args.fans.split(",") if w.strip()]
    except ValueError:
        raise cfgmod.ConfigError(f"--fans must be comma-separated integers, got {args.fans!r}") from None
    if len(widths) < 2:
        raise cfgmod.ConfigError("--fans needs at least two widths (input and one layer)")
    fans = [FanSpec(a, b) for a, b in zip(widths[:-1], widths[1:])]
    if args.scheme == "constant":
        if args.sigma is None:
            raise cfgmod.ConfigError("--scheme constant requires --sigma")
        scheme = InitScheme.constant(args.sigma)
    elif args.scheme == "kaiming":
        scheme = InitScheme.kaiming("normal", "fan_in", args.activation)
    else:
        scheme = getattr(InitScheme, args.scheme)()
    g = gains(args.activation)
    print(f"activation: {args.activation} ({g.method.value})")
    print(f"c_phi = {g.c_phi!r}")
    print(f"d_phi = {g.d_phi!r}")
    print(f"scheme: {scheme.label()}")
    if args.mc_batch:
        profile = mc_propagation_check(fans, scheme, args.activation, args.mc_batch, RngState(args.seed),
                                       draws=args.mc_draws)
    else:
        from .theory import predicted_profile

        profile = predicted_profile(fans, [target_std(scheme, f) for f in fans], args.activation)
    sys.stdout.write(profile.to_csv())
    return EXIT_OK


def _cmd_analyze(args) -> int:
    path = Path(args.series)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise FileNotFoundError(f"series file not found: {path}") from None
    try:
        series = LayerStdSeries.from_csv(text)
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{path}: not a std series CSV ({exc})") from None
    steps = series.steps()
    if len(steps) < 2:
        raise FormatError(f"{path}: need at least two snapshot steps, found {len(steps)}")
    last = steps[-1]
    early = args.early_step if args.early_step is not None else last // 4
    window = args.window if args.window is not None else max(steps[1], last // 4)
    try:
        report = equilibration_report(series, early, window, args.threshold)
    except ValueError as exc:
        raise cfgmod.ConfigError(str(exc)) from None
    sys.stdout.write(dump_json(report.to_json()))
    return EXIT_OK


COMMANDS = {"e1": _cmd_e1, "e2": _cmd_e2, "e3": _cmd_e3, "theory": _cmd_theory, "analyze": _cmd_analyze}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](args)
    except (cfgmod.ConfigError, InstrumentConfigError, ParameterError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, FormatError, json.JSONDecodeError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
