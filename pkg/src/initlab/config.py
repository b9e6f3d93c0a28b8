"""Experiment config files: defaults, JSON-schema validation, builders.

A config is a JSON object tagged by ``experiment`` (e1, e2, e3, analyze).
User files may omit any field; ``parse_config`` merges them over the
defaults and validates the result, so the normalized form is a fixed point
of parse -> serialize -> parse.  Relative input paths resolve against the
config file's directory; ``output_dir`` resolves against the working
directory.
"""
from __future__ import annotations

import copy
import json
from importlib import resources
from pathlib import Path

import jsonschema

from .data import Corpus, Dataset, bundled_mnist, bundled_path, load_corpus, load_csv_dataset, load_mnist_idx, \
    synth_binary
from .experiments import CompareConfig, PretrainConfig, SweepConfig
from .gpt import GptConfig
from .instrument import GROUPS
from .numerics import ParameterError, RngState

EXPERIMENTS = ("e1", "e2", "e3", "analyze")


class ConfigError(ValueError):
    """Config failed to parse or validate."""


DEFAULTS = {
    "e1": {
        "experiment": "e1", "seed": 0, "output_dir": "results/e1", "workers": 1,
        "dataset": {"source": "bundled", "train_images": None, "train_labels": None,
                    "test_images": None, "test_labels": None, "train_limit": 2000, "test_limit": 1000},
        "model": {"sizes": [784, 64, 32, 32, 10], "activation": "relu"},
        "sweep": {"sigma_count": 25, "sigma_lo": 1e-4, "sigma_hi": 10.0, "epochs": 10, "lr": 0.01,
                  "batch_size": 32, "distribution": "normal"},
    },
    "e2": {
        "experiment": "e2", "seed": 0, "output_dir": "results/e2", "workers": 1,
        "dataset": {"source": "synthetic", "n_train": 800, "n_test": 200, "n_features": 11, "separation": 4.0,
                    "train_path": None, "test_path": None, "target_column": -1, "header": True,
                    "positive_threshold": None},
        "model": {"sizes": [11, 16, 32, 32, 1], "activation": "relu"},
        "compare": {"runs": 10, "schemes": ["xavier_normal", "kaiming_uniform"], "loss_reduction_target": 0.95,
                    "epochs": 40, "lr": 0.001, "batch_size": 32},
    },
    "e3": {
        "experiment": "e3", "seed": 0, "output_dir": "results/e3", "checkpoint": True,
        "corpus": {"path": None, "split": 0.9},
        "model": {"n_layers": 12, "d_model": 64, "n_heads": 4, "d_ff": 256, "vocab_size": 256, "ctx_len": 64,
                  "residual_scale": None, "proj_std": 0.02, "embedding_init": "xavier_normal",
                  "tie_head": False, "ln_eps": 1e-5},
        "train": {"steps": 2000, "snapshot_every": 50, "batch_size": 16, "lr": 1e-4, "weight_decay": 0.01,
                  "eval_batches": 4, "early_step": None, "window": None, "stability_threshold": 0.05},
        "instrument": {"groups": ["Q", "K", "V"], "histogram_targets": [[0, "V"]], "hist_k": 10.0,
                       "hist_bins": 64},
    },
    "analyze": {
        "experiment": "analyze", "seed": 0, "output_dir": None, "series": None,
        "early_step": None, "window": None, "threshold": 0.05,
    },
}

_POS_INT = {"type": "integer", "minimum": 1}
_NN_INT = {"type": "integer", "minimum": 0}
_POS_NUM = {"type": "number", "exclusiveMinimum": 0}
_OPT_PATH = {"type": ["string", "null"]}
_OPT_INT = {"type": ["integer", "null"], "minimum": 0}
_SIZES = {"type": "array", "items": _POS_INT, "minItems": 2}
_ACT = {"enum": ["linear", "relu", "gelu"]}


def _obj(props: dict, required=None) -> dict:
    return {"type": "object", "properties": props, "additionalProperties": False,
            "required": list(required if required is not None else props)}


_COMMON = {"experiment": {"enum": list(EXPERIMENTS)}, "seed": _NN_INT, "output_dir": _OPT_PATH}

SCHEMAS = {
    "e1": _obj({
        **_COMMON, "workers": _POS_INT,
        "dataset": _obj({"source": {"enum": ["bundled", "idx"]}, "train_images": _OPT_PATH,
                         "train_labels": _OPT_PATH, "test_images": _OPT_PATH, "test_labels": _OPT_PATH,
                         "train_limit": {"type": ["integer", "null"], "minimum": 1},
                         "test_limit": {"type": ["integer", "null"], "minimum": 1}}),
        "model": _obj({"sizes": _SIZES, "activation": _ACT}),
        "sweep": _obj({"sigma_count": {"type": "integer", "minimum": 2}, "sigma_lo": _POS_NUM,
                       "sigma_hi": _POS_NUM, "epochs": _POS_INT, "lr": _POS_NUM, "batch_size": _POS_INT,
                       "distribution": {"enum": ["normal", "uniform"]}}),
    }),
    "e2": _obj({
        **_COMMON, "workers": _POS_INT,
        "dataset": _obj({"source": {"enum": ["synthetic", "csv"]}, "n_train": {"type": "integer", "minimum": 2},
                         "n_test": {"type": "integer", "minimum": 2}, "n_features": _POS_INT,
                         "separation": {"type": "number", "minimum": 0}, "train_path": _OPT_PATH,
                         "test_path": _OPT_PATH, "target_column": {"type": ["integer", "string"]},
                         "header": {"type": "boolean"}, "positive_threshold": {"type": ["number", "null"]}}),
        "model": _obj({"sizes": _SIZES, "activation": _ACT}),
        "compare": _obj({"runs": {"type": "integer", "minimum": 2},
                         "schemes": {"type": "array", "items": {"enum": ["xavier_normal", "kaiming_uniform"]},
                                     "minItems": 2, "maxItems": 2, "uniqueItems": True},
                         "loss_reduction_target": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                         "epochs": _POS_INT, "lr": _POS_NUM, "batch_size": _POS_INT}),
    }),
    "e3": _obj({
        **_COMMON, "checkpoint": {"type": "boolean"},
        "corpus": _obj({"path": _OPT_PATH, "split": {"type": "number", "exclusiveMinimum": 0,
                                                      "exclusiveMaximum": 1}}),
        "model": _obj({"n_layers": _POS_INT, "d_model": _POS_INT, "n_heads": _POS_INT, "d_ff": _POS_INT,
                       "vocab_size": {"type": "integer", "minimum": 1, "maximum": 256}, "ctx_len": _POS_INT,
                       "residual_scale": {"type": ["number", "null"]}, "proj_std": _POS_NUM,
                       "embedding_init": {"enum": ["xavier_normal", "normal"]}, "tie_head": {"type": "boolean"},
                       "ln_eps": _POS_NUM}),
        "train": _obj({"steps": _POS_INT, "snapshot_every": _POS_INT, "batch_size": _POS_INT, "lr": _POS_NUM,
                       "weight_decay": {"type": "number", "minimum": 0}, "eval_batches": _POS_INT,
                       "early_step": _OPT_INT, "window": {"type": ["integer", "null"], "minimum": 1},
                       "stability_threshold": _POS_NUM}),
        "instrument": _obj({"groups": {"type": "array", "items": {"enum": list(GROUPS)}, "minItems": 1,
                                       "uniqueItems": True},
                            "histogram_targets": {"type": "array", "items": {
                                "type": "array", "prefixItems": [_NN_INT, {"enum": list(GROUPS)}],
                                "items": False, "minItems": 2}},
                            "hist_k": _POS_NUM, "hist_bins": _POS_INT}),
    }),
    "analyze": _obj({
        **_COMMON, "series": {"type": "string"}, "early_step": _OPT_INT,
        "window": {"type": ["integer", "null"], "minimum": 1}, "threshold": _POS_NUM,
    }),
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in over.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def parse_config(source) -> dict:
    """Normalize a config (JSON text or dict): merge over defaults, then validate."""
    if isinstance(source, (str, bytes)):
        try:
            source = json.loads(source)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from None
    if not isinstance(source, dict):
        raise ConfigError("config must be a JSON object")
    tag = source.get("experiment")
    if tag not in EXPERIMENTS:
        raise ConfigError(f"'experiment' must be one of {list(EXPERIMENTS)}, got {tag!r}")
    merged = _merge(DEFAULTS[tag], source)
    try:
        jsonschema.validate(merged, SCHEMAS[tag], cls=jsonschema.Draft202012Validator)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {exc.message}") from None
    try:
        _check_semantics(merged)
    except ParameterError as exc:
        raise ConfigError(str(exc)) from None
    return merged


def _check_semantics(cfg: dict) -> None:
    tag = cfg["experiment"]
    if tag == "e1":
        sweep_config(cfg)
    elif tag == "e2":
        compare_config(cfg)
        if cfg["dataset"]["source"] == "csv" and not cfg["dataset"]["train_path"]:
            raise ParameterError("dataset/train_path is required for a csv dataset")
    elif tag == "e3":
        gpt_config(cfg)
        pretrain_config(cfg)
    elif tag == "analyze" and cfg["series"] is None:
        raise ParameterError("series: a saved series.csv path is required")
    if tag == "e1" and cfg["dataset"]["source"] == "idx":
        for key in ("train_images", "train_labels"):
            if not cfg["dataset"][key]:
                raise ParameterError(f"dataset/{key} is required for an idx dataset")


def serialize_config(cfg: dict) -> str:
    return json.dumps(cfg, sort_keys=True, indent=2) + "\n"


def load_config(path) -> dict:
    """Read and normalize a config file; input paths become absolute."""
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise FileNotFoundError(f"config file not found: {path}") from None
    cfg = parse_config(text)
    return resolve_paths(cfg, path.parent)


def resolve_paths(cfg: dict, base: Path) -> dict:
    cfg = copy.deepcopy(cfg)

    def fix(section, key):
        value = cfg.get(section, {}).get(key) if section else cfg.get(key)
        if value is None:
            return
        p = Path(value)
        new = str(p if p.is_absolute() else (base / p).resolve())
        if section:
            cfg[section][key] = new
        else:
            cfg[key] = new

    for key in ("train_images", "train_labels", "test_images", "test_labels", "train_path", "test_path"):
        if "dataset" in cfg:
            fix("dataset", key)
    if "corpus" in cfg:
        fix("corpus", "path")
    if cfg["experiment"] == "analyze":
        fix(None, "series")
    return cfg


# --------------------------------------------------------------------------
# builders


def sweep_config(cfg: dict) -> SweepConfig:
    s, m = cfg["sweep"], cfg["model"]
    return SweepConfig(sigma_count=s["sigma_count"], sigma_lo=s["sigma_lo"], sigma_hi=s["sigma_hi"],
                       epochs=s["epochs"], lr=s["lr"], seed=cfg["seed"], batch_size=s["batch_size"],
                       distribution=s["distribution"], sizes=tuple(m["sizes"]), activation=m["activation"],
                       workers=cfg["workers"])


def compare_config(cfg: dict) -> CompareConfig:
    c, m = cfg["compare"], cfg["model"]
    return CompareConfig(runs=c["runs"], schemes=tuple(c["schemes"]),
                         loss_reduction_target=c["loss_reduction_target"], epochs=c["epochs"], lr=c["lr"],
                         base_seed=cfg["seed"], batch_size=c["batch_size"], sizes=tuple(m["sizes"]),
                         activation=m["activation"], workers=cfg["workers"])


def gpt_config(cfg: dict) -> GptConfig:
    return GptConfig(**cfg["model"])


def pretrain_config(cfg: dict) -> PretrainConfig:
    t, i = cfg["train"], cfg["instrument"]
    return PretrainConfig(steps=t["steps"], snapshot_every=t["snapshot_every"], batch_size=t["batch_size"],
                          lr=t["lr"], weight_decay=t["weight_decay"], seed=cfg["seed"],
                          eval_batches=t["eval_batches"], early_step=t["early_step"], window=t["window"],
                          stability_threshold=t["stability_threshold"], groups=tuple(i["groups"]),
                          histogram_targets=tuple((int(l), g) for l, g in i["histogram_targets"]),
                          hist_k=i["hist_k"], hist_bins=i["hist_bins"])


def e1_datasets(cfg: dict) -> tuple[Dataset, Dataset | None]:
    d = cfg["dataset"]
    if d["source"] == "bundled":
        train_files, test_files = bundled_mnist("train"), bundled_mnist("test")
    else:
        train_files = (d["train_images"], d["train_labels"])
        test_files = (d["test_images"], d["test_labels"]) if d["test_images"] else None
    train = load_mnist_idx(*train_files, limit=d["train_limit"], split="train")
    test = load_mnist_idx(*test_files, limit=d["test_limit"], split="test") if test_files else None
    return train, test


def e2_datasets(cfg: dict) -> tuple[Dataset, Dataset | None]:
    d = cfg["dataset"]
    if d["source"] == "synthetic":
        # one draw split in two so train and test share the cluster direction
        full = synth_binary(d["n_train"] + d["n_test"], d["n_features"], d["separation"],
                            RngState(cfg["seed"]).child("data"))
        n = d["n_train"]
        return (Dataset(full.inputs[:n], full.targets[:n], "train"),
                Dataset(full.inputs[n:], full.targets[n:], "test"))
    train, std = load_csv_dataset(d["train_path"], d["target_column"], d["header"],
                                  positive_threshold=d["positive_threshold"], split="train")
    test = None
    if d["test_path"]:
        test, _ = load_csv_dataset(d["test_path"], d["target_column"], d["header"], standardizer=std,
                                   positive_threshold=d["positive_threshold"], split="test")
    return train, test


def e3_corpus(cfg: dict) -> Corpus:
    path = cfg["corpus"]["path"] or bundled_path("corpus.txt")
    return load_corpus(path, cfg["corpus"]["split"], min_side=cfg["model"]["ctx_len"] + 1)


def shipped_config_path(name: str) -> Path:
    return Path(str(resources.files("initlab") / "configs" / name))
