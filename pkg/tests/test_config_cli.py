import json

import pytest

from initlab import config as cfgmod
from initlab.cli import main
from initlab.instrument import LayerStdSeries, StdEntry


@pytest.mark.parametrize("tag", ["e1", "e2", "e3"])
def test_shipped_configs_are_normalized_fixed_points(tag):
    path = cfgmod.shipped_config_path(f"{tag}.json")
    text = path.read_text()
    cfg = cfgmod.parse_config(text)
    assert cfgmod.serialize_config(cfg) == text
    assert cfgmod.parse_config(cfgmod.serialize_config(cfg)) == cfg


@pytest.mark.parametrize("override", [
    {"experiment": "e1", "sweep": {"sigma_count": 5}},
    {"experiment": "e2", "compare": {"runs": 3}, "dataset": {"separation": 2.5}},
    {"experiment": "e3", "train": {"steps": 100, "window": 50}},
    {"experiment": "analyze", "series": "s.csv"},
])
def test_parse_serialize_round_trip(override):
    cfg = cfgmod.parse_config(override)
    assert cfgmod.parse_config(cfgmod.serialize_config(cfg)) == cfg


@pytest.mark.parametrize("bad,match", [
    ("{", "invalid JSON"),
    ("[]", "JSON object"),
    ({"experiment": "e9"}, "experiment"),
    ({"experiment": "e1", "sweep": {"sigma_count": 0}}, "sweep/sigma_count"),
    ({"experiment": "e1", "sweep": {"lr": -1}}, "sweep/lr"),
    ({"experiment": "e1", "typo": 1}, "typo"),
    ({"experiment": "e1", "sweep": {"sigma_lo": 1.0, "sigma_hi": 0.5}}, "sigma_lo"),
    ({"experiment": "e2", "compare": {"schemes": ["xavier_normal", "lecun"]}}, "compare/schemes"),
    ({"experiment": "e2", "compare": {"runs": 1}}, "runs"),
    ({"experiment": "e2", "dataset": {"source": "csv"}}, "train_path"),
    ({"experiment": "e3", "model": {"d_model": 66}}, "d_model"),
    ({"experiment": "e3", "instrument": {"groups": ["Q", "W"]}}, "groups"),
    ({"experiment": "analyze"}, "series"),
])
def test_schema_and_semantic_errors(bad, match):
    with pytest.raises(cfgmod.ConfigError, match=match):
        cfgmod.parse_config(bad)


def test_relative_paths_resolve_against_config_dir(tmp_path):
    (tmp_path / "sub").mkdir()
    p = tmp_path / "sub" / "c.json"
    p.write_text(json.dumps({"experiment": "e3", "corpus": {"path": "../text.txt"}}))
    cfg = cfgmod.load_config(p)
    assert cfg["corpus"]["path"] == str((tmp_path / "text.txt").resolve())


def test_theory_relu_prints_half(capsys):
    assert main(["theory", "--activation", "relu"]) == 0
    out = capsys.readouterr().out
    assert "c_phi = 0.5\n" in out and "d_phi = 0.5\n" in out
    assert "layer" in out.splitlines()[4]


def test_theory_constant_needs_sigma(capsys):
    assert main(["theory", "--activation", "relu", "--scheme", "constant"]) == 1
    assert main(["theory", "--activation", "gelu", "--scheme", "constant", "--sigma", "0.01",
                 "--fans", "64,64,64", "--mc-batch", "256"]) == 0


def test_usage_errors_exit_one(capsys):
    assert main([]) == 1
    assert main(["train"]) == 1
    assert main(["theory", "--activation", "tanh"]) == 1
    assert main(["theory", "--activation", "relu", "--fans", "a,b"]) == 1


def test_missing_config_exit_two_names_path(tmp_path, capsys):
    missing = tmp_path / "nowhere.json"
    assert main(["e1", "--config", str(missing)]) == 2
    assert str(missing) in capsys.readouterr().err


def test_wrong_experiment_tag_exit_one(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"experiment": "e2"}))
    assert main(["e1", "--config", str(p)]) == 1


def test_missing_dataset_file_exit_two(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"experiment": "e1", "dataset": {"source": "idx", "train_images": "x.gz",
                                                             "train_labels": "y.gz"}}))
    assert main(["e1", "--config", str(p), "--output-dir", str(tmp_path / "out")]) == 2


def _series_csv(tmp_path):
    s = LayerStdSeries()
    for step in (0, 50, 100, 150, 200):
        for layer in (0, 1):
            s.add(StdEntry(step, layer, "Q", 0.02 * (1 + (step > 0) * (2 - layer) * 0.1), 0.0))
    p = tmp_path / "series.csv"
    p.write_text(s.to_csv())
    return p


def test_analyze_reports_json(tmp_path, capsys):
    p = _series_csv(tmp_path)
    assert main(["analyze", "--series", str(p), "--early-step", "50", "--window", "100"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["all_converged"] is True
    assert rep["depth_summary"]["Q"]["shallow_faster"] is True


def test_analyze_errors(tmp_path, capsys):
    assert main(["analyze", "--series", str(tmp_path / "none.csv")]) == 2
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1,2\n")
    assert main(["analyze", "--series", str(bad)]) == 2
    p = _series_csv(tmp_path)
    assert main(["analyze", "--series", str(p), "--window", "500"]) == 1


def test_e2_cli_small_run(tmp_path, capsys):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"experiment": "e2", "compare": {"runs": 2, "epochs": 3},
                             "dataset": {"n_train": 64, "n_test": 32}}))
    out = tmp_path / "out"
    assert main(["e2", "--config", str(p), "--output-dir", str(out), "--seed", "7"]) == 0
    res = json.loads((out / "results.json").read_text())
    assert res["seeds"] == [7, 8]
    assert res["config"]["seed"] == 7 and "output_dir" not in res["config"]
    assert (out / "runs" / "kaiming_uniform_run01.csv").exists()
