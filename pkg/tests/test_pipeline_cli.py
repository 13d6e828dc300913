import filecmp
import json

import pytest

from sasl.cli import main
from sasl.elimination import EliminationTrace
from sasl.gating import read_decisions
from sasl.pipeline import RunConfig
from sasl.report import read_profile_csv
from sasl.thresholds import ThresholdSet

SMALL = ["--seeds", "0,1", "--gbdt", '{"n_trees_max": 30}', "--rfe-gbdt", '{"n_trees_max": 5}',
         "--rfe-target-count", "8", "--secondary-seeds", "0", "--archetypes", "2"]


@pytest.fixture(scope="module")
def bundle(tmp_path_factory):
    root = tmp_path_factory.mktemp("bundle")
    assert main(["synth", "--out", str(root), "--subjects", "4", "--days", "40", "--seed", "2"]) == 0
    cfg = json.loads((root / "config.json").read_text())
    cfg["targets"] = ["Q1", "S2"]
    (root / "config.json").write_text(json.dumps(cfg))
    return root


@pytest.fixture(scope="module")
def full_run(bundle):
    assert main(["run", "--config", str(bundle / "config.json")] + SMALL) == 0
    return bundle / "out"


def test_run_writes_artifacts(full_run):
    for name in ("config.json", "metrics.json", "prepared/train.csv", "Q1/model.json",
                 "Q1/thresholds.json", "Q1/predictions.csv", "Q1/coefficients.svg",
                 "S2/secondary.csv", "S2/decisions.jsonl"):
        assert (full_run / name).exists(), name
    metrics = json.loads((full_run / "metrics.json").read_text())
    assert set(metrics) == {"Q1", "S2"}
    cfg = json.loads((full_run / "config.json").read_text())
    assert "output_dir" not in cfg and cfg["seeds"] == [0, 1]


def test_artifacts_round_trip(full_run):
    thr = ThresholdSet.read(full_run / "Q1" / "thresholds.json")
    assert thr.kind == "binary"
    assert EliminationTrace.read(full_run / "Q1" / "trace.jsonl") is not None
    assert read_profile_csv(full_run / "Q1" / "coefficients.csv")[0].section == "global"
    decisions = read_decisions(full_run / "S2" / "decisions.jsonl")
    assert all(d.primary != d.secondary for d in decisions)


def test_piped_stages_match_run(bundle, full_run, tmp_path, monkeypatch):
    monkeypatch.setenv("SASL_OUTPUT_DIR", str(tmp_path / "piped"))
    args = ["--config", str(bundle / "config.json")] + SMALL
    assert main(["prepare"] + args) == 0
    for stage in ("tune-seed", "thresholds", "s2", "gate", "report"):
        assert main([stage] + args) == 0, stage
    for target in ("Q1", "S2"):
        for name in ("model.json", "thresholds.json", "secondary.csv", "predictions.csv",
                     "decisions.jsonl", "coefficients.csv"):
            assert filecmp.cmp(full_run / target / name, tmp_path / "piped" / target / name,
                               shallow=False), (target, name)


def test_eliminate_single_seed(bundle, tmp_path):
    out = tmp_path / "t.jsonl"
    assert main(["eliminate", "--config", str(bundle / "config.json"), "--target", "Q1",
                 "--seed", "7", "--output", str(out)] + SMALL) == 0
    trace = EliminationTrace.read(out)
    assert all(s.pvalue > 0.05 for s in trace.steps)


def test_env_overrides_output_dir_only(bundle, tmp_path, monkeypatch):
    monkeypatch.setenv("SASL_OUTPUT_DIR", str(tmp_path / "elsewhere"))
    cfg = RunConfig.load(bundle / "config.json").with_env()
    assert cfg.out == tmp_path / "elsewhere"
    assert cfg.targets == ("Q1", "S2")


def test_missing_input_fails(tmp_path, capsys):
    (tmp_path / "config.json").write_text(json.dumps({"train_path": "nope.csv"}))
    assert main(["run", "--config", str(tmp_path / "config.json")]) != 0
    assert "DataNotFound" in capsys.readouterr().err
    cfg = RunConfig.load(tmp_path / "config.json")
    assert cfg.out == tmp_path / "out" and cfg.schema_path == str(tmp_path / "schema.json")


def test_unknown_config_key(tmp_path, capsys):
    (tmp_path / "config.json").write_text(json.dumps({"bogus": 1}))
    assert main(["run", "--config", str(tmp_path / "config.json")]) != 0
    assert "bogus" in capsys.readouterr().err


def test_fig1_bundle(tmp_path):
    assert main(["synth", "--bundle", "fig1", "--out", str(tmp_path), "--no-minutes"]) == 0
    assert not (tmp_path / "minutes.csv").exists()
    assert main(["run", "--config", str(tmp_path / "config.json"), "--seeds", "0",
                 "--gbdt", '{"n_trees_max": 10}', "--secondary-seeds", "0"]) == 0
    metrics = json.loads((tmp_path / "out" / "metrics.json").read_text())
    assert set(metrics) == {"y"}
