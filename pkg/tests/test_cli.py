import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from wakesense.cli import main
from wakesense.config import ConfigError, RunConfig
from wakesense.dataset import LabeledDataset

TINY = {
    "corpus": {"repeats": 2},
    "dataset": {"sl": 16, "stride": 8},
    "model": {"conv_blocks": [[4, 5], [4, 3]], "hidden": 4, "dense": 8},
    "train": {"epochs": 1, "lr": 0.001},
    "tune": {"population": 2, "max_iters": 1, "proxy_epochs": 1, "baselines": 5},
    "sweep_sl": [24, 16],
    "sweep_seeds": [0, 1],
    "ablate_seeds": [0, 1],
}


@pytest.fixture
def tiny_yaml(tmp_path):
    path = tmp_path / "tiny.yaml"
    path.write_text(yaml.safe_dump(TINY))
    return str(path)


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def stdout_json(capsys, *argv):
    code, out, err = run(capsys, *argv)
    assert code == 0, err
    return json.loads(out)


# ---------------------------------------------------------------- gen

def test_gen_default_corpus(tmp_path, capsys):
    res = stdout_json(capsys, "gen", "--out", str(tmp_path / "g"))
    manifest = json.loads(open(res["manifest"]).read())
    assert len(manifest["traces"]) == 2 * 5 * 2 * 10
    assert len(list((tmp_path / "g" / "corpus" / "traces").glob("*.csv"))) == 200
    run_manifest = json.loads((tmp_path / "g" / "manifest.json").read_text())
    assert run_manifest["n_traces"] == 200 and run_manifest["command"] == "gen"


def test_gen_single_scenario(tmp_path, capsys):
    cfg = tmp_path / "one.yaml"
    cfg.write_text(yaml.safe_dump({"corpus": {"offsets": [250], "speeds": [600],
                                              "directions": ["N"], "repeats": 1}}))
    res = stdout_json(capsys, "gen", "--config", str(cfg), "--out", str(tmp_path / "g"))
    assert len(json.loads(open(res["manifest"]).read())["traces"]) == 1


def test_gen_is_reproducible(tmp_path, capsys, tiny_yaml):
    for name in ("a", "b"):
        stdout_json(capsys, "gen", "--config", tiny_yaml, "--seed", "3", "--out", str(tmp_path / name))
    a = (tmp_path / "a" / "corpus" / "manifest.json").read_bytes()
    assert a == (tmp_path / "b" / "corpus" / "manifest.json").read_bytes()
    stdout_json(capsys, "gen", "--config", tiny_yaml, "--seed", "4", "--out", str(tmp_path / "c"))
    assert a != (tmp_path / "c" / "corpus" / "manifest.json").read_bytes()


# ---------------------------------------------------------------- train / eval

def test_train_zero_epochs_smoke(tmp_path, capsys, tiny_yaml):
    out = tmp_path / "t"
    m = stdout_json(capsys, "train", "--config", tiny_yaml, "--epochs", "0", "--out", str(out))
    for key in ("rmse_x", "acc_speed", "acc_dir", "fitness", "confusion_speed", "confusion_dir",
                "config_hash", "group_hash", "seed", "case", "sl", "variant", "weights"):
        assert key in m
    assert 0.0 <= m["acc_speed"] <= 1.0 and m["rmse_x"] >= 0.0
    assert np.asarray(m["confusion_speed"]).shape == (5, 5)
    assert np.asarray(m["confusion_speed"]).sum() == m["n"]
    for name in ("config.json", "dataset.npz", "checkpoint.npz", "metrics.json", "history.json",
                 "manifest.json"):
        assert (out / name).is_file()
    assert json.loads((out / "history.json").read_text()) == []


def test_train_then_eval_agree(tmp_path, capsys, tiny_yaml):
    m = stdout_json(capsys, "train", "--config", tiny_yaml, "--out", str(tmp_path / "t"))
    e = stdout_json(capsys, "eval", "--config", tiny_yaml, "--out", str(tmp_path / "e"),
                    "--checkpoint", str(tmp_path / "t" / "checkpoint.npz"))
    for key in ("rmse_x", "acc_speed", "acc_dir", "confusion_speed"):
        assert e[key] == m[key]


def test_train_case_two_uses_second_offset(tmp_path, capsys, tiny_yaml):
    m = stdout_json(capsys, "train", "--config", tiny_yaml, "--case", "2", "--epochs", "0",
                    "--out", str(tmp_path / "t"))
    assert m["case"] == 2
    assert LabeledDataset.load(tmp_path / "t" / "dataset.npz").meta["y"] == 300.0


def test_eval_missing_checkpoint_is_config_error(tmp_path, capsys, tiny_yaml):
    code, out, err = run(capsys, "eval", "--config", tiny_yaml, "--out", str(tmp_path / "e"),
                         "--checkpoint", str(tmp_path / "nope.npz"))
    assert code == 2 and json.loads(err)["kind"] == "config"


# ---------------------------------------------------------------- multi-run commands

def test_tune_outputs(tmp_path, capsys, tiny_yaml):
    out = tmp_path / "tune"
    res = stdout_json(capsys, "tune", "--config", tiny_yaml, "--out", str(out))
    assert len(res["fitness_values"]) == 1 + 5
    assert res["baseline_median"] == pytest.approx(float(np.median(res["fitness_values"][1:])))
    assert res["tuned_beats_median"] == (res["fitness_values"][0] <= res["baseline_median"])
    report = json.loads((out / "tuning_report.json").read_text())
    assert len(report["trace"]) == 2
    assert all(b <= a for a, b in zip(report["trace"], report["trace"][1:]))
    w = json.loads((out / "tuned_weights.json").read_text())["weights"]
    assert all(0.01 <= x <= 10 for x in w)


def test_ablate_outputs(tmp_path, capsys, tiny_yaml):
    stdout_json(capsys, "ablate", "--config", tiny_yaml, "--out", str(tmp_path / "a"))
    res = json.loads((tmp_path / "a" / "ablation.json").read_text())
    assert [p["seed"] for p in res["pairs"]] == [0, 1]
    for p in res["pairs"]:
        assert p["cnn_bilstm"]["variant"] == "cnn_bilstm" and p["cnn_only"]["variant"] == "cnn_only"
        assert p["delta"]["fitness"] == pytest.approx(p["cnn_only"]["fitness"]
                                                      - p["cnn_bilstm"]["fitness"])
    assert res["summary"]["delta"]["fitness"]["n"] == 2


def test_sweep_outputs(tmp_path, capsys, tiny_yaml):
    res = stdout_json(capsys, "sweep-seqlen", "--config", tiny_yaml, "--out", str(tmp_path / "s"))
    assert [r["sl"] for r in res["rows"]] == [16, 24]
    full = json.loads((tmp_path / "s" / "sweep_seqlen.json").read_text())
    for row in full["rows"]:
        fits = [r["fitness"] for r in row["runs"]]
        assert row["fitness"]["mean"] == pytest.approx(np.mean(fits))
        assert row["fitness"]["std"] == pytest.approx(np.std(fits, ddof=1))
    assert "±" in (tmp_path / "s" / "sweep_seqlen.txt").read_text()


def test_sweep_single_length(tmp_path, capsys, tiny_yaml):
    cfg = dict(TINY, sweep_sl=[16], sweep_seeds=[0])
    path = tmp_path / "one.yaml"
    path.write_text(yaml.safe_dump(cfg))
    res = stdout_json(capsys, "sweep-seqlen", "--config", str(path), "--out", str(tmp_path / "s"))
    assert len(res["rows"]) == 1 and res["rows"][0]["fitness"]["std"] == 0.0


# ---------------------------------------------------------------- report

def test_report_requires_runs(tmp_path, capsys):
    code, out, err = run(capsys, "report", "--out", str(tmp_path / "r"))
    assert code == 2 and out == ""
    assert "usage" in json.loads(err)["message"]


def test_report_groups_seeds(tmp_path, capsys, tiny_yaml):
    dirs = []
    for seed in (0, 1, 2):
        d = tmp_path / f"s{seed}"
        stdout_json(capsys, "train", "--config", tiny_yaml, "--seed", str(seed), "--out", str(d))
        dirs.append(str(d))
    res = stdout_json(capsys, "report", *dirs, "--out", str(tmp_path / "r"))
    assert res["n_runs"] == 3 and len(res["groups"]) == 1
    g = res["groups"][0]
    assert g["seeds"] == [0, 1, 2]
    rmse = [json.loads((tmp_path / f"s{s}" / "metrics.json").read_text())["rmse_x"] for s in range(3)]
    assert g["rmse_x"]["mean"] == pytest.approx(np.mean(rmse))
    assert g["rmse_x"]["std"] == pytest.approx(np.std(rmse, ddof=1))
    assert "train loss" in (tmp_path / "r" / "charts.txt").read_text()

    single = stdout_json(capsys, "report", dirs[0], "--out", str(tmp_path / "r1"))
    assert single["n_runs"] == 1 and single["groups"][0]["rmse_x"]["std"] == 0.0


def test_report_rejects_non_run_dir(tmp_path, capsys):
    code, _, err = run(capsys, "report", str(tmp_path), "--out", str(tmp_path / "r"))
    assert code == 2 and "metrics.json" in json.loads(err)["message"]


# ---------------------------------------------------------------- errors and config

@pytest.mark.parametrize("argv,kind", [
    (["train", "--case", "3"], "usage"),
    (["frobnicate"], "usage"),
    (["train", "--config", "/nonexistent/cfg.yaml"], "config"),
])
def test_errors_are_single_json_lines(capsys, argv, kind):
    code, out, err = run(capsys, *argv)
    assert code == 2 and out == ""
    lines = err.strip().splitlines()
    assert len(lines) == 1
    msg = json.loads(lines[0])
    assert msg["status"] == "error" and msg["kind"] == kind


def test_invalid_config_values(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    for raw in ({"dataset": {"sl": 0}}, {"weights": [1, 0, 1]}, {"bogus": 1},
                {"corpus": {"speeds": [400, 400]}}, {"train": {"lr": -1}}):
        bad.write_text(yaml.safe_dump(raw))
        code, _, err = run(capsys, "train", "--config", str(bad), "--out", str(tmp_path / "x"))
        assert code == 2, raw
        assert json.loads(err)["kind"] == "config"


def test_coarse_sampling_is_a_config_error(tmp_path, capsys):
    bad = tmp_path / "coarse.yaml"
    bad.write_text(yaml.safe_dump({"corpus": {"dt": 0.01}}))
    code, _, err = run(capsys, "gen", "--config", str(bad), "--out", str(tmp_path / "g"))
    assert code == 2 and "sweep samples" in json.loads(err)["message"]


def test_unwritable_output_dir(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    code, _, err = run(capsys, "gen", "--out", str(blocker / "sub"))
    assert code != 0 and json.loads(err)["status"] == "error"


def test_config_hash_ignores_output_dir():
    a = RunConfig.from_dict({"out": "x"})
    b = RunConfig.from_dict({"out": "y"})
    c = RunConfig.from_dict({"seed": 1})
    assert a.hash() == b.hash() != c.hash()
    assert a.group_hash() == c.group_hash()


def test_overrides_apply():
    cfg = RunConfig.from_dict({}).with_overrides(sl=32, epochs=3, case=2, seed=None)
    assert cfg.dataset.sl == 32 and cfg.train["epochs"] == 3 and cfg.case == 2 and cfg.seed == 0
    with pytest.raises(ConfigError):
        cfg.with_overrides(jobs=0)


def test_shipped_config_spells_out_the_defaults():
    path = Path(__file__).resolve().parents[1] / "configs" / "default.yaml"
    shipped, default = RunConfig.load(path), RunConfig.from_dict({})
    assert shipped.model_config() == default.model_config()
    assert shipped.hyper() == default.hyper()
    assert shipped.scenarios() == default.scenarios()
    assert shipped.geometry() == default.geometry()
    assert shipped.dataset == default.dataset and shipped.tune == default.tune
