import copy
import hashlib
import json
import os

import numpy as np
import pytest

from dynfuse.cli import main
from dynfuse.config import ConfigError, config_from_dict, load_config

SMALL = {
    "data": {
        "n_classes": 3,
        "feature_dims": [8, 8],
        "noise_scales": [0.8, 0.5],
        "flip_rates": [0.1, 0.0],
        "train_size": 64,
        "val_size": 32,
        "test_size": 80,
    },
    "arch": {"encoder_hidden": [12, 6], "predictor_hidden": [4]},
    "optim": {"epochs": 4, "lr": 1e-3},
    "noise": [
        {"kind": "salt_pepper", "degree": 0.0},
        {"kind": "salt_pepper", "degree": 10.0},
    ],
    "seeds": [0, 1],
    "sweep_strategies": ["ccb", "equal_weight"],
    "gdp_models": 3,
    "gdp_strategies": ["equal_weight", "ccb"],
}


def write_config(tmp_path, overrides=None, name="cfg.json"):
    cfg = copy.deepcopy(SMALL)
    for key, value in (overrides or {}).items():
        if isinstance(value, dict):
            cfg.setdefault(key, {}).update(value)
        else:
            cfg[key] = value
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def digests(out_dir):
    out = {}
    for root, _, files in os.walk(out_dir):
        for name in files:
            p = os.path.join(root, name)
            rel = os.path.relpath(p, out_dir)
            out[rel] = hashlib.sha256(open(p, "rb").read()).hexdigest()
    return out


class TestConfig:
    def test_defaults_fill_in(self):
        cfg = config_from_dict({})
        assert cfg.optim["batch_size"] == 16
        assert cfg.optim["epochs"] == 100
        assert cfg.optim["beta1"] == 0.9
        assert cfg.optim["weight_decay"] == 0.01
        assert cfg.fusion["strategy"] == "ccb"

    def test_unknown_top_level_field(self):
        with pytest.raises(ConfigError) as err:
            config_from_dict({"dta": {}})
        assert err.value.field == "dta"

    def test_unknown_nested_field(self):
        with pytest.raises(ConfigError) as err:
            config_from_dict({"optim": {"learning_rate": 0.1}})
        assert "optim.learning_rate" in str(err.value)

    def test_bad_strategy_named(self):
        with pytest.raises(ConfigError, match="fusion.strategy"):
            config_from_dict({"fusion": {"strategy": "best"}})

    def test_bad_noise_kind(self):
        with pytest.raises(ConfigError, match=r"noise\[0\].kind"):
            config_from_dict({"noise": [{"kind": "speckle", "degree": 1.0}]})

    def test_unreadable_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "missing.json")

    def test_invalid_json(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{nope")
        with pytest.raises(ConfigError, match="JSON"):
            load_config(p)

    def test_canonical_excludes_scheduling(self):
        cfg = config_from_dict({"jobs": 4, "output_dir": "/somewhere"})
        canon = cfg.canonical()
        assert "jobs" not in canon and "output_dir" not in canon


class TestCliTrain:
    def test_train_writes_checkpoint_log_manifest(self, tmp_path):
        cfg = write_config(tmp_path)
        out = tmp_path / "out"
        assert main(["train", "--config", cfg, "--out", str(out)]) == 0
        names = sorted(os.listdir(out))
        assert names == ["manifest.json", "model.dfc", "train_log.csv"]
        log = (out / "train_log.csv").read_text().splitlines()
        assert log[0].startswith("epoch,total,fused_ce")
        assert len(log) == 1 + 4  # header + epochs

    def test_zero_epochs_gives_initialized_checkpoint_and_empty_log(self, tmp_path):
        cfg = write_config(tmp_path, {"optim": {"epochs": 0}})
        out = tmp_path / "out"
        assert main(["train", "--config", cfg, "--out", str(out)]) == 0
        log = (out / "train_log.csv").read_text().splitlines()
        assert len(log) == 1
        from dynfuse.model import FusionModel

        model = FusionModel.load(out / "model.dfc")
        assert model.config.n_classes == 3

    def test_bad_config_exit_code_and_message(self, tmp_path, capsys):
        cfg = write_config(tmp_path, {"optim": {"epochs": -3}})
        assert main(["train", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
        assert "optim.epochs" in capsys.readouterr().err

    def test_seed_override(self, tmp_path):
        cfg = write_config(tmp_path)
        out_a = tmp_path / "a"
        out_b = tmp_path / "b"
        main(["train", "--config", cfg, "--out", str(out_a), "--seed-override", "7"])
        main(["train", "--config", cfg, "--out", str(out_b), "--seed-override", "8"])
        da, db = digests(out_a), digests(out_b)
        assert da["model.dfc"] != db["model.dfc"]

    def test_output_dir_from_env(self, tmp_path, monkeypatch, capsys):
        cfg = write_config(tmp_path)
        monkeypatch.setenv("DYNFUSE_OUT", str(tmp_path / "envout"))
        monkeypatch.chdir(tmp_path)
        assert main(["train", "--config", cfg]) == 0
        assert (tmp_path / "envout" / "train" / "model.dfc").exists()


@pytest.fixture(scope="module")
def sweep_out(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("sweep")
    cfg = write_config(tmp)
    out = tmp / "out"
    assert main(["sweep", "--config", cfg, "--out", str(out)]) == 0
    return tmp, cfg, out


class TestCliSweep:
    def test_row_shape(self, sweep_out):
        _, _, out = sweep_out
        lines = (out / "sweep.csv").read_text().splitlines()
        assert lines[0] == "strategy,noise_kind,degree,seed,accuracy"
        # 2 strategies + 2 unimodal rows, 2 noise levels, 2 seeds
        assert len(lines) - 1 == 4 * 2 * 2

    def test_summary_consistent_with_rows(self, sweep_out):
        _, _, out = sweep_out
        rows = [l.split(",") for l in (out / "sweep.csv").read_text().splitlines()[1:]]
        accs = [
            float(r[4]) for r in rows if r[0] == "ccb" and r[2] == "0.000000"
        ]
        summary = [
            l.split(",")
            for l in (out / "sweep_summary.csv").read_text().splitlines()[1:]
        ]
        cell = next(r for r in summary if r[0] == "ccb" and r[2] == "0.000000")
        assert float(cell[3]) == pytest.approx(np.mean(accs), abs=1e-6)
        assert float(cell[4]) == pytest.approx(min(accs), abs=1e-6)

    def test_metrics_json_schema(self, sweep_out):
        _, _, out = sweep_out
        doc = json.loads((out / "metrics.json").read_text())
        assert isinstance(doc["cells"], list)
        cell = doc["cells"][0]
        for key in (
            "strategy", "noise_kind", "degree", "avg_accuracy", "worst_accuracy",
            "std_accuracy", "mean_ac", "mean_conflict_fraction",
            "mean_conflict_resolution",
        ):
            assert key in cell

    def test_rerun_byte_identical(self, sweep_out):
        tmp, cfg, out = sweep_out
        out2 = tmp / "again"
        assert main(["sweep", "--config", cfg, "--out", str(out2)]) == 0
        assert digests(out) == digests(out2)

    def test_parallel_rerun_byte_identical(self, sweep_out):
        tmp, cfg, out = sweep_out
        out2 = tmp / "par"
        assert main(["sweep", "--config", cfg, "--out", str(out2), "--jobs", "2"]) == 0
        assert digests(out) == digests(out2)

    def test_manifest_lists_files_with_digests(self, sweep_out):
        _, _, out = sweep_out
        doc = json.loads((out / "manifest.json").read_text())
        assert doc["tool_version"]
        names = {e["path"] for e in doc["files"]}
        assert "sweep.csv" in names and "manifest.json" not in names
        entry = next(e for e in doc["files"] if e["path"] == "sweep.csv")
        actual = hashlib.sha256((out / "sweep.csv").read_bytes()).hexdigest()
        assert entry["sha256"] == actual


class TestCliGdp:
    def test_gdp_outputs_and_equal_weight_zero(self, tmp_path):
        cfg = write_config(tmp_path)
        out = tmp_path / "out"
        assert main(["gdp", "--config", cfg, "--out", str(out)]) == 0
        doc = json.loads((out / "gdp.json").read_text())
        assert doc["n_models"] == 3
        cells = {(c["strategy"], c["degree"]): c for c in doc["cells"]}
        # constant weights have zero covariance with anything
        for degree in (0.0, 10.0):
            cell = cells[("equal_weight", degree)]
            assert cell["gdp"] == 0.0
            assert all(abs(v) < 1e-12 for v in cell["ac_values"])
        lines = (out / "ac_distribution.csv").read_text().splitlines()
        assert lines[0] == "strategy,noise_kind,degree,seed,ac"
        assert len(lines) - 1 == 2 * 2 * 3


class TestCliAblate:
    def test_arms_and_shared_unimodal_rows(self, tmp_path):
        cfg = write_config(tmp_path, {"seeds": [0]})
        out = tmp_path / "out"
        assert main(["ablate", "--config", cfg, "--out", str(out)]) == 0
        rows = [l.split(",") for l in (out / "ablate.csv").read_text().splitlines()[1:]]
        arms = {r[0] for r in rows}
        assert arms == {
            "mono_only", "holo_only", "rc_only", "co_belief",
            "holo_rc", "mono_rc", "ccb",
        }
        # unimodal rows at a given (noise, seed) are identical across arms
        uni = {}
        for arm, label, kind, degree, seed, acc in rows:
            if label.startswith("unimodal"):
                uni.setdefault((label, kind, degree, seed), set()).add(acc)
        assert uni and all(len(v) == 1 for v in uni.values())


class TestCliCompare:
    def test_predictor_target_axis_shape(self, tmp_path):
        cfg = write_config(tmp_path, {"seeds": [0]})
        out = tmp_path / "out"
        assert main([
            "compare", "--config", cfg, "--out", str(out), "--axis", "predictor_target",
        ]) == 0
        rows = [l.split(",") for l in (out / "compare.csv").read_text().splitlines()[1:]]
        assert {r[1] for r in rows} == {"p_true", "loss"}
        assert len(rows) == 2 * 2 * 1  # arms x noise x seeds

    def test_uncertainty_axis_shape(self, tmp_path):
        cfg = write_config(tmp_path, {"seeds": [0], "noise": [{"kind": "none", "degree": 0.0}]})
        out = tmp_path / "out"
        assert main([
            "compare", "--config", cfg, "--out", str(out), "--axis", "uncertainty",
        ]) == 0
        rows = [l.split(",") for l in (out / "compare.csv").read_text().splitlines()[1:]]
        assert {r[1] for r in rows} == {"du", "entropy", "mcp", "energy"}


class TestNumericFormatting:
    def test_csv_cells_fixed_precision(self, tmp_path):
        cfg = write_config(tmp_path, {"seeds": [0]})
        out = tmp_path / "out"
        main(["sweep", "--config", cfg, "--out", str(out)])
        for line in (out / "sweep.csv").read_text().splitlines()[1:]:
            acc = line.split(",")[4]
            whole, frac = acc.split(".")
            assert len(frac) == 6
