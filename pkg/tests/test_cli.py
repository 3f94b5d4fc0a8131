import json

import numpy as np
import pytest

from enkplan.cli import main
from enkplan.config import config_hash

TINY_TRAIN = {
    "n_trajectories": 2,
    "steps_per_trajectory": 5,
    "hidden_sizes": [4],
    "epochs": 1,
    "batch_size": 4,
    "rng_seed": 0,
}


def tiny_scenario(steps=1, seed=0):
    return {
        "seed": seed,
        "steps": steps,
        "target_speed": 10.0,
        "use_true_dynamics": True,
        "road": {"kind": "straight", "length": 300.0, "half_width": 3.5,
                 "spacing": 4.0},
        "ev": {"start_arclength": 5.0, "lane_offset": 0.0, "speed": 10.0},
        "obstacles": [{"start_arclength": 60.0, "lane_offset": -1.0,
                       "speed": 6.0}],
        "planner": {
            "horizon": 5,
            "dt": 0.1,
            "smoother": {"n_members": 30},
            "weights": {"control_weight_diag": [2.0, 16.0],
                        "state_weight_diag": [1.0, 1.0, 4.0, 1.0]},
            "barrier": {"alpha": 1.0, "beta": 5.0, "r_eta": 1e-4},
            "constraints": {"d_min": 1.0, "road_half_width": 3.5},
        },
    }


def write_config(tmp_path, doc, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


class TestTrainCommand:
    def test_tiny_config_writes_artifacts(self, tmp_path):
        cfg = write_config(tmp_path, TINY_TRAIN)
        out = tmp_path / "out"
        assert main(["train", "--config", cfg, "--out", str(out)]) == 0
        assert (out / "model.json").exists()
        lines = (out / "loss_history.csv").read_text().splitlines()
        assert lines[0] == "epoch,train_mse,val_mse"
        assert len(lines) == 1 + TINY_TRAIN["epochs"]
        assert (out / "manifest.json").exists()

    def test_unknown_field_exits_2_naming_it(self, tmp_path, capsys):
        doc = dict(TINY_TRAIN)
        doc["learning_rte"] = 0.1
        cfg = write_config(tmp_path, doc)
        assert main(["train", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
        assert "learning_rte" in capsys.readouterr().err

    def test_missing_file_exits_2(self, tmp_path):
        assert main(["train", "--config", str(tmp_path / "nope.json"),
                     "--out", str(tmp_path / "o")]) == 2


class TestRunCommand:
    def test_single_step_smoke(self, tmp_path):
        cfg = write_config(tmp_path, tiny_scenario(steps=1))
        out = tmp_path / "run"
        assert main(["run", "--config", cfg, "--out", str(out)]) == 0
        lines = (out / "records.csv").read_text().splitlines()
        assert len(lines) == 3   # schema comment, header, one record
        summary = json.loads((out / "summary.json").read_text())
        assert summary["completed_steps"] == 1

    def test_missing_required_field_exits_2(self, tmp_path, capsys):
        doc = tiny_scenario()
        del doc["target_speed"]
        cfg = write_config(tmp_path, doc)
        assert main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
        assert "target_speed" in capsys.readouterr().err

    def test_fixed_seed_reproduces_csv(self, tmp_path):
        cfg = write_config(tmp_path, tiny_scenario(steps=3, seed=5))
        texts = []
        for name in ("a", "b"):
            out = tmp_path / name
            assert main(["run", "--config", cfg, "--out", str(out)]) == 0
            from test_scenario import strip_time_column

            texts.append(strip_time_column((out / "records.csv").read_text()))
        assert texts[0] == texts[1]

    def test_seed_flag_overrides_config(self, tmp_path):
        cfg = write_config(tmp_path, tiny_scenario(steps=2, seed=5))
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        main(["run", "--config", cfg, "--out", str(out_a)])
        main(["run", "--config", cfg, "--out", str(out_b), "--seed", "99"])
        rec_a = (out_a / "records.csv").read_text()
        rec_b = (out_b / "records.csv").read_text()
        assert rec_a != rec_b
        assert json.loads((out_b / "manifest.json").read_text())["seed"] == 99


class TestSweepCommand:
    def test_single_cell_matrix(self, tmp_path):
        doc = {"matrix": {"methods": ["enks"], "n_members": [30],
                          "horizons": [5], "seeds": [0], "steps": 2},
               "scenario": tiny_scenario()}
        cfg = write_config(tmp_path, doc)
        out = tmp_path / "sweep"
        assert main(["sweep", "--config", cfg, "--out", str(out)]) == 0
        cells = (out / "cells.csv").read_text().splitlines()
        assert len(cells) == 2
        agg = (out / "aggregate.csv").read_text().splitlines()
        assert len(agg) == 2
        assert "relative_cost_change_pct" in agg[0]

    def test_two_seeds_aggregate(self, tmp_path):
        doc = {"matrix": {"methods": ["enks"], "n_members": [30],
                          "horizons": [5], "seeds": [0, 1], "steps": 2},
               "scenario": tiny_scenario()}
        cfg = write_config(tmp_path, doc)
        out = tmp_path / "sweep"
        assert main(["sweep", "--config", cfg, "--out", str(out)]) == 0
        cells = (out / "cells.csv").read_text().splitlines()
        assert len(cells) == 3
        import csv as csvmod

        with open(out / "aggregate.csv") as fh:
            rows = list(csvmod.DictReader(fh))
        assert len(rows) == 1
        assert int(rows[0]["seeds"]) == 2

    def test_cell_failure_recorded_sweep_continues(self, tmp_path):
        bad = tiny_scenario()
        bad["model_path"] = "/does/not/exist.json"
        del bad["use_true_dynamics"]
        doc = {"matrix": {"methods": ["enks"], "n_members": [30],
                          "horizons": [5], "seeds": [0], "steps": 1},
               "scenario": bad}
        cfg = write_config(tmp_path, doc)
        out = tmp_path / "sweep"
        assert main(["sweep", "--config", cfg, "--out", str(out)]) == 0
        text = (out / "cells.csv").read_text()
        assert "True" in text   # failed flag set in the row


class TestBaselineCommand:
    def test_probe_writes_summary(self, tmp_path):
        cfg = write_config(tmp_path, tiny_scenario())
        out = tmp_path / "base"
        assert main(["baseline", "--config", cfg, "--out", str(out),
                     "--steps", "1"]) == 0
        doc = json.loads((out / "baseline.json").read_text())
        assert doc["probe_steps"] == 1
        assert doc["avg_plan_time"] > 0


class TestManifest:
    def test_hash_stable_under_key_order(self):
        a = {"x": 1, "y": {"b": 2, "a": 3}}
        b = {"y": {"a": 3, "b": 2}, "x": 1}
        assert config_hash(a) == config_hash(b)

    def test_manifest_contents(self, tmp_path):
        cfg = write_config(tmp_path, tiny_scenario())
        out = tmp_path / "run"
        main(["run", "--config", cfg, "--out", str(out)])
        doc = json.loads((out / "manifest.json").read_text())
        assert doc["config_hash"] == config_hash(tiny_scenario())
        assert doc["output_dir"] == str(out)
        assert "package_version" in doc
