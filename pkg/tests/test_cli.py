"""CLI artifact, exit-code, and reproducibility tests."""

import csv
import json
import os

import numpy as np
import pytest

from graphmoe.cli import main

TOY = {
    "task": "node_cls",
    "seed": 1,
    "data": {"source": "sbm", "blocks": 2, "sizes": 40, "p_in": 0.4, "p_out": 0.05,
             "feature_dim": 4, "data_seed": 0},
    "model": {"hidden": 8, "layers": 2, "pe_dim": 4},
    "train": {"epochs": 6, "lr": 0.02, "prune_interval": 50},
}


def write_cfg(tmp_path, cfg=None, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg or TOY))
    return str(path)


def read_csv(path):
    with open(path) as fh:
        first = fh.readline().strip()
        assert first.startswith("# schema=")
        return list(csv.DictReader(fh))


class TestTrainCommand:
    def test_toy_run_writes_all_five_artifacts(self, tmp_path):
        out = str(tmp_path / "run")
        assert main(["train", "--config", write_cfg(tmp_path), "--out", out]) == 0
        names = sorted(os.listdir(out))
        assert names == ["activation_hist.csv", "checkpoint.npz", "manifest.json",
                         "metrics.csv", "prune_report.csv"]
        manifest = json.loads((tmp_path / "run" / "manifest.json").read_text())
        for artifact in manifest["artifacts"].values():
            assert os.path.exists(os.path.join(out, artifact))
        rows = read_csv(os.path.join(out, "metrics.csv"))
        assert len(rows) == TOY["train"]["epochs"]
        assert set(rows[0]) == {"epoch", "train_loss", "val_metric", "test_metric",
                                "alive_experts", "mean_k_u"}

    def test_malformed_key_exits_1_and_names_key(self, tmp_path, capsys):
        bad = dict(TOY)
        bad["train"] = {**TOY["train"], "learning_rate": 0.1}
        code = main(["train", "--config", write_cfg(tmp_path, bad),
                     "--out", str(tmp_path / "x")])
        assert code == 1
        assert "learning_rate" in capsys.readouterr().err

    def test_nan_inducing_lr_exits_3_with_diagnostics(self, tmp_path, capsys):
        import warnings

        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            code = main(["train", "--config", write_cfg(tmp_path),
                         "--set", "train.lr=1e150",
                         "--out", str(tmp_path / "x")])
        assert code == 3
        err = capsys.readouterr().err
        assert "numerical abort" in err and "epoch" in err

    def test_rerun_from_manifest_config_is_identical(self, tmp_path):
        cfg_path = write_cfg(tmp_path)
        out1, out2 = str(tmp_path / "a"), str(tmp_path / "b")
        assert main(["train", "--config", cfg_path, "--out", out1]) == 0
        manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
        replay = write_cfg(tmp_path, manifest["config"], name="replay.json")
        assert main(["train", "--config", replay, "--out", out2]) == 0
        bytes1 = (tmp_path / "a" / "metrics.csv").read_bytes()
        bytes2 = (tmp_path / "b" / "metrics.csv").read_bytes()
        assert bytes1 == bytes2

    def test_writes_only_inside_out_dir(self, tmp_path, monkeypatch):
        workdir = tmp_path / "cwd"
        workdir.mkdir()
        monkeypatch.chdir(workdir)
        out = str(tmp_path / "run")
        assert main(["train", "--config", write_cfg(tmp_path), "--out", out]) == 0
        assert os.listdir(workdir) == []


class TestEvalCommand:
    def test_eval_matches_best_val_row(self, tmp_path, capsys):
        out = str(tmp_path / "run")
        assert main(["train", "--config", write_cfg(tmp_path), "--out", out]) == 0
        manifest = json.loads((tmp_path / "run" / "manifest.json").read_text())
        capsys.readouterr()
        assert main(["eval", "--checkpoint", os.path.join(out, "checkpoint.npz"),
                     "--split", "test"]) == 0
        printed = capsys.readouterr().out
        assert f"accuracy={manifest['result']['test_metric']:.6g}" in printed

    def test_missing_checkpoint_exits_2(self, tmp_path, capsys):
        assert main(["eval", "--checkpoint", str(tmp_path / "none.npz")]) == 2

    def test_graph_regression_eval_prints_rmse(self, tmp_path, capsys):
        cfg = {
            "task": "graph_reg", "seed": 2,
            "data": {"source": "graph_synth", "n_graphs": 30, "data_seed": 1,
                     "feature_dim": 4},
            "model": {"hidden": 8, "layers": 1, "pe_dim": 4},
            "train": {"epochs": 5, "lr": 0.02, "batch_size": 8, "prune_interval": 50},
        }
        out = str(tmp_path / "run")
        assert main(["train", "--config", write_cfg(tmp_path, cfg), "--out", out]) == 0
        capsys.readouterr()
        assert main(["eval", "--checkpoint", os.path.join(out, "checkpoint.npz"),
                     "--split", "test"]) == 0
        assert "rmse=" in capsys.readouterr().out


class TestTheoryCommands:
    def test_bound_rows_and_validity(self, tmp_path):
        out = str(tmp_path / "bound")
        assert main(["bound", "--k-min", "2", "--k-max", "8",
                     "--samples", "4000", "--out", out]) == 0
        rows = read_csv(os.path.join(out, "bound.csv"))
        assert len(rows) == 7
        for row in rows:
            half = (float(row["ci_high"]) - float(row["ci_low"])) / 2
            assert float(row["mc_estimate"]) <= float(row["bound"]) + half

    def test_bound_rejects_bad_range(self, capsys, tmp_path):
        assert main(["bound", "--k-min", "5", "--k-max", "3",
                     "--out", str(tmp_path / "x")]) == 1

    def test_case_study_table(self, tmp_path):
        out = str(tmp_path / "cs")
        assert main(["case-study", "--star", "3", "--seeds", "50", "--out", out]) == 0
        rows = {r["expert"]: r for r in read_csv(os.path.join(out, "case_study.csv"))}
        assert float(rows["GCN"]["mean_alpha"]) <= 1e-12
        assert float(rows["GraphSAGE"]["mean_alpha"]) <= 1e-12
        assert float(rows["GIN"]["mean_alpha"]) > 1e-6
        assert float(rows["GIN"]["positive_fraction"]) >= 0.95

    def test_sketch_check_width_monotone(self, tmp_path):
        out = str(tmp_path / "sk")
        assert main(["sketch-check", "--dim", "30", "--widths", "8,64",
                     "--trials", "800", "--out", out]) == 0
        rows = {int(r["width"]): float(r["rms_error"])
                for r in read_csv(os.path.join(out, "sketch_check.csv"))}
        assert rows[64] < rows[8]


class TestAblateCommand:
    def test_five_variant_matrix(self, tmp_path):
        cfg = dict(TOY)
        cfg["train"] = {**TOY["train"], "epochs": 4}
        out = str(tmp_path / "ablate")
        assert main(["ablate", "--config", write_cfg(tmp_path, cfg),
                     "--out", out]) == 0
        rows = read_csv(os.path.join(out, "ablation.csv"))
        assert [r["variant"] for r in rows] == [
            "full", "wo_diverse", "topk_gating", "top_any_gating", "wo_pruning"]
