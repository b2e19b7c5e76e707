"""Checkpoint container round-trip and atomicity tests."""

import os

import numpy as np
import pytest

from graphmoe.checkpoint import (
    Checkpoint,
    load_checkpoint,
    load_expert_checkpoint,
    save_checkpoint,
    save_expert_checkpoint,
)
from graphmoe.errors import CheckpointError


def sample_checkpoint():
    rng = np.random.default_rng(0)
    return Checkpoint(
        params={"expert0.layer0.W": rng.normal(size=(3, 4)),
                "gate.W_query": rng.normal(size=(5, 2))},
        alive=np.array([True, False, True]),
        meta={"epoch": 7, "val_metric": 0.91, "config": {"seed": 3}},
        adam_m={"gate.W_query": rng.normal(size=(5, 2))},
        adam_v={"gate.W_query": rng.random((5, 2))},
        adam_t={"gate.W_query": 12},
    )


class TestRoundTrip:
    def test_everything_survives(self, tmp_path):
        path = str(tmp_path / "model.npz")
        ckpt = sample_checkpoint()
        save_checkpoint(path, ckpt)
        loaded = load_checkpoint(path)
        assert set(loaded.params) == set(ckpt.params)
        for name in ckpt.params:
            np.testing.assert_array_equal(loaded.params[name], ckpt.params[name])
        np.testing.assert_array_equal(loaded.alive, ckpt.alive)
        assert loaded.meta == ckpt.meta
        np.testing.assert_array_equal(loaded.adam_m["gate.W_query"],
                                      ckpt.adam_m["gate.W_query"])
        assert loaded.adam_t == {"gate.W_query": 12}

    def test_param_hash_is_content_based(self, tmp_path):
        a = sample_checkpoint()
        b = sample_checkpoint()
        assert a.param_bytes_hash() == b.param_bytes_hash()
        b.params["gate.W_query"][0, 0] += 1.0
        assert a.param_bytes_hash() != b.param_bytes_hash()

    def test_atomic_write_leaves_no_temp_files(self, tmp_path):
        path = str(tmp_path / "model.npz")
        save_checkpoint(path, sample_checkpoint())
        save_checkpoint(path, sample_checkpoint())  # overwrite in place
        assert sorted(os.listdir(tmp_path)) == ["model.npz"]

    def test_expert_blob_roundtrip(self, tmp_path):
        path = str(tmp_path / "expert.npz")
        params = {"layer0.W": np.arange(6.0).reshape(2, 3)}
        save_expert_checkpoint(path, params, {"kind": "GCN"})
        loaded = load_expert_checkpoint(path)
        np.testing.assert_array_equal(loaded["layer0.W"], params["layer0.W"])


class TestErrors:
    def test_missing_file(self):
        with pytest.raises(CheckpointError, match="not found"):
            load_checkpoint("/nonexistent/model.npz")

    def test_garbage_file(self, tmp_path):
        path = tmp_path / "junk.npz"
        path.write_bytes(b"not a checkpoint")
        with pytest.raises(CheckpointError, match="unreadable"):
            load_checkpoint(str(path))
