"""Versioned checkpoint container.

One NPZ archive holds named parameter arrays, Adam state, alive-expert
flags, and a JSON metadata blob. Writes go through a temp file plus an
atomic rename so a crash never leaves a torn checkpoint behind.
"""

from __future__ import annotations

import io
import json
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .errors import CheckpointError

FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    alive: np.ndarray
    meta: dict
    adam_m: dict[str, np.ndarray] = field(default_factory=dict)
    adam_v: dict[str, np.ndarray] = field(default_factory=dict)
    adam_t: dict[str, int] = field(default_factory=dict)

    def param_bytes_hash(self) -> str:
        import hashlib

        digest = hashlib.sha256()
        for name in sorted(self.params):
            digest.update(name.encode())
            digest.update(np.ascontiguousarray(self.params[name]).tobytes())
        return digest.hexdigest()


def save_checkpoint(path: str, ckpt: Checkpoint) -> None:
    payload: dict[str, np.ndarray] = {
        "__version__": np.array([FORMAT_VERSION]),
        "__alive__": ckpt.alive.astype(np.int8),
        "__meta__": np.frombuffer(json.dumps(ckpt.meta).encode(), dtype=np.uint8),
    }
    for name, arr in ckpt.params.items():
        payload[f"param/{name}"] = arr
    for name, arr in ckpt.adam_m.items():
        payload[f"adam_m/{name}"] = arr
    for name, arr in ckpt.adam_v.items():
        payload[f"adam_v/{name}"] = arr
    if ckpt.adam_t:
        names = sorted(ckpt.adam_t)
        payload["__adam_t_names__"] = np.frombuffer(
            json.dumps(names).encode(), dtype=np.uint8)
        payload["__adam_t_values__"] = np.array([ckpt.adam_t[n] for n in names])
    buf = io.BytesIO()
    np.savez_compressed(buf, **payload)
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(buf.getvalue())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path: str) -> Checkpoint:
    if not os.path.exists(path):
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        archive = np.load(path)
    except Exception as exc:
        raise CheckpointError(f"unreadable checkpoint {path}: {exc}") from None
    if "__version__" not in archive:
        raise CheckpointError(f"{path}: missing version marker")
    version = int(archive["__version__"][0])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    params, adam_m, adam_v = {}, {}, {}
    for key in archive.files:
        if key.startswith("param/"):
            params[key[len("param/"):]] = archive[key]
        elif key.startswith("adam_m/"):
            adam_m[key[len("adam_m/"):]] = archive[key]
        elif key.startswith("adam_v/"):
            adam_v[key[len("adam_v/"):]] = archive[key]
    meta = json.loads(bytes(archive["__meta__"].tobytes()).decode())
    adam_t = {}
    if "__adam_t_names__" in archive.files:
        names = json.loads(bytes(archive["__adam_t_names__"].tobytes()).decode())
        values = archive["__adam_t_values__"]
        adam_t = {n: int(t) for n, t in zip(names, values)}
    return Checkpoint(params=params, alive=archive["__alive__"].astype(bool),
                      meta=meta, adam_m=adam_m, adam_v=adam_v, adam_t=adam_t)


def save_expert_checkpoint(path: str, params: dict[str, np.ndarray], meta: dict) -> None:
    """Single-expert parameter blob used by the frozen-experts mode."""
    save_checkpoint(path, Checkpoint(params=params, alive=np.array([True]), meta=meta))


def load_expert_checkpoint(path: str) -> dict[str, np.ndarray]:
    return load_checkpoint(path).params
