"""Run configuration: schema, defaults, strict validation, file loading.

Configs are JSON with four sections (plus ``task`` and ``seed``). Unknown
keys are rejected by name; values are type- and range-checked before any
compute starts. Command-line ``--set section.key=value`` overrides take
precedence over the file.
"""

from __future__ import annotations

import copy
import json
from typing import Any

from .errors import ConfigError

GATING_MODES = ("taag", "noisy_topk", "top_any")

DEFAULTS: dict[str, Any] = {
    "task": "node_cls",
    "seed": 0,
    "data": {
        "source": "sbm",
        # sbm source
        "blocks": 2,
        "sizes": 100,
        "p_in": 0.5,
        "p_out": 0.05,
        "mix": "none",
        "feature_dim": 8,
        "separation": 1.0,
        "noise": 1.0,
        "data_seed": 0,
        # files source
        "edges": None,
        "features": None,
        "labels": None,
        "splits": None,
        # graph_synth source
        "n_graphs": 60,
        # link holdout on top of an sbm source
        "link_val_frac": 0.1,
        "link_test_frac": 0.1,
    },
    "model": {
        "hidden": 16,
        "layers": 2,
        "dropout": 0.0,
        "pe_dim": 8,
        "expert_kinds": None,  # null: task-default pool
        "allow_duplicate_experts": False,
        "cheb_order": 2,
        "sgc_steps": 2,
        "mixhop_powers": [0, 1, 2],
        "gin_eps_learnable": True,
        "link_embed_dim": 16,
    },
    "gate": {
        "gating_mode": "taag",
        "topk_k": 2,
        "gate_init": "zeros",
    },
    "train": {
        "epochs": 100,
        "batch_size": 0,  # 0 = full graph
        "lr": 0.01,
        "weight_decay": 0.0,
        "w_imp": 0.1,
        "w_div": 0.1,
        "alpha": 0.9,
        "eta": 0.5,
        "prune_interval": 20,
        "prune_type": "thresholded_gates",
        "pruning": True,
        "delta_val": 0.005,
        "pe_mode": False,
        "expert_checkpoints": None,
        "pe_pretrain_epochs": 50,
        "router_train_fraction": 1.0,
        "hits_k": 20,
    },
}

_VALID_SOURCES = ("sbm", "files", "graph_synth")


def default_config() -> dict:
    return copy.deepcopy(DEFAULTS)


def merge_config(user: dict) -> dict:
    """Overlay a user dict on the defaults, rejecting unknown keys."""
    cfg = default_config()
    if not isinstance(user, dict):
        raise ConfigError("config root must be an object")
    for key, value in user.items():
        if key not in cfg:
            raise ConfigError(f"unknown config key '{key}'")
        if isinstance(cfg[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config section '{key}' must be an object")
            for sub, subval in value.items():
                if sub not in cfg[key]:
                    raise ConfigError(f"unknown config key '{key}.{sub}'")
                cfg[key][sub] = subval
        else:
            cfg[key] = value
    validate_config(cfg)
    return cfg


def load_config(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            user = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    return merge_config(user)


def apply_overrides(cfg: dict, overrides: list[str]) -> dict:
    """Apply ``section.key=value`` strings (values parsed as JSON)."""
    cfg = copy.deepcopy(cfg)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override '{item}' must look like section.key=value")
        dotted, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw  # bare strings stay strings
        parts = dotted.split(".")
        node = cfg
        for part in parts[:-1]:
            if not isinstance(node, dict) or part not in node:
                raise ConfigError(f"unknown config key '{dotted}'")
            node = node[part]
        if parts[-1] not in node:
            raise ConfigError(f"unknown config key '{dotted}'")
        node[parts[-1]] = value
    validate_config(cfg)
    return cfg


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ConfigError(message)


def _number(value, name: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{name} must be a number, got {value!r}")
    return float(value)


def validate_config(cfg: dict) -> None:
    from .datasets import TASKS
    from .experts import EXPERT_KINDS
    from .moe import PRUNE_RAW_GATES, PRUNE_THRESHOLDED_GATES

    _require(cfg["task"] in TASKS, f"task must be one of {TASKS}, got '{cfg['task']}'")
    _require(isinstance(cfg["seed"], int), "seed must be an integer")

    data = cfg["data"]
    _require(data["source"] in _VALID_SOURCES,
             f"data.source must be one of {_VALID_SOURCES}, got '{data['source']}'")
    if data["source"] == "sbm":
        _require(isinstance(data["blocks"], int) and data["blocks"] >= 1,
                 "data.blocks must be a positive integer")
        _require(0.0 <= _number(data["p_in"], "data.p_in") <= 1.0,
                 "data.p_in must lie in [0, 1]")
        _require(0.0 <= _number(data["p_out"], "data.p_out") <= 1.0,
                 "data.p_out must lie in [0, 1]")
        _number(data["separation"], "data.separation")
        _number(data["noise"], "data.noise")
        _require(data["mix"] in ("none", "mixed"), "data.mix must be 'none' or 'mixed'")
    if data["source"] == "files":
        for key in ("edges", "features", "labels", "splits"):
            _require(isinstance(data[key], str), f"data.{key} must be a file path")

    model = cfg["model"]
    _require(isinstance(model["hidden"], int) and model["hidden"] >= 1,
             "model.hidden must be a positive integer")
    _require(isinstance(model["layers"], int) and model["layers"] >= 1,
             "model.layers must be a positive integer")
    _require(0.0 <= _number(model["dropout"], "model.dropout") < 1.0,
             "model.dropout must lie in [0, 1)")
    _require(isinstance(model["pe_dim"], int) and model["pe_dim"] >= 1,
             "model.pe_dim must be a positive integer (minimum 1)")
    kinds = model["expert_kinds"]
    if kinds is not None:
        _require(isinstance(kinds, list) and kinds, "model.expert_kinds must be a non-empty list")
        for kind in kinds:
            _require(kind in EXPERT_KINDS or kind == "noise",
                     f"unknown expert kind '{kind}' in model.expert_kinds")

    gate = cfg["gate"]
    _require(gate["gating_mode"] in GATING_MODES,
             f"gate.gating_mode must be one of {GATING_MODES}, got '{gate['gating_mode']}'")
    _require(isinstance(gate["topk_k"], int) and gate["topk_k"] >= 1,
             "gate.topk_k must be a positive integer")
    _require(gate["gate_init"] in ("zeros", "randn"),
             "gate.gate_init must be 'zeros' or 'randn'")

    train = cfg["train"]
    _require(isinstance(train["epochs"], int) and train["epochs"] >= 1,
             "train.epochs must be a positive integer")
    _require(isinstance(train["batch_size"], int) and train["batch_size"] >= 0,
             "train.batch_size must be a non-negative integer (0 = full graph)")
    _require(_number(train["lr"], "train.lr") > 0, "train.lr must be positive")
    _number(train["weight_decay"], "train.weight_decay")
    _number(train["delta_val"], "train.delta_val")
    _require(0.0 <= _number(train["alpha"], "train.alpha") <= 1.0,
             "train.alpha must lie in [0, 1]")
    _require(_number(train["eta"], "train.eta") >= 0.0, "train.eta must be non-negative")
    _require(isinstance(train["prune_interval"], int) and train["prune_interval"] >= 1,
             "train.prune_interval must be a positive integer")
    _require(train["prune_type"] in (PRUNE_RAW_GATES, PRUNE_THRESHOLDED_GATES),
             f"train.prune_type must be raw_gates or thresholded_gates, got '{train['prune_type']}'")
    _require(_number(train["w_imp"], "train.w_imp") >= 0
             and _number(train["w_div"], "train.w_div") >= 0,
             "auxiliary loss weights must be non-negative")
    _require(0.0 < _number(train["router_train_fraction"], "train.router_train_fraction") <= 1.0,
             "train.router_train_fraction must lie in (0, 1]")
    _require(isinstance(train["hits_k"], int) and train["hits_k"] >= 1,
             "train.hits_k must be a positive integer")
    if train["pe_mode"]:
        ckpts = train["expert_checkpoints"]
        _require(isinstance(ckpts, list) and all(isinstance(p, str) for p in ckpts),
                 "train.expert_checkpoints must list one path per expert in pe_mode")
