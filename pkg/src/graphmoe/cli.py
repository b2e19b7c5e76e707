"""Command-line entry point.

Subcommands: train, eval, bound, case-study, sketch-check, ablate. Every
command writes only inside its --out directory. Exit codes: 1 for
configuration errors, 2 for data or checkpoint errors, 3 for numerical
aborts. All CSVs start with a schema-version comment line, then a header.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import apply_overrides, default_config, load_config
from .datasets import TASKS
from .errors import CheckpointError, ConfigError, DataError, GraphMoeError, NumericalError
from .graph import build_graph
from .theory import bound_sweep, case_study_scores, cs_inner_check
from .train import build_dataset, evaluate, train

CSV_SCHEMA_LINE = "# schema=1"


def _write_csv(path: str, header: list[str], rows: list[list]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(CSV_SCHEMA_LINE + "\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _sha256_file(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _input_hashes(cfg: dict) -> dict:
    data = cfg["data"]
    if data["source"] == "files":
        return {data[k]: _sha256_file(data[k])
                for k in ("edges", "features", "labels", "splits")}
    blob = json.dumps(data, sort_keys=True).encode()
    return {"synthetic": hashlib.sha256(blob).hexdigest()}


def _resolve_config(args) -> dict:
    cfg = load_config(args.config) if args.config else default_config()
    overrides = list(args.set or [])
    if getattr(args, "seed", None) is not None:
        overrides.append(f"seed={args.seed}")
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    return cfg


def _ensure_out(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    out = _ensure_out(args.out)
    dataset = build_dataset(cfg)
    result = train(dataset, cfg)

    ckpt_path = os.path.join(out, "checkpoint.npz")
    save_checkpoint(ckpt_path, result.best)

    metrics_path = os.path.join(out, "metrics.csv")
    _write_csv(metrics_path,
               ["epoch", "train_loss", "val_metric", "test_metric",
                "alive_experts", "mean_k_u"],
               [[r.epoch, f"{r.train_loss:.10g}", f"{r.val_metric:.10g}",
                 f"{r.test_metric:.10g}", r.alive_experts, f"{r.mean_k:.10g}"]
                for r in result.rows])

    prune_path = os.path.join(out, "prune_report.csv")
    _write_csv(prune_path, ["epoch", "expert_kind", "importance", "action"],
               [[r.epoch, r.kind, f"{r.importance:.10g}", r.action]
                for r in result.prune_history])

    hist_path = os.path.join(out, "activation_hist.csv")
    _write_csv(hist_path, ["k", "node_count"],
               [[k, int(c)] for k, c in enumerate(result.activation_hist)])

    manifest_path = os.path.join(out, "manifest.json")
    manifest = {
        "schema": 1,
        "command": "train",
        "seed": cfg["seed"],
        "config": cfg,
        "inputs": _input_hashes(cfg),
        "artifacts": {
            "checkpoint": os.path.basename(ckpt_path),
            "metrics": os.path.basename(metrics_path),
            "prune_report": os.path.basename(prune_path),
            "activation_hist": os.path.basename(hist_path),
        },
        "result": {
            "best_epoch": result.best_epoch,
            "metric": result.metric_name,
            "val_metric": result.val_metric,
            "test_metric": result.test_metric,
            "alive_experts": int(result.model.pool.alive_count),
            "min_k_seen": result.min_k_seen,
        },
    }
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)

    print(f"train ok: best_epoch={result.best_epoch} "
          f"{result.metric_name}={result.test_metric:.6g} "
          f"alive_experts={result.model.pool.alive_count} out={out}")
    return 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    if args.config or args.set:
        cfg = _resolve_config(args)
    else:
        cfg = ckpt.meta["config"]
    dataset = build_dataset(cfg)
    metrics = evaluate(dataset, ckpt, args.split)
    out = _ensure_out(args.out or os.path.dirname(os.path.abspath(args.checkpoint)))
    _write_csv(os.path.join(out, "eval_metrics.csv"),
               ["split"] + list(metrics), [[args.split] + [f"{v:.10g}" for v in metrics.values()]])
    summary = " ".join(f"{k}={v:.6g}" for k, v in metrics.items())
    print(f"eval split={args.split} {summary}")
    return 0


# ---------------------------------------------------------------------------
# theory commands
# ---------------------------------------------------------------------------

def cmd_bound(args) -> int:
    if args.k_min < 2 or args.k_max < args.k_min:
        raise ConfigError("need 2 <= k-min <= k-max")
    out = _ensure_out(args.out)
    results = bound_sweep(range(args.k_min, args.k_max + 1), args.eps0, args.a,
                          int(args.samples), seed=args.seed or 0)
    from .theory import bound_f

    rows = [[r.k, f"{bound_f(r.k, r.eps0):.10g}", f"{r.bound:.10g}",
             f"{r.probability:.10g}", f"{r.ci_low:.10g}", f"{r.ci_high:.10g}"]
            for r in results]
    _write_csv(os.path.join(out, "bound.csv"),
               ["k", "f", "bound", "mc_estimate", "ci_low", "ci_high"], rows)
    worst = max(r.probability - r.bound for r in results)
    ok = all(r.valid for r in results)
    print(f"bound ok={ok} rows={len(rows)} max(mc-bound)={worst:.4g} out={out}")
    return 0 if ok else 3


def cmd_case_study(args) -> int:
    if args.edges:
        if not args.nodes:
            raise ConfigError("--nodes is required with --edges")
        from .datasets import read_edge_list

        g = read_edge_list(args.edges, args.nodes)
    else:
        leaves = args.star
        g = build_graph([(0, i) for i in range(1, leaves + 1)], leaves + 1)
    out = _ensure_out(args.out)
    kinds = ("GCN", "GraphSAGE", "GIN")
    sums = {k: 0.0 for k in kinds}
    positives = {k: 0 for k in kinds}
    for seed in range(args.seeds):
        scores = case_study_scores(g, seed=seed)
        for kind in kinds:
            sums[kind] += scores[kind].score
            positives[kind] += scores[kind].score > 1e-6
    rows = [[k, f"{sums[k] / args.seeds:.10g}", f"{positives[k] / args.seeds:.10g}"]
            for k in kinds]
    _write_csv(os.path.join(out, "case_study.csv"),
               ["expert", "mean_alpha", "positive_fraction"], rows)
    print("case-study " + " ".join(
        f"{k}={sums[k] / args.seeds:.3g}" for k in kinds) + f" out={out}")
    return 0


def cmd_sketch_check(args) -> int:
    widths = [int(w) for w in args.widths.split(",")]
    if not widths or any(w < 1 for w in widths):
        raise ConfigError("--widths must be positive integers")
    out = _ensure_out(args.out)
    rows = cs_inner_check(args.dim, widths, int(args.trials), seed=args.seed or 0)
    _write_csv(os.path.join(out, "sketch_check.csv"),
               ["width", "true_inner", "mean_estimate", "rms_error", "sem"],
               [[r["width"], f"{r['true_inner']:.10g}", f"{r['mean_estimate']:.10g}",
                 f"{r['rms_error']:.10g}", f"{r['sem']:.10g}"] for r in rows])
    print("sketch-check " + " ".join(
        f"c{r['width']}={r['rms_error']:.3g}" for r in rows) + f" out={out}")
    return 0


# ---------------------------------------------------------------------------
# ablate
# ---------------------------------------------------------------------------

ABLATION_VARIANTS = ("full", "wo_diverse", "topk_gating", "top_any_gating", "wo_pruning")


def ablation_config(cfg: dict, variant: str) -> dict:
    """The five-variant ablation matrix over gating, diversity, pruning."""
    import copy

    out = copy.deepcopy(cfg)
    if variant == "full":
        return out
    if variant == "wo_diverse":
        from .experts import default_pool_kinds

        kinds = out["model"]["expert_kinds"] or list(default_pool_kinds(out["task"]))
        out["model"]["expert_kinds"] = ["GCN"] * len(kinds)
        out["model"]["allow_duplicate_experts"] = True
        return out
    if variant == "topk_gating":
        out["gate"]["gating_mode"] = "noisy_topk"
        return out
    if variant == "top_any_gating":
        out["gate"]["gating_mode"] = "top_any"
        return out
    if variant == "wo_pruning":
        out["train"]["pruning"] = False
        return out
    raise ConfigError(f"unknown ablation variant '{variant}'")


def cmd_ablate(args) -> int:
    cfg = _resolve_config(args)
    out = _ensure_out(args.out)
    rows = []
    for variant in ABLATION_VARIANTS:
        vcfg = ablation_config(cfg, variant)
        dataset = build_dataset(vcfg)
        result = train(dataset, vcfg)
        rows.append([variant, f"{result.val_metric:.10g}", f"{result.test_metric:.10g}",
                     result.model.pool.alive_count])
        print(f"ablate {variant}: {result.metric_name}={result.test_metric:.6g}")
    _write_csv(os.path.join(out, "ablation.csv"),
               ["variant", "val_metric", "test_metric", "alive_experts"], rows)
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="graphmoe",
        description="Mixture of graph neural network models with attention-threshold "
                    "routing, adaptive expert pruning, and a bound-validation lab.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_args(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config key (dotted path), repeatable")
        p.add_argument("--seed", type=int, help="override the run seed")

    p_train = sub.add_parser("train", help="run the training phase")
    add_config_args(p_train)
    p_train.add_argument("--out", required=True, help="output directory")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint")
    add_config_args(p_eval)
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--split", default="test", choices=["train", "valid", "test"])
    p_eval.add_argument("--out", help="output directory (default: checkpoint dir)")
    p_eval.set_defaults(func=cmd_eval)

    p_bound = sub.add_parser("bound", help="validate the loss concentration bound")
    p_bound.add_argument("--k-min", type=int, default=2)
    p_bound.add_argument("--k-max", type=int, default=8)
    p_bound.add_argument("--eps0", type=float, default=0.001)
    p_bound.add_argument("--a", type=float, default=0.3)
    p_bound.add_argument("--samples", type=float, default=1e5)
    p_bound.add_argument("--seed", type=int, default=0)
    p_bound.add_argument("--out", required=True)
    p_bound.set_defaults(func=cmd_bound)

    p_case = sub.add_parser("case-study", help="variance-gate expert separation")
    p_case.add_argument("--star", type=int, default=3, help="leaf count of a star graph")
    p_case.add_argument("--edges", help="edge-list file instead of a star graph")
    p_case.add_argument("--nodes", type=int, help="node count for --edges")
    p_case.add_argument("--seeds", type=int, default=100)
    p_case.add_argument("--out", required=True)
    p_case.set_defaults(func=cmd_case_study)

    p_sketch = sub.add_parser("sketch-check", help="count-sketch estimator statistics")
    p_sketch.add_argument("--dim", type=int, default=30)
    p_sketch.add_argument("--widths", default="8,16,32,64")
    p_sketch.add_argument("--trials", type=float, default=1e4)
    p_sketch.add_argument("--seed", type=int, default=0)
    p_sketch.add_argument("--out", required=True)
    p_sketch.set_defaults(func=cmd_sketch_check)

    p_ablate = sub.add_parser("ablate", help="run the five-variant ablation matrix")
    add_config_args(p_ablate)
    p_ablate.add_argument("--out", required=True)
    p_ablate.set_defaults(func=cmd_ablate)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (DataError, CheckpointError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return 3
    except GraphMoeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
