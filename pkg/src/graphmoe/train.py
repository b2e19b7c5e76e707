"""End-to-end training: mini-batching, routing, aggregation, pruning.

One epoch shuffles the supervised units (nodes or graphs) into batches,
builds the induced batch graph and its context features, routes every
node through the gate, evaluates only the experts some node selected,
aggregates with the gate weights, and steps the optimizer on the
parameters that actually received gradients. Importance updates run per
batch; pruning fires on the configured epoch interval and rolls back if
validation regresses by more than ``delta_val`` at the next evaluation.
The reported test metric always comes from the best-validation epoch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tape
from .checkpoint import Checkpoint, load_expert_checkpoint, save_expert_checkpoint
from .config import default_config
from .datasets import Dataset, FeatureModel, load_dataset, make_link_dataset, \
    make_graph_level_dataset, sbm_generate
from .errors import ConfigError, DataError, NumericalError
from .experts import ConvCache, ExpertPool, build_expert_pool, default_pool_kinds, \
    expert_forward, init_expert_params, ExpertSpec, glorot
from .gating import MASK_MODE_DETACH, MASK_MODE_STE, AttentionThresholdGate, \
    GateOutput, NoisyTopKGate, ThresholdGate
from .graph import Graph, disjoint_union, induced_subgraph, laplacian_pe, \
    local_context_term
from .metrics import accuracy, hits_at_k, multilabel_auc, rmse, roc_auc
from .moe import HeadParams, ImportanceTracker, aggregate, apply_head, \
    contribution_scores, diversity_loss, importance_loss, init_heads, \
    freeze_experts, PRUNE_RAW_GATES
from .optim import Adam
from .tape import Tensor, constant


# ---------------------------------------------------------------------------
# dataset construction from config
# ---------------------------------------------------------------------------

def build_dataset(cfg: dict) -> Dataset:
    data = cfg["data"]
    task = cfg["task"]
    if data["source"] == "files":
        return load_dataset(data["edges"], data["features"], data["labels"],
                            data["splits"], task=task)
    if data["source"] == "graph_synth":
        if task not in ("graph_cls", "graph_reg"):
            raise ConfigError("data.source graph_synth requires a graph-level task")
        return make_graph_level_dataset(n_graphs=data["n_graphs"], task=task,
                                        seed=data["data_seed"],
                                        feature_dim=data["feature_dim"])
    base = sbm_generate(data["blocks"], data["sizes"], data["p_in"], data["p_out"],
                        FeatureModel(dim=data["feature_dim"],
                                     separation=data["separation"],
                                     noise=data["noise"]),
                        mix=data["mix"], seed=data["data_seed"])
    if task == "link_pred":
        return make_link_dataset(base, val_frac=data["link_val_frac"],
                                 test_frac=data["link_test_frac"],
                                 seed=data["data_seed"] + 1)
    if task != "node_cls":
        raise ConfigError(f"data.source sbm supports node_cls or link_pred, got '{task}'")
    return base


# ---------------------------------------------------------------------------
# context features
# ---------------------------------------------------------------------------

def full_graph_pe(dataset: Dataset, p: int) -> np.ndarray:
    key = f"full:p{p}"
    pe = dataset.pe_cache.get(key)
    if pe is None:
        pe = laplacian_pe(dataset.graph, p)
        dataset.pe_cache[key] = pe
    return pe


def per_graph_pe(dataset: Dataset, gid: int, p: int) -> np.ndarray:
    """Per-graph positional columns, zero-padded when the graph is smaller
    than p + 1 nodes."""
    key = f"g{gid}:p{p}"
    pe = dataset.pe_cache.get(key)
    if pe is None:
        g = dataset.graphs[gid]
        p_eff = min(p, g.n - 1)
        pe = np.zeros((g.n, p))
        if p_eff >= 1:
            pe[:, :p_eff] = laplacian_pe(g, p_eff)
        dataset.pe_cache[key] = pe
    return pe


def node_batch_context(batch_graph: Graph, x: np.ndarray, pe_rows: np.ndarray) -> np.ndarray:
    return np.concatenate([local_context_term(batch_graph, x), pe_rows], axis=1)


def graph_batch_context(feats: list[np.ndarray], pes: list[np.ndarray]) -> np.ndarray:
    parts = []
    for f, pe in zip(feats, pes):
        mean = np.tile(f.mean(axis=0, keepdims=True), (f.shape[0], 1))
        parts.append(np.concatenate([mean, pe], axis=1))
    return np.concatenate(parts, axis=0)


# ---------------------------------------------------------------------------
# the mixture model
# ---------------------------------------------------------------------------

@dataclass
class ForwardOut:
    output: Tensor              # logits / regression values / embeddings
    gate: GateOutput
    expert_outputs: dict[int, Tensor]
    alive: np.ndarray


class Model:
    """Expert pool, gate, per-expert projections, and task head."""

    def __init__(self, task: str, in_dim: int, out_dim: int, cfg: dict,
                 seed_seq: np.random.SeedSequence):
        model_cfg = cfg["model"]
        gate_cfg = cfg["gate"]
        self.task = task
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.hidden = model_cfg["hidden"]
        self.pe_dim = model_cfg["pe_dim"]
        kinds = model_cfg["expert_kinds"] or list(default_pool_kinds(task))
        seeds = seed_seq.spawn(3)
        self.pool = build_expert_pool(
            kinds, in_dim, model_cfg["hidden"], model_cfg["layers"], seeds[0],
            allow_duplicates=model_cfg["allow_duplicate_experts"],
            spec_overrides={
                "cheb_order": model_cfg["cheb_order"],
                "sgc_steps": model_cfg["sgc_steps"],
                "mixhop_powers": tuple(model_cfg["mixhop_powers"]),
                "gin_eps_learnable": model_cfg["gin_eps_learnable"],
            })
        n0 = self.pool.initial_count
        self.gating_mode = gate_cfg["gating_mode"]
        ctx_dim = in_dim + self.pe_dim
        if self.gating_mode == "taag":
            self.gate = AttentionThresholdGate(ctx_dim, n0, seeds[1],
                                               init=gate_cfg["gate_init"])
        elif self.gating_mode == "noisy_topk":
            self.gate = NoisyTopKGate(in_dim, n0, min(gate_cfg["topk_k"], n0), seeds[1])
        else:
            self.gate = ThresholdGate(in_dim, n0, seeds[1], init=gate_cfg["gate_init"])
        head_out = model_cfg["link_embed_dim"] if task == "link_pred" else out_dim
        self.heads = init_heads(n0, model_cfg["hidden"], head_out, seeds[2])
        self.dropout = model_cfg["dropout"]
        self.eval_counts = np.zeros(n0, dtype=np.int64)

    # -- parameter registry ---------------------------------------------
    def parameters(self) -> dict[str, Tensor]:
        out = self.pool.parameters()
        for name, p in self.gate.parameters().items():
            out[f"gate.{name}"] = p
        out.update(self.heads.parameters())
        return out

    def trainable_parameters(self) -> dict[str, Tensor]:
        out = self.pool.parameters(trainable_only=True)
        for name, p in self.gate.parameters().items():
            out[f"gate.{name}"] = p
        out.update(self.heads.parameters(self.pool.alive_indices()))
        return out

    # -- forward ----------------------------------------------------------
    def forward(self, batch_graph: Graph, x: np.ndarray, ctx: np.ndarray,
                membership: np.ndarray | None = None, n_segments: int = 0,
                training: bool = False,
                dropout_rng: np.random.Generator | None = None,
                noise_rng: np.random.Generator | None = None,
                mask_mode: str = MASK_MODE_STE) -> ForwardOut:
        x_t = constant(x)
        alive = self.pool.alive_indices()
        if self.gating_mode == "taag":
            gate_out = self.gate.forward(constant(ctx), alive, mode=mask_mode)
        elif self.gating_mode == "noisy_topk":
            gate_out = self.gate.forward(x_t, alive, training=training, rng=noise_rng)
        else:
            gate_out = self.gate.forward(x_t, alive, mode=mask_mode)

        conv = ConvCache(batch_graph)
        active = alive[gate_out.active_columns()]
        expert_outputs: dict[int, Tensor] = {}
        for expert_id in active:
            entry = self.pool.entries[int(expert_id)]
            expert_outputs[int(expert_id)] = expert_forward(
                entry.spec, entry.params, x_t, conv, training=training,
                dropout_rate=self.dropout, rng=dropout_rng)
            self.eval_counts[int(expert_id)] += 1
        agg = aggregate(expert_outputs, gate_out.weights, alive, self.heads)
        if self.task in ("graph_cls", "graph_reg"):
            pooled = tape.segment_mean_rows(agg, membership, n_segments)
            output = apply_head(pooled, self.heads)
        else:
            output = apply_head(agg, self.heads)
        return ForwardOut(output=output, gate=gate_out,
                          expert_outputs=expert_outputs, alive=alive)

    def snapshot(self, meta: dict) -> Checkpoint:
        return Checkpoint(
            params={name: p.values.copy() for name, p in self.parameters().items()},
            alive=np.array([e.alive for e in self.pool.entries]),
            meta=meta)

    def restore(self, ckpt: Checkpoint) -> None:
        params = self.parameters()
        for name, arr in ckpt.params.items():
            if name not in params:
                raise ConfigError(f"checkpoint parameter '{name}' not in model")
            if params[name].values.shape != arr.shape:
                raise ConfigError(f"checkpoint shape mismatch for '{name}'")
            params[name].values[:] = arr
        for entry, alive in zip(self.pool.entries, ckpt.alive):
            entry.alive = bool(alive)


def model_from_checkpoint(ckpt: Checkpoint, dataset: Dataset) -> Model:
    cfg = ckpt.meta["config"]
    model = Model(dataset.task, ckpt.meta["in_dim"], ckpt.meta["out_dim"], cfg,
                  np.random.SeedSequence(cfg["seed"]))
    model.restore(ckpt)
    return model


# ---------------------------------------------------------------------------
# losses and scoring
# ---------------------------------------------------------------------------

def link_scores(embeddings: Tensor, pairs: np.ndarray) -> Tensor:
    """Dot-product score per (u, v) pair; bilinear in the embeddings."""
    left = tape.gather_rows(embeddings, pairs[:, 0])
    right = tape.gather_rows(embeddings, pairs[:, 1])
    return tape.sum_cols(tape.elementwise_mul(left, right))


def task_loss(task: str, output: Tensor, dataset: Dataset, rows: np.ndarray,
              labels: np.ndarray) -> Tensor:
    if task == "node_cls" or task == "graph_cls":
        picked = tape.gather_rows(output, rows)
        if dataset.multilabel:
            return tape.bce_with_logits(picked, labels)
        return tape.softmax_cross_entropy(picked, labels)
    if task == "graph_reg":
        picked = tape.gather_rows(output, rows)
        return tape.mse_loss(picked, labels.reshape(-1, 1))
    raise ConfigError(f"task_loss does not handle '{task}'")


def _oriented(task: str, value: float) -> float:
    return -value if task == "graph_reg" else value


def primary_metric_name(dataset: Dataset) -> str:
    if dataset.task == "graph_reg":
        return "rmse"
    if dataset.task == "link_pred":
        return "hits"
    if dataset.multilabel:
        return "auc"
    return "accuracy"


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class MetricRow:
    epoch: int
    train_loss: float
    val_metric: float
    test_metric: float
    alive_experts: int
    mean_k: float


@dataclass
class TrainResult:
    best: Checkpoint
    best_epoch: int
    val_metric: float
    test_metric: float
    rows: list[MetricRow]
    prune_history: list
    activation_hist: np.ndarray
    eval_counts: np.ndarray
    min_k_seen: int
    model: Model
    tracker: ImportanceTracker
    metric_name: str


def _node_batches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    order = rng.permutation(n)
    if batch_size <= 0 or batch_size >= n:
        return [order]
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def _subsample_mask(mask: np.ndarray, fraction: float, rng: np.random.Generator) -> np.ndarray:
    if fraction >= 1.0:
        return mask
    idx = np.nonzero(mask)[0]
    keep = rng.permutation(idx)[:max(1, int(round(fraction * idx.size)))]
    out = np.zeros_like(mask)
    out[keep] = True
    return out


def train(dataset: Dataset, cfg: dict) -> TrainResult:
    """Run the full training phase and return the best-validation result."""
    if cfg["task"] != dataset.task:
        raise ConfigError(f"config task '{cfg['task']}' != dataset task '{dataset.task}'")
    tr = cfg["train"]
    seed_seq = np.random.SeedSequence(cfg["seed"])
    model_seeds, aux_entropy = seed_seq.spawn(2)
    aux_rngs = [np.random.default_rng(s) for s in aux_entropy.spawn(4)]
    shuffle_rng, dropout_rng, noise_rng, router_rng = aux_rngs

    in_dim = dataset.in_dim
    out_dim = dataset.out_dim
    model = Model(dataset.task, in_dim, out_dim, cfg, model_seeds)

    if tr["pe_mode"]:
        paths = tr["expert_checkpoints"]
        if paths is None or len(paths) != model.pool.initial_count:
            raise ConfigError("pe_mode needs one checkpoint path per expert")
        freeze_experts(model.pool, {i: load_expert_checkpoint(p)
                                    for i, p in enumerate(paths)})

    tracker = ImportanceTracker(n_experts=model.pool.initial_count,
                                alpha=tr["alpha"], eta=tr["eta"],
                                prune_interval=tr["prune_interval"],
                                prune_type=tr["prune_type"])
    opt = Adam(lr=tr["lr"], weight_decay=tr["weight_decay"])

    train_mask = dataset.train_mask
    if dataset.task != "link_pred" and tr["router_train_fraction"] < 1.0:
        train_mask = _subsample_mask(train_mask, tr["router_train_fraction"], router_rng)

    best_ckpt: Checkpoint | None = None
    best_epoch = -1
    best_score = -np.inf
    best_metrics = (0.0, 0.0)
    rows: list[MetricRow] = []
    min_k_seen = np.inf

    for epoch in range(1, tr["epochs"] + 1):
        losses, k_sums, k_counts = [], 0.0, 0
        for batch_no, batch in enumerate(_make_batches(dataset, train_mask, tr, shuffle_rng)):
            fwd, loss, counts = _train_step(model, dataset, batch, cfg, train_mask,
                                            dropout_rng, noise_rng)
            loss_val = loss.item()
            if not np.isfinite(loss_val):
                gamma = contribution_scores(
                    _gamma_weights(fwd, tr["prune_type"]), fwd.expert_outputs, fwd.alive)
                raise NumericalError(
                    f"non-finite loss at epoch {epoch} batch {batch_no}: "
                    f"loss={loss_val}, per-expert gamma={np.round(gamma, 4).tolist()}, "
                    f"soft scores in [{fwd.gate.soft.values.min():.4f}, "
                    f"{fwd.gate.soft.values.max():.4f}], mean k={counts.mean():.2f}")
            params = model.parameters()
            for p in params.values():
                p.zero_grad()
            loss.backward()
            try:
                opt.step(model.trainable_parameters())
            except NumericalError as exc:
                raise NumericalError(
                    f"optimizer abort at epoch {epoch} batch {batch_no}: {exc}") from None
            losses.append(loss_val)
            k_sums += counts.sum()
            k_counts += counts.size
            min_k_seen = min(min_k_seen, counts.min())
            gamma = contribution_scores(_gamma_weights(fwd, tr["prune_type"]),
                                        fwd.expert_outputs, fwd.alive)
            tracker.update(gamma, fwd.alive)

        metrics_by_split, eval_counts = _evaluate_all(model, dataset, cfg)
        min_k_seen = min(min_k_seen, eval_counts.min())
        val_value = metrics_by_split["valid"]
        test_value = metrics_by_split["test"]
        score = _oriented(dataset.task, val_value)

        tracker.maybe_rollback(model.pool, epoch, score, tr["delta_val"])

        if score > best_score:
            best_score = score
            best_epoch = epoch
            best_metrics = (val_value, test_value)
            best_ckpt = model.snapshot(_checkpoint_meta(cfg, dataset, epoch,
                                                        val_value, test_value))

        rows.append(MetricRow(epoch=epoch,
                              train_loss=float(np.mean(losses)) if losses else np.nan,
                              val_metric=val_value, test_metric=test_value,
                              alive_experts=model.pool.alive_count,
                              mean_k=k_sums / max(k_counts, 1)))

        if tr["pruning"] and epoch % tr["prune_interval"] == 0 and epoch < tr["epochs"]:
            tracker.prune(model.pool, epoch, score)

    assert best_ckpt is not None
    hist_model = model_from_checkpoint(best_ckpt, dataset)
    activation_hist, hist_min_k = _activation_histogram(hist_model, dataset, cfg)
    min_k_seen = min(min_k_seen, hist_min_k)

    return TrainResult(best=best_ckpt, best_epoch=best_epoch,
                       val_metric=best_metrics[0], test_metric=best_metrics[1],
                       rows=rows, prune_history=tracker.history,
                       activation_hist=activation_hist,
                       eval_counts=model.eval_counts, min_k_seen=int(min_k_seen),
                       model=model, tracker=tracker,
                       metric_name=primary_metric_name(dataset))


def _checkpoint_meta(cfg, dataset, epoch, val_value, test_value) -> dict:
    return {"config": cfg, "epoch": epoch, "val_metric": val_value,
            "test_metric": test_value, "task": dataset.task,
            "in_dim": dataset.in_dim, "out_dim": dataset.out_dim,
            "metric": primary_metric_name(dataset)}


def _gamma_weights(fwd: ForwardOut, prune_type: str) -> np.ndarray:
    if prune_type == PRUNE_RAW_GATES:
        return fwd.gate.soft.values
    return fwd.gate.weights.values


# ---------------------------------------------------------------------------
# batch assembly per task family
# ---------------------------------------------------------------------------

@dataclass
class BatchData:
    graph: Graph
    x: np.ndarray
    ctx: np.ndarray
    loss_rows: np.ndarray
    labels: np.ndarray
    membership: np.ndarray | None = None
    n_segments: int = 0
    link_pairs: np.ndarray | None = None
    link_targets: np.ndarray | None = None


def _make_batches(dataset: Dataset, train_mask: np.ndarray | None, tr: dict,
                  rng: np.random.Generator):
    if dataset.task == "node_cls":
        yield from (("nodes", nodes) for nodes in
                    _node_batches(dataset.graph.n, tr["batch_size"], rng))
    elif dataset.task in ("graph_cls", "graph_reg"):
        train_ids = np.nonzero(train_mask)[0]
        order = rng.permutation(train_ids)
        bs = tr["batch_size"] if tr["batch_size"] > 0 else len(order)
        for i in range(0, len(order), bs):
            yield ("graphs", order[i:i + bs])
    else:  # link_pred trains full-graph with fresh negatives per epoch
        yield ("link", None)


def _train_step(model: Model, dataset: Dataset, batch, cfg, train_mask,
                dropout_rng, noise_rng):
    tr = cfg["train"]
    kind, members = batch
    if kind == "nodes":
        bd = _node_batch_data(model, dataset, members, train_mask)
    elif kind == "graphs":
        bd = _graph_batch_data(model, dataset, members)
    else:
        bd = _link_batch_data(model, dataset, noise_rng)

    fwd = model.forward(bd.graph, bd.x, bd.ctx, membership=bd.membership,
                        n_segments=bd.n_segments, training=True,
                        dropout_rng=dropout_rng, noise_rng=noise_rng,
                        mask_mode=MASK_MODE_STE)
    if dataset.task == "link_pred":
        scores = link_scores(fwd.output, bd.link_pairs)
        loss = tape.bce_with_logits(scores, bd.link_targets.reshape(-1, 1))
    elif bd.loss_rows.size:
        loss = task_loss(dataset.task, fwd.output, dataset, bd.loss_rows, bd.labels)
    else:
        loss = constant(0.0)
    if tr["w_imp"] > 0:
        loss = tape.add(loss, tape.scale(importance_loss(fwd.gate.weights), tr["w_imp"]))
    if tr["w_div"] > 0:
        loss = tape.add(loss, tape.scale(diversity_loss(fwd.gate.weights), tr["w_div"]))
    return fwd, loss, fwd.gate.counts


def _node_batch_data(model: Model, dataset: Dataset, nodes: np.ndarray,
                     train_mask: np.ndarray) -> BatchData:
    sub, _ = induced_subgraph(dataset.graph, nodes)
    x = dataset.features[nodes]
    pe_rows = full_graph_pe(dataset, model.pe_dim)[nodes]
    ctx = node_batch_context(sub, x, pe_rows)
    in_train = np.nonzero(train_mask[nodes])[0]
    labels = dataset.labels[nodes[in_train]]
    return BatchData(graph=sub, x=x, ctx=ctx, loss_rows=in_train, labels=labels)


def _graph_batch_data(model: Model, dataset: Dataset, graph_ids: np.ndarray) -> BatchData:
    graphs = [dataset.graphs[g] for g in graph_ids]
    union, membership = disjoint_union(graphs)
    feats = [dataset.graph_features[g] for g in graph_ids]
    pes = [per_graph_pe(dataset, int(g), model.pe_dim) for g in graph_ids]
    x = np.concatenate(feats, axis=0)
    ctx = graph_batch_context(feats, pes)
    labels = dataset.labels[graph_ids]
    return BatchData(graph=union, x=x, ctx=ctx,
                     loss_rows=np.arange(len(graph_ids)), labels=labels,
                     membership=membership, n_segments=len(graph_ids))


def _link_batch_data(model: Model, dataset: Dataset, rng: np.random.Generator) -> BatchData:
    g = dataset.graph
    x = dataset.features
    pe = full_graph_pe(dataset, model.pe_dim)
    ctx = node_batch_context(g, x, pe)
    pos = dataset.links.train_pos
    neg = np.column_stack([pos[:, 0],
                           rng.integers(0, g.n, size=len(pos))])  # corrupt one endpoint
    pairs = np.concatenate([pos, neg], axis=0)
    targets = np.concatenate([np.ones(len(pos)), np.zeros(len(neg))])
    return BatchData(graph=g, x=x, ctx=ctx, loss_rows=np.empty(0, dtype=int),
                     labels=np.empty(0), link_pairs=pairs, link_targets=targets)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def _full_forward(model: Model, dataset: Dataset) -> tuple[ForwardOut, np.ndarray]:
    """Deterministic full-data forward used for metrics and histograms."""
    if dataset.task in ("node_cls", "link_pred"):
        g = dataset.graph
        pe = full_graph_pe(dataset, model.pe_dim)
        ctx = node_batch_context(g, dataset.features, pe)
        fwd = model.forward(g, dataset.features, ctx, training=False,
                            mask_mode=MASK_MODE_DETACH)
        return fwd, fwd.gate.counts
    ids = np.arange(len(dataset.graphs))
    bd = _graph_batch_data(model, dataset, ids)
    fwd = model.forward(bd.graph, bd.x, bd.ctx, membership=bd.membership,
                        n_segments=bd.n_segments, training=False,
                        mask_mode=MASK_MODE_DETACH)
    return fwd, fwd.gate.counts


def _split_mask(dataset: Dataset, split: str) -> np.ndarray:
    masks = {"train": dataset.train_mask, "valid": dataset.val_mask,
             "test": dataset.test_mask}
    if split not in masks:
        raise ConfigError(f"split must be train/valid/test, got '{split}'")
    mask = masks[split]
    if mask is None or not mask.any():
        raise DataError(f"split '{split}' is empty")
    return mask


def _metrics_from_forward(fwd: ForwardOut, dataset: Dataset, split: str,
                          hits_k_value: int) -> dict[str, float]:
    if dataset.task == "link_pred":
        links = dataset.links
        pos = links.val_pos if split == "valid" else links.test_pos
        neg = links.val_neg if split == "valid" else links.test_neg
        if split == "train":
            pos, neg = links.train_pos, links.val_neg
        emb = fwd.output
        pos_scores = link_scores(emb, pos).values.ravel()
        neg_scores = link_scores(emb, neg).values.ravel()
        k = min(hits_k_value, neg_scores.size)
        return {"hits": hits_at_k(pos_scores, neg_scores, k)}
    mask = _split_mask(dataset, split)
    rows = np.nonzero(mask)[0]
    out = fwd.output.values[rows]
    labels = dataset.labels[rows]
    if dataset.task == "graph_reg":
        return {"rmse": rmse(out.ravel(), labels)}
    if dataset.multilabel:
        return {"auc": multilabel_auc(out, labels)}
    result = {"accuracy": accuracy(out.argmax(axis=1), labels)}
    if dataset.num_classes == 2:
        result["auc"] = roc_auc(out[:, 1] - out[:, 0], labels)
    return result


def _evaluate_all(model: Model, dataset: Dataset, cfg) -> tuple[dict[str, float], np.ndarray]:
    fwd, counts = _full_forward(model, dataset)
    name = primary_metric_name(dataset)
    out = {}
    for split in ("valid", "test"):
        out[split] = _metrics_from_forward(fwd, dataset, split, cfg["train"]["hits_k"])[name]
    return out, counts


def _activation_histogram(model: Model, dataset: Dataset, cfg) -> tuple[np.ndarray, int]:
    _, counts = _full_forward(model, dataset)
    hist = np.bincount(counts, minlength=model.pool.initial_count + 1)
    return hist, int(counts.min())


def evaluate(dataset: Dataset, ckpt: Checkpoint, split: str,
             hits_k_value: int | None = None) -> dict[str, float]:
    """Metrics of a stored checkpoint on one split of the dataset."""
    model = model_from_checkpoint(ckpt, dataset)
    fwd, _ = _full_forward(model, dataset)
    k = hits_k_value or ckpt.meta.get("config", {}).get("train", {}).get("hits_k", 20)
    return _metrics_from_forward(fwd, dataset, split, k)


# ---------------------------------------------------------------------------
# standalone expert pretraining (frozen-experts mode)
# ---------------------------------------------------------------------------

def pretrain_experts(dataset: Dataset, cfg: dict, paths: list[str]) -> None:
    """Train each expert standalone with its own head; save parameter blobs."""
    kinds = cfg["model"]["expert_kinds"] or list(default_pool_kinds(dataset.task))
    if len(paths) != len(kinds):
        raise ConfigError(f"need {len(kinds)} checkpoint paths, got {len(paths)}")
    for idx, (kind, path) in enumerate(zip(kinds, paths)):
        params = pretrain_single_expert(dataset, cfg, kind, idx)
        save_expert_checkpoint(path, params, {"kind": kind, "index": idx})


def pretrain_single_expert(dataset: Dataset, cfg: dict, kind: str, idx: int
                           ) -> dict[str, np.ndarray]:
    model_cfg = cfg["model"]
    seed_seq = np.random.SeedSequence([cfg["seed"], 7771, idx])
    rng = np.random.default_rng(seed_seq)
    spec = ExpertSpec(kind=kind, layers=model_cfg["layers"], hidden=model_cfg["hidden"],
                      cheb_order=model_cfg["cheb_order"], sgc_steps=model_cfg["sgc_steps"],
                      mixhop_powers=tuple(model_cfg["mixhop_powers"]),
                      gin_eps_learnable=model_cfg["gin_eps_learnable"])
    params = init_expert_params(spec, dataset.in_dim, rng)
    head_w = tape.parameter(glorot(rng, model_cfg["hidden"], dataset.out_dim), "head.W")
    head_b = tape.parameter(np.zeros((1, dataset.out_dim)), "head.b")
    all_params = dict(params, **{"head.W": head_w, "head.b": head_b})
    opt = Adam(lr=cfg["train"]["lr"])
    g = dataset.graph
    x = constant(dataset.features)
    conv = ConvCache(g)
    rows = np.nonzero(dataset.train_mask)[0]
    labels = dataset.labels[rows]
    for _ in range(cfg["train"]["pe_pretrain_epochs"]):
        h = expert_forward(spec, params, x, conv)
        logits = tape.add_row(h @ head_w, head_b)
        if dataset.multilabel:
            loss = tape.bce_with_logits(tape.gather_rows(logits, rows), labels)
        else:
            loss = tape.softmax_cross_entropy(tape.gather_rows(logits, rows), labels)
        for p in all_params.values():
            p.zero_grad()
        loss.backward()
        opt.step(all_params)
    return {name: p.values.copy() for name, p in params.items()}
