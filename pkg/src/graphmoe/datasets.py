"""Dataset containers, synthetic generators, and file loading.

File formats:

* edge list: one ``u<TAB>v`` pair per line, 0-based decimal indices,
  lines starting with ``#`` ignored;
* features: CSV with a header row, one row per node in index order;
* labels: CSV with a header row, one column of class indices (or several
  0/1 columns for multi-label targets, or one real column for regression);
* splits: CSV with a header row and one of train/valid/test per node.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .graph import Graph, build_graph

TASKS = ("node_cls", "graph_cls", "graph_reg", "link_pred")


@dataclass
class LinkSplit:
    """Positive edges per split plus shared evaluation negatives."""

    train_pos: np.ndarray
    val_pos: np.ndarray
    test_pos: np.ndarray
    val_neg: np.ndarray
    test_neg: np.ndarray


@dataclass
class Dataset:
    task: str
    graph: Graph | None = None
    graphs: list[Graph] | None = None
    features: np.ndarray | None = None          # node tasks: (n, d)
    graph_features: list[np.ndarray] | None = None
    labels: np.ndarray | None = None
    train_mask: np.ndarray | None = None
    val_mask: np.ndarray | None = None
    test_mask: np.ndarray | None = None
    links: LinkSplit | None = None
    num_classes: int = 0
    multilabel: bool = False
    pe_cache: dict[int, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"unknown task '{self.task}'")
        if self.task in ("node_cls", "link_pred"):
            if self.graph is None or self.features is None:
                raise DataError(f"{self.task} needs a graph and node features")
            if self.features.shape[0] != self.graph.n:
                raise DataError(
                    f"feature rows ({self.features.shape[0]}) != node count ({self.graph.n})")
        else:
            if not self.graphs or self.graph_features is None:
                raise DataError(f"{self.task} needs a list of graphs with features")
        if self.task != "link_pred":
            self._check_masks()

    def _check_masks(self):
        masks = [self.train_mask, self.val_mask, self.test_mask]
        if any(m is None for m in masks):
            raise DataError("train/val/test masks are required")
        total = masks[0].astype(int) + masks[1].astype(int) + masks[2].astype(int)
        if total.max() > 1:
            raise DataError("split masks overlap")

    @property
    def in_dim(self) -> int:
        if self.features is not None:
            return self.features.shape[1]
        return self.graph_features[0].shape[1]

    @property
    def out_dim(self) -> int:
        if self.task == "graph_reg":
            return 1
        if self.task == "link_pred":
            return 0  # head width chosen by the model (embedding dim)
        if self.multilabel:
            return self.labels.shape[1]
        return self.num_classes


@dataclass(frozen=True)
class FeatureModel:
    """Class-conditional Gaussian features: mean separation on one axis
    per class plus isotropic noise."""

    dim: int = 8
    separation: float = 1.0
    noise: float = 1.0


def sbm_generate(blocks: int, sizes, p_in: float, p_out: float,
                 feature_model: FeatureModel, mix: str = "none", seed: int = 0,
                 split_fracs: tuple[float, float, float] = (0.5, 0.25, 0.25)) -> Dataset:
    """Stochastic block model with class-conditional Gaussian features.

    ``mix='mixed'`` rewires the second half of the blocks so that their
    edges run mostly *between* those blocks rather than inside them,
    planting regions where neighborhood smoothing points at the wrong
    class while raw or multi-hop features still separate.
    """
    if isinstance(sizes, int):
        sizes = [sizes] * blocks
    sizes = list(sizes)
    if len(sizes) != blocks:
        raise ConfigError(f"need {blocks} block sizes, got {len(sizes)}")
    if not (0.0 <= p_in <= 1.0 and 0.0 <= p_out <= 1.0):
        raise ConfigError("edge probabilities must lie in [0, 1]")
    if mix not in ("none", "mixed"):
        raise ConfigError(f"mix must be 'none' or 'mixed', got '{mix}'")
    if feature_model.dim < blocks:
        raise ConfigError("feature dim must be at least the block count")

    rng = np.random.default_rng(seed)
    n = int(sum(sizes))
    labels = np.repeat(np.arange(blocks), sizes)

    prob = np.full((blocks, blocks), p_out)
    np.fill_diagonal(prob, p_in)
    if mix == "mixed":
        hetero = list(range(blocks // 2, blocks))
        for a in hetero:
            prob[a, a] = p_out
            for b in hetero:
                if a != b:
                    prob[a, b] = prob[b, a] = p_in

    offsets = np.concatenate([[0], np.cumsum(sizes)])
    edge_parts = []
    for a in range(blocks):
        for b in range(a, blocks):
            p = prob[a, b]
            if p <= 0.0:
                continue
            rows = np.arange(offsets[a], offsets[a + 1])
            cols = np.arange(offsets[b], offsets[b + 1])
            draw = rng.random((rows.size, cols.size)) < p
            if a == b:
                draw = np.triu(draw, k=1)
            r, c = np.nonzero(draw)
            if r.size:
                edge_parts.append(np.stack([rows[r], cols[c]], axis=1))
    edges = np.concatenate(edge_parts, axis=0) if edge_parts else np.empty((0, 2), dtype=int)
    graph = build_graph(edges, n)

    means = np.zeros((blocks, feature_model.dim))
    means[np.arange(blocks), np.arange(blocks)] = feature_model.separation
    features = means[labels] + feature_model.noise * rng.normal(size=(n, feature_model.dim))

    train, val, test = _random_masks(n, split_fracs, rng)
    return Dataset(task="node_cls", graph=graph, features=features, labels=labels,
                   train_mask=train, val_mask=val, test_mask=test, num_classes=blocks)


def _random_masks(n: int, fracs, rng) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    order = rng.permutation(n)
    n_train = int(round(fracs[0] * n))
    n_val = int(round(fracs[1] * n))
    train = np.zeros(n, dtype=bool)
    val = np.zeros(n, dtype=bool)
    test = np.zeros(n, dtype=bool)
    train[order[:n_train]] = True
    val[order[n_train:n_train + n_val]] = True
    test[order[n_train + n_val:]] = True
    return train, val, test


def make_link_dataset(base: Dataset, val_frac: float = 0.1, test_frac: float = 0.1,
                      negatives_per_split: int | None = None, seed: int = 0) -> Dataset:
    """Hold out edges of a node dataset as link-prediction targets.

    The training graph keeps only the training positives; evaluation
    negatives are uniform non-edges shared by all models.
    """
    g = base.graph
    edges = g.edge_array()
    edges = edges[edges[:, 0] != edges[:, 1]]  # self-loops are not link targets
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(edges))
    n_val = int(round(val_frac * len(edges)))
    n_test = int(round(test_frac * len(edges)))
    val_pos = edges[order[:n_val]]
    test_pos = edges[order[n_val:n_val + n_test]]
    train_pos = edges[order[n_val + n_test:]]
    train_graph = build_graph(train_pos, g.n)
    n_neg = negatives_per_split or max(len(val_pos), len(test_pos))
    existing = set(map(tuple, edges))
    val_neg = _sample_non_edges(g.n, existing, n_neg, rng)
    test_neg = _sample_non_edges(g.n, existing, n_neg, rng)
    return Dataset(task="link_pred", graph=train_graph, features=base.features,
                   links=LinkSplit(train_pos=train_pos, val_pos=val_pos, test_pos=test_pos,
                                   val_neg=val_neg, test_neg=test_neg))


def _sample_non_edges(n: int, existing: set, count: int, rng) -> np.ndarray:
    out = []
    guard = 0
    while len(out) < count:
        u = int(rng.integers(0, n))
        v = int(rng.integers(0, n))
        if u == v:
            continue
        key = (min(u, v), max(u, v))
        if key in existing:
            continue
        out.append(key)
        guard += 1
        if guard > 100 * count + 1000:
            raise DataError("could not sample enough non-edges")
    return np.asarray(out, dtype=np.int64)


def make_graph_level_dataset(n_graphs: int = 60, task: str = "graph_cls", seed: int = 0,
                             feature_dim: int = 4,
                             split_fracs: tuple[float, float, float] = (0.5, 0.25, 0.25)
                             ) -> Dataset:
    """Small random-graph corpus for graph-level tasks.

    Classification: sparse vs dense wiring. Regression: mean degree.
    Features are noise except for a constant first column, so the labels
    are recoverable only through structure-aware aggregation.
    """
    rng = np.random.default_rng(seed)
    graphs, feats, labels = [], [], []
    for i in range(n_graphs):
        n = int(rng.integers(6, 14))
        dense = i % 2 == 1
        p = 0.55 if dense else 0.15
        draw = np.triu(rng.random((n, n)) < p, k=1)
        edges = np.stack(np.nonzero(draw), axis=1)
        g = build_graph(edges, n)
        graphs.append(g)
        f = rng.normal(size=(n, feature_dim))
        f[:, 0] = 1.0
        feats.append(f)
        if task == "graph_cls":
            labels.append(int(dense))
        else:
            labels.append(float(g.degrees.mean()))
    train, val, test = _random_masks(n_graphs, split_fracs, rng)
    return Dataset(task=task, graphs=graphs, graph_features=feats,
                   labels=np.asarray(labels), train_mask=train, val_mask=val,
                   test_mask=test, num_classes=2 if task == "graph_cls" else 0)


# ---------------------------------------------------------------------------
# file loading
# ---------------------------------------------------------------------------

def read_edge_list(path: str, n: int) -> Graph:
    edges = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataError(f"{path}:{lineno}: expected 'u<TAB>v', got {line!r}")
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-integer node index") from None
            edges.append((u, v))
    try:
        return build_graph(edges, n)
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from None


def read_csv_matrix(path: str) -> np.ndarray:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: empty file")
        width = len(header)
        for lineno, row in enumerate(reader, start=2):
            if len(row) != width:
                raise DataError(f"{path}:{lineno}: expected {width} columns, got {len(row)}")
            try:
                rows.append([float(x) for x in row])
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric value") from None
    if not rows:
        raise DataError(f"{path}: no data rows")
    return np.asarray(rows)


def read_split_column(path: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    names = {"train": 0, "valid": 1, "test": 2}
    codes = []
    with open(path, "r", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader, None)
        for lineno, row in enumerate(reader, start=2):
            tag = row[0].strip() if row else ""
            if tag not in names:
                raise DataError(f"{path}:{lineno}: split must be train/valid/test, got {tag!r}")
            codes.append(names[tag])
    arr = np.asarray(codes)
    return arr == 0, arr == 1, arr == 2


def load_dataset(edge_path: str, feature_path: str, label_path: str,
                 split_path: str, task: str = "node_cls") -> Dataset:
    """Assemble a node-level dataset from the documented file formats."""
    if task != "node_cls":
        raise ConfigError(f"file loading supports node_cls, got '{task}'")
    features = read_csv_matrix(feature_path)
    n = features.shape[0]
    graph = read_edge_list(edge_path, n)
    raw_labels = read_csv_matrix(label_path)
    if raw_labels.shape[0] != n:
        raise DataError(
            f"{label_path}: {raw_labels.shape[0]} label rows for {n} feature rows")
    train, val, test = read_split_column(split_path)
    if train.size != n:
        raise DataError(f"{split_path}: {train.size} split rows for {n} nodes")
    if raw_labels.shape[1] > 1:
        if not np.isin(raw_labels, (0.0, 1.0)).all():
            raise DataError(f"{label_path}: multi-label columns must be 0/1")
        return Dataset(task=task, graph=graph, features=features,
                       labels=raw_labels, train_mask=train, val_mask=val, test_mask=test,
                       num_classes=raw_labels.shape[1], multilabel=True)
    col = raw_labels[:, 0]
    if not np.allclose(col, np.round(col)):
        raise DataError(f"{label_path}: class labels must be integers")
    labels = col.astype(np.int64)
    num_classes = int(labels.max()) + 1
    if labels.min() < 0:
        raise DataError(f"{label_path}: negative class index {labels.min()}")
    return Dataset(task=task, graph=graph, features=features, labels=labels,
                   train_mask=train, val_mask=val, test_mask=test, num_classes=num_classes)
