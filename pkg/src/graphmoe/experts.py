"""The pool of message-passing experts.

Each expert kind instantiates the shared update rule
``H' = act(sum_q C_q H W_q)`` with its own convolution matrix: spectral
smoothing (GCN, SGC, Cheb), identity-plus-mean aggregation (GraphSAGE),
learned attention (GAT), injective sum aggregation (GIN), jump
connections (JKNet), or mixed adjacency powers (MixHop). All experts map
d input columns to the shared ``hidden`` width so downstream projections
are uniform.

A diagnostic kind ``noise`` emits a fixed random matrix regardless of the
input; it exists only for negative-control experiments on pruning and is
never part of a default pool.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from . import tape
from .errors import ConfigError
from .graph import Graph, row_normalized_adjacency, sym_norm_laplacian, sym_normalized_adjacency
from .tape import Tensor

EXPERT_KINDS = ("GCN", "JKNet", "ChebCNN", "MixHop", "GAT", "SGC", "GIN", "GraphSAGE")

# documented fixed pool orders per task family
NODE_POOL = ("GCN", "JKNet", "ChebCNN", "MixHop", "GAT", "SGC", "GIN", "GraphSAGE")
GRAPH_POOL = ("GCN", "GIN", "GraphSAGE", "GAT")
LINK_POOL = ("GCN", "GraphSAGE", "JKNet", "SGC")


@dataclass(frozen=True)
class ExpertSpec:
    kind: str
    layers: int = 2
    hidden: int = 16
    cheb_order: int = 2
    gin_eps_learnable: bool = True
    mixhop_powers: tuple[int, ...] = (0, 1, 2)
    sgc_steps: int = 2
    leaky_slope: float = 0.2

    def __post_init__(self):
        if self.kind not in EXPERT_KINDS and self.kind != "noise":
            raise ConfigError(f"unknown expert kind '{self.kind}'")
        if self.layers < 1:
            raise ConfigError("expert needs at least one layer")
        if self.kind == "ChebCNN" and self.cheb_order < 1:
            raise ConfigError("Chebyshev order must be >= 1")
        if self.kind == "MixHop" and not self.mixhop_powers:
            raise ConfigError("MixHop needs a non-empty powers set")
        if self.kind == "SGC" and self.sgc_steps < 1:
            raise ConfigError("SGC needs at least one propagation step")


@dataclass
class PoolEntry:
    spec: ExpertSpec
    params: dict[str, Tensor]
    alive: bool = True
    frozen: bool = False


@dataclass
class ExpertPool:
    """Fixed-order expert collection; pruning flips flags, never reorders."""

    entries: list[PoolEntry]

    @property
    def initial_count(self) -> int:
        return len(self.entries)

    @property
    def alive_count(self) -> int:
        return sum(e.alive for e in self.entries)

    def alive_indices(self) -> np.ndarray:
        return np.array([i for i, e in enumerate(self.entries) if e.alive], dtype=np.intp)

    def kinds(self) -> list[str]:
        return [e.spec.kind for e in self.entries]

    def parameters(self, trainable_only: bool = False) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for i, e in enumerate(self.entries):
            if trainable_only and (not e.alive or e.frozen):
                continue
            for name, p in e.params.items():
                out[f"expert{i}.{name}"] = p
        return out


class ConvCache:
    """Per-graph convolution operators, built lazily and shared by experts."""

    def __init__(self, g: Graph):
        self.graph = g
        self._ops: dict[str, sp.csr_matrix] = {}

    def get(self, key: str) -> sp.csr_matrix:
        op = self._ops.get(key)
        if op is None:
            g = self.graph
            if key == "sym_selfloop":
                op = sym_normalized_adjacency(g, add_self_loops=True)
            elif key == "rownorm":
                op = row_normalized_adjacency(g)
            elif key == "adj":
                op = g.adjacency()
            elif key == "cheb":
                # scaled Laplacian L - I with the lambda_max = 2 convention
                op = (sp.csr_matrix(sym_norm_laplacian(g)) - sp.eye(g.n)).tocsr()
            else:
                raise KeyError(key)
            self._ops[key] = op
        return op

    def attention_mask(self) -> np.ndarray:
        mask = self.graph.adjacency().toarray() > 0
        np.fill_diagonal(mask, True)  # self-attention always admissible
        return mask


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def _linear(params: dict, rng, name: str, fan_in: int, fan_out: int) -> None:
    params[name + ".W"] = tape.parameter(glorot(rng, fan_in, fan_out), name + ".W")
    params[name + ".b"] = tape.parameter(np.zeros((1, fan_out)), name + ".b")


def _apply_linear(params: dict, prefix: str, x: Tensor) -> Tensor:
    return tape.add_row(x @ params[prefix + ".W"], params[prefix + ".b"])


def init_expert_params(spec: ExpertSpec, in_dim: int, rng: np.random.Generator) -> dict[str, Tensor]:
    p: dict[str, Tensor] = {}
    h = spec.hidden
    dims = [in_dim] + [h] * spec.layers
    if spec.kind in ("GCN", "GraphSAGE", "JKNet"):
        for l in range(spec.layers):
            fan_in = dims[l] * (2 if spec.kind == "GraphSAGE" else 1)
            _linear(p, rng, f"layer{l}", fan_in, h)
        if spec.kind == "JKNet":
            _linear(p, rng, "jump", spec.layers * h, h)
    elif spec.kind == "GAT":
        for l in range(spec.layers):
            _linear(p, rng, f"layer{l}", dims[l], h)
            p[f"layer{l}.att_src"] = tape.parameter(glorot(rng, h, 1), f"layer{l}.att_src")
            p[f"layer{l}.att_dst"] = tape.parameter(glorot(rng, h, 1), f"layer{l}.att_dst")
    elif spec.kind == "GIN":
        for l in range(spec.layers):
            _linear(p, rng, f"layer{l}.mlp0", dims[l], h)
            _linear(p, rng, f"layer{l}.mlp1", h, h)
            if spec.gin_eps_learnable:
                p[f"layer{l}.eps"] = tape.parameter(np.zeros((1, 1)), f"layer{l}.eps")
    elif spec.kind == "SGC":
        _linear(p, rng, "layer0", in_dim, h)
    elif spec.kind == "ChebCNN":
        for l in range(spec.layers):
            for k in range(spec.cheb_order + 1):
                _linear(p, rng, f"layer{l}.cheb{k}", dims[l], h)
    elif spec.kind == "MixHop":
        widths = _mixhop_widths(spec)
        for l in range(spec.layers):
            for j, w in zip(spec.mixhop_powers, widths):
                _linear(p, rng, f"layer{l}.pow{j}", dims[l], w)
    elif spec.kind == "noise":
        pass  # parameter-free by design
    return p


def _mixhop_widths(spec: ExpertSpec) -> list[int]:
    k = len(spec.mixhop_powers)
    base = spec.hidden // k
    widths = [base] * k
    widths[0] += spec.hidden - base * k
    return widths


def expert_forward(spec: ExpertSpec, params: dict[str, Tensor], x: Tensor,
                   conv: ConvCache, training: bool = False,
                   dropout_rate: float = 0.0,
                   rng: np.random.Generator | None = None) -> Tensor:
    """Run one expert over the batch graph; output is (n, hidden)."""
    fn = _FORWARDS.get(spec.kind)
    if fn is None:
        raise ConfigError(f"unknown expert kind '{spec.kind}'")

    def maybe_dropout(t: Tensor) -> Tensor:
        if training and dropout_rate > 0.0 and rng is not None:
            return tape.dropout(t, dropout_rate, rng, training=True)
        return t

    return fn(spec, params, x, conv, maybe_dropout)


def _forward_gcn(spec, params, x, conv, drop):
    op = conv.get("sym_selfloop")
    h = x
    for l in range(spec.layers):
        h = _apply_linear(params, f"layer{l}", tape.spmm(op, drop(h)))
        if l < spec.layers - 1:
            h = tape.relu(h)
    return h


def _forward_sage(spec, params, x, conv, drop):
    op = conv.get("rownorm")
    h = x
    for l in range(spec.layers):
        h = drop(h)
        h = _apply_linear(params, f"layer{l}", tape.concat_cols([h, tape.spmm(op, h)]))
        if l < spec.layers - 1:
            h = tape.relu(h)
    return h


def _forward_gat(spec, params, x, conv, drop):
    mask = conv.attention_mask()
    n = x.shape[0]
    ones_row = tape.constant(np.ones((1, n)))
    ones_col = tape.constant(np.ones((n, 1)))
    h = x
    for l in range(spec.layers):
        hw = _apply_linear(params, f"layer{l}", drop(h))
        s_src = hw @ params[f"layer{l}.att_src"]  # score of the receiving node
        s_dst = hw @ params[f"layer{l}.att_dst"]  # score of the neighbor
        scores = tape.add(s_src @ ones_row, ones_col @ tape.transpose(s_dst))
        attn = tape.masked_row_softmax(tape.leaky_relu(scores, spec.leaky_slope), mask)
        h = attn @ hw
        if l < spec.layers - 1:
            h = tape.relu(h)
    return h


def _forward_gin(spec, params, x, conv, drop):
    adj = conv.get("adj")
    h = x
    for l in range(spec.layers):
        h = drop(h)
        agg = tape.spmm(adj, h)
        if spec.gin_eps_learnable:
            one_plus_eps = tape.add_const(params[f"layer{l}.eps"], 1.0)
            agg = tape.add(agg, tape.scale_by(h, one_plus_eps))
        else:
            agg = tape.add(agg, h)
        z = tape.relu(_apply_linear(params, f"layer{l}.mlp0", agg))
        h = _apply_linear(params, f"layer{l}.mlp1", z)
        if l < spec.layers - 1:
            h = tape.relu(h)
    return h


def _forward_sgc(spec, params, x, conv, drop):
    op = conv.get("sym_selfloop")
    h = drop(x)
    for _ in range(spec.sgc_steps):
        h = tape.spmm(op, h)
    return _apply_linear(params, "layer0", h)


def _forward_jknet(spec, params, x, conv, drop):
    op = conv.get("sym_selfloop")
    h = x
    collected = []
    for l in range(spec.layers):
        h = _apply_linear(params, f"layer{l}", tape.spmm(op, drop(h)))
        if l < spec.layers - 1:
            h = tape.relu(h)
        collected.append(h)
    return _apply_linear(params, "jump", tape.concat_cols(collected))


def _forward_cheb(spec, params, x, conv, drop):
    op = conv.get("cheb")
    h = x
    for l in range(spec.layers):
        h = drop(h)
        t_prev, t_cur = None, h
        acc = _apply_linear(params, f"layer{l}.cheb0", h)
        for k in range(1, spec.cheb_order + 1):
            if k == 1:
                t_next = tape.spmm(op, h)
            else:
                t_next = tape.add(tape.scale(tape.spmm(op, t_cur), 2.0), tape.scale(t_prev, -1.0))
            acc = tape.add(acc, _apply_linear(params, f"layer{l}.cheb{k}", t_next))
            t_prev, t_cur = t_cur, t_next
        h = acc
        if l < spec.layers - 1:
            h = tape.relu(h)
    return h


def _forward_mixhop(spec, params, x, conv, drop):
    op = conv.get("rownorm")
    h = x
    for l in range(spec.layers):
        h = drop(h)
        powers = {0: h}
        max_pow = max(spec.mixhop_powers)
        cur = h
        for j in range(1, max_pow + 1):
            cur = tape.spmm(op, cur)
            powers[j] = cur
        h = tape.concat_cols([_apply_linear(params, f"layer{l}.pow{j}", powers[j])
                              for j in spec.mixhop_powers])
        if l < spec.layers - 1:
            h = tape.relu(h)
    return h


def _forward_noise(spec, params, x, conv, drop):
    # fixed pseudo-random output: depends on batch shape only, never on x
    rng = np.random.default_rng(1234321)
    return tape.constant(rng.normal(size=(x.shape[0], spec.hidden)))


_FORWARDS = {
    "GCN": _forward_gcn,
    "GraphSAGE": _forward_sage,
    "GAT": _forward_gat,
    "GIN": _forward_gin,
    "SGC": _forward_sgc,
    "JKNet": _forward_jknet,
    "ChebCNN": _forward_cheb,
    "MixHop": _forward_mixhop,
    "noise": _forward_noise,
}


def default_pool_kinds(task: str) -> tuple[str, ...]:
    if task in ("graph_cls", "graph_reg"):
        return GRAPH_POOL
    if task == "link_pred":
        return LINK_POOL
    return NODE_POOL


def build_expert_pool(kinds, in_dim: int, hidden: int, layers: int,
                      seed_seq: np.random.SeedSequence,
                      allow_duplicates: bool = False,
                      spec_overrides: dict | None = None) -> ExpertPool:
    """Initialize every expert with its own independent random stream."""
    kinds = list(kinds)
    if len(kinds) < 1:
        raise ConfigError("expert pool must contain at least one expert")
    if len(kinds) > 8:
        raise ConfigError(f"expert pool limited to 8 experts, got {len(kinds)}")
    if not allow_duplicates and len(set(kinds)) != len(kinds):
        raise ConfigError("duplicate expert kinds require allow_duplicates")
    overrides = spec_overrides or {}
    entries = []
    for child, kind in zip(seed_seq.spawn(len(kinds)), kinds):
        spec = ExpertSpec(kind=kind, layers=layers, hidden=hidden, **overrides)
        rng = np.random.default_rng(child)
        entries.append(PoolEntry(spec=spec, params=init_expert_params(spec, in_dim, rng)))
    return ExpertPool(entries=entries)


def expert_equivariance_check(spec: ExpertSpec, n: int = 6, in_dim: int = 3,
                              seed: int = 0, tol: float = 1e-9,
                              forward=expert_forward) -> bool:
    """Permuting nodes of (X, A) must permute the expert output identically."""
    rng = np.random.default_rng(seed)
    from .graph import build_graph  # local import keeps module load order simple

    edges = rng.integers(0, n, size=(2 * n, 2))
    g = build_graph(edges, n)
    x = rng.normal(size=(n, in_dim))
    params = init_expert_params(spec, in_dim, np.random.default_rng(seed + 1))
    perm = rng.permutation(n)
    g_perm = build_graph([(int(perm[u]), int(perm[v])) for u, v in g.edge_array()], n)
    x_perm = np.empty_like(x)
    x_perm[perm] = x

    out = forward(spec, params, tape.constant(x), ConvCache(g)).values
    out_perm = forward(spec, params, tape.constant(x_perm), ConvCache(g_perm)).values
    expected = np.empty_like(out)
    expected[perm] = out
    return bool(np.max(np.abs(out_perm - expected)) <= tol)
