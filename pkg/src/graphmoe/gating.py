"""Expert routing gates.

The primary gate scores every (node, expert) pair with linear-complexity
global attention over topology-enriched features, then thresholds the
sigmoid scores against learnable per-expert cutoffs. The binary mask is
trained with a straight-through surrogate, and any node left with no
expert falls back to its best-scoring one, so every node always routes
somewhere.

Two baselines share the aggregation contract: classic noisy top-k routing
and a threshold gate on plain feature logits (dynamic expert count but no
attention and no topology signal).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tape
from .errors import ConfigError, NumericalError
from .tape import Tensor

FROBENIUS_EPS = 1e-12
DEGENERACY_TOL = 1e-9

MASK_MODE_STE = "ste"      # straight-through backward (training)
MASK_MODE_DETACH = "detach"  # mask is a constant (finite-difference checks)


@dataclass
class GateOutput:
    """Per-batch gate tensors over the alive expert columns."""

    scores: Tensor        # raw attention scores Z, (n, N)
    soft: Tensor          # sigmoid scores Z', (n, N)
    mask: Tensor          # binary selection mask M, (n, N)
    weights: Tensor       # gate weights G = Z' * M, (n, N)
    counts: np.ndarray    # experts activated per node after fallback, (n,)

    def active_columns(self) -> np.ndarray:
        return np.nonzero(self.mask.values.sum(axis=0) > 0)[0]


def threshold_mask(soft: Tensor, thresholds: Tensor,
                   mode: str = MASK_MODE_STE) -> tuple[Tensor, np.ndarray]:
    """Binary mask of entries strictly above their column threshold.

    Rows with no entry above threshold get a fallback 1 at the row argmax
    (ties resolve to the lowest expert index). Returned counts include the
    fallback. In ``ste`` mode the mask carries the straight-through
    backward; in ``detach`` mode it is a constant.
    """
    if thresholds.shape != (1, soft.shape[1]):
        raise ConfigError(f"thresholds {thresholds.shape} do not match {soft.shape[1]} experts")
    pre = tape.relu(tape.sub_row(soft, thresholds))
    if mode == MASK_MODE_STE:
        base = tape.sign_straight_through(pre)
    elif mode == MASK_MODE_DETACH:
        base = tape.constant((pre.values > 0).astype(np.float64))
    else:
        raise ConfigError(f"unknown mask mode '{mode}'")
    empty = np.nonzero(base.values.sum(axis=1) == 0)[0]
    if empty.size:
        fallback = np.zeros_like(base.values)
        best = np.argmax(soft.values[empty], axis=1)  # argmax takes the first max
        fallback[empty, best] = 1.0
        mask = tape.add(base, tape.constant(fallback))
    else:
        mask = base
    counts = mask.values.sum(axis=1).astype(np.int64)
    return mask, counts


def gate_weights(soft: Tensor, mask: Tensor) -> Tensor:
    """G = Z' elementwise the selection mask."""
    return tape.elementwise_mul(soft, mask)


class AttentionThresholdGate:
    """Linear global attention over context features with learnable thresholds.

    Queries, keys, and values are per-expert projections of the context
    matrix. The quadratic attention product is never materialized: only
    K^T V (N x N) and K^T 1 (N x 1) are formed, keeping the cost linear in
    the node count. A learnable residual mixes in a direct projection of
    the context; both the residual weight and the thresholds live in
    sigmoid space.
    """

    def __init__(self, ctx_dim: int, n_experts: int, seed_seq: np.random.SeedSequence,
                 init: str = "zeros"):
        if init not in ("zeros", "randn"):
            raise ConfigError(f"gate_init must be 'zeros' or 'randn', got '{init}'")
        rng = np.random.default_rng(seed_seq)
        from .experts import glorot

        self.n_experts = n_experts
        self.params: dict[str, Tensor] = {
            "W_query": tape.parameter(glorot(rng, ctx_dim, n_experts), "W_query"),
            "W_key": tape.parameter(glorot(rng, ctx_dim, n_experts), "W_key"),
            "W_value": tape.parameter(glorot(rng, ctx_dim, n_experts), "W_value"),
            "W_residual": tape.parameter(glorot(rng, ctx_dim, n_experts), "W_residual"),
            "thresholds_raw": tape.parameter(
                rng.standard_normal((1, n_experts)) if init == "randn"
                else np.zeros((1, n_experts)), "thresholds_raw"),
            "beta_raw": tape.parameter(np.zeros((1, 1)), "beta_raw"),
        }

    def parameters(self) -> dict[str, Tensor]:
        return dict(self.params)

    def scores(self, ctx: Tensor, alive: np.ndarray) -> Tensor:
        """Attention scores Z over the alive expert columns, linear in n."""
        n_alive = int(alive.size)
        if n_alive < 1:
            raise ConfigError("gate needs at least one alive expert")
        q = ctx @ tape.gather_cols(self.params["W_query"], alive)
        k = ctx @ tape.gather_cols(self.params["W_key"], alive)
        v = ctx @ tape.gather_cols(self.params["W_value"], alive)
        resid = ctx @ tape.gather_cols(self.params["W_residual"], alive)

        q_norm = tape.div_by_scalar(q, tape.frobenius_norm(q), eps=FROBENIUS_EPS)
        k_norm = tape.div_by_scalar(k, tape.frobenius_norm(k), eps=FROBENIUS_EPS)

        k_colsum = tape.transpose(tape.sum_rows(k_norm))          # (N, 1)
        d_gate = tape.add_const(tape.scale(q_norm @ k_colsum, 1.0 / n_alive), 1.0)
        bad = np.nonzero(np.abs(d_gate.values) < DEGENERACY_TOL)[0]
        if bad.size:
            raise NumericalError(f"attention normalizer degenerate at node {int(bad[0])}")

        kv = tape.transpose(k_norm) @ v                           # (N, N)
        core = tape.add(v, tape.scale(q_norm @ kv, 1.0 / n_alive))
        attended = tape.div_col(core, d_gate)

        beta = tape.sigmoid(self.params["beta_raw"])
        one_minus_beta = tape.add_const(tape.scale(beta, -1.0), 1.0)
        return tape.add(tape.scale_by(attended, beta), tape.scale_by(resid, one_minus_beta))

    def forward(self, ctx: Tensor, alive: np.ndarray, mode: str = MASK_MODE_STE) -> GateOutput:
        z = self.scores(ctx, alive)
        soft = tape.sigmoid(z)
        thresholds = tape.sigmoid(tape.gather_cols(self.params["thresholds_raw"], alive))
        mask, counts = threshold_mask(soft, thresholds, mode=mode)
        return GateOutput(scores=z, soft=soft, mask=mask,
                          weights=gate_weights(soft, mask), counts=counts)


class NoisyTopKGate:
    """Linear logits with trained Gaussian noise; softmax over the top k."""

    def __init__(self, in_dim: int, n_experts: int, k: int,
                 seed_seq: np.random.SeedSequence):
        if not 1 <= k <= n_experts:
            raise ConfigError(f"topk_k={k} outside [1, {n_experts}]")
        rng = np.random.default_rng(seed_seq)
        from .experts import glorot

        self.k = k
        self.n_experts = n_experts
        self.params: dict[str, Tensor] = {
            "W_gate": tape.parameter(glorot(rng, in_dim, n_experts), "W_gate"),
            "W_noise": tape.parameter(glorot(rng, in_dim, n_experts), "W_noise"),
        }

    def parameters(self) -> dict[str, Tensor]:
        return dict(self.params)

    def forward(self, x: Tensor, alive: np.ndarray, training: bool = False,
                rng: np.random.Generator | None = None, **_) -> GateOutput:
        k = min(self.k, int(alive.size))
        logits = x @ tape.gather_cols(self.params["W_gate"], alive)
        if training and rng is not None:
            noise_scale = x @ tape.gather_cols(self.params["W_noise"], alive)
            softplus = tape.log(tape.add_const(tape.exp(noise_scale), 1.0))
            gauss = tape.constant(rng.standard_normal(logits.shape))
            logits = tape.add(logits, tape.elementwise_mul(gauss, softplus))
        order = np.argsort(-logits.values, axis=1, kind="stable")
        topk_mask = np.zeros(logits.shape, dtype=bool)
        np.put_along_axis(topk_mask, order[:, :k], True, axis=1)
        weights = tape.masked_row_softmax(logits, topk_mask)
        counts = np.full(x.shape[0], k, dtype=np.int64)
        return GateOutput(scores=logits, soft=weights,
                          mask=tape.constant(topk_mask.astype(np.float64)),
                          weights=weights, counts=counts)


class ThresholdGate:
    """Dynamic expert count from plain feature logits; no attention, no
    topology features. Shares the mask-and-fallback semantics of the
    attention gate."""

    def __init__(self, in_dim: int, n_experts: int, seed_seq: np.random.SeedSequence,
                 init: str = "zeros"):
        rng = np.random.default_rng(seed_seq)
        from .experts import glorot

        self.n_experts = n_experts
        self.params: dict[str, Tensor] = {
            "W_gate": tape.parameter(glorot(rng, in_dim, n_experts), "W_gate"),
            "thresholds_raw": tape.parameter(
                rng.standard_normal((1, n_experts)) if init == "randn"
                else np.zeros((1, n_experts)), "thresholds_raw"),
        }

    def parameters(self) -> dict[str, Tensor]:
        return dict(self.params)

    def forward(self, x: Tensor, alive: np.ndarray, mode: str = MASK_MODE_STE, **_) -> GateOutput:
        z = x @ tape.gather_cols(self.params["W_gate"], alive)
        soft = tape.sigmoid(z)
        thresholds = tape.sigmoid(tape.gather_cols(self.params["thresholds_raw"], alive))
        mask, counts = threshold_mask(soft, thresholds, mode=mode)
        return GateOutput(scores=z, soft=soft, mask=mask,
                          weights=gate_weights(soft, mask), counts=counts)
