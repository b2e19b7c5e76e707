"""Mixture runtime: output aggregation, balance losses, and expert pruning.

Gate columns always span the alive experts in pool order. Experts whose
gate column is entirely zero for a batch are never forward-evaluated, and
pruned experts leave the forward pass, the gate columns, and the optimizer
simultaneously. Importance is an exponential moving average of each
expert's gated contribution norm, normalized by the current maximum before
it is compared against the prune threshold.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tape
from .errors import CheckpointError, ConfigError
from .experts import ExpertPool
from .tape import Tensor

PRUNE_RAW_GATES = "raw_gates"
PRUNE_THRESHOLDED_GATES = "thresholded_gates"


@dataclass
class HeadParams:
    """Per-expert projections into the shared width plus the task head."""

    projections: list[dict[str, Tensor]]
    head: dict[str, Tensor]

    def parameters(self, alive: np.ndarray | None = None) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        live = set(range(len(self.projections))) if alive is None else set(int(i) for i in alive)
        for i, proj in enumerate(self.projections):
            if i in live:
                for name, p in proj.items():
                    out[f"proj{i}.{name}"] = p
        for name, p in self.head.items():
            out[f"head.{name}"] = p
        return out


def init_heads(n_experts: int, hidden: int, out_dim: int,
               seed_seq: np.random.SeedSequence) -> HeadParams:
    from .experts import glorot

    children = seed_seq.spawn(n_experts + 1)
    projections = []
    for child in children[:-1]:
        rng = np.random.default_rng(child)
        projections.append({
            "W": tape.parameter(glorot(rng, hidden, hidden), "W"),
            "b": tape.parameter(np.zeros((1, hidden)), "b"),
        })
    rng = np.random.default_rng(children[-1])
    head = {
        "W": tape.parameter(glorot(rng, hidden, out_dim), "W"),
        "b": tape.parameter(np.zeros((1, out_dim)), "b"),
    }
    return HeadParams(projections=projections, head=head)


def aggregate(expert_outputs: dict[int, Tensor], weights: Tensor,
              alive: np.ndarray, heads: HeadParams) -> Tensor:
    """Gate-weighted sum of projected expert outputs.

    ``expert_outputs`` holds tensors only for experts that were actually
    evaluated; experts with an all-zero gate column must be absent.
    """
    out: Tensor | None = None
    for pos, expert_id in enumerate(alive):
        expert_id = int(expert_id)
        column = weights.values[:, pos]
        if expert_id not in expert_outputs:
            if np.any(column != 0.0):
                raise ConfigError(f"expert {expert_id} selected but not evaluated")
            continue
        h = expert_outputs[expert_id]
        proj = heads.projections[expert_id]
        projected = tape.elu(tape.add_row(h @ proj["W"], proj["b"]))
        term = tape.mul_col(projected, tape.gather_cols(weights, [pos]))
        out = term if out is None else tape.add(out, term)
    if out is None:
        raise ConfigError("aggregate: no expert outputs supplied")
    return out


def apply_head(pooled: Tensor, heads: HeadParams) -> Tensor:
    return tape.add_row(pooled @ heads.head["W"], heads.head["b"])


def contribution_scores(weights_values: np.ndarray, expert_outputs: dict[int, Tensor],
                        alive: np.ndarray) -> np.ndarray:
    """Norm of each expert's gate-weighted output sum, per batch node.

    gamma_i = || sum_u G[u, i] * H_i[u, :] ||_2 / n_batch. The sum runs
    before the norm, so opposing rows can cancel. Experts that were not
    evaluated contribute zero.
    """
    n_batch = weights_values.shape[0]
    gamma = np.zeros(alive.size)
    for pos, expert_id in enumerate(alive):
        h = expert_outputs.get(int(expert_id))
        if h is None:
            continue
        weighted = weights_values[:, pos:pos + 1] * h.values
        gamma[pos] = np.linalg.norm(weighted.sum(axis=0)) / n_batch
    return gamma


def importance_loss(weights: Tensor) -> Tensor:
    """Squared coefficient of variation of the per-expert gate mass."""
    n, m = weights.shape
    if m == 1:
        return tape.constant(0.0)
    col_sums = tape.sum_rows(weights)
    mean = tape.scale(tape.sum_all(col_sums), 1.0 / m)
    mean_row = mean @ tape.constant(np.ones((1, m)))
    centered = tape.add(col_sums, tape.scale(mean_row, -1.0))
    var = tape.scale(tape.sum_all(tape.elementwise_mul(centered, centered)), 1.0 / m)
    mean_sq = tape.elementwise_mul(mean, mean)
    return tape.div_by_scalar(var, mean_sq, eps=1e-12)


def diversity_loss(weights: Tensor) -> Tensor:
    """Off-diagonal Frobenius norm of the column-cosine matrix.

    Columns are normalized to unit length, so the loss is zero exactly
    when activation patterns are orthogonal."""
    n, m = weights.shape
    if m == 1:
        return tape.constant(0.0)
    col_norms = tape.sqrt(tape.add_const(tape.sum_rows(tape.elementwise_mul(weights, weights)), 1e-24))
    unit = tape.div_row(weights, col_norms, eps=1e-12)
    cosines = tape.transpose(unit) @ unit
    off_diag = tape.elementwise_mul(cosines, tape.constant(1.0 - np.eye(m)))
    return tape.frobenius_norm(off_diag)


@dataclass
class PruneRecord:
    epoch: int
    expert_id: int
    kind: str
    importance: float
    action: str  # kept | pruned | restored


@dataclass
class ImportanceTracker:
    """EMA importance per expert plus prune bookkeeping and rollback state."""

    n_experts: int
    alpha: float = 0.9
    eta: float = 0.5
    prune_interval: int = 20
    prune_type: str = PRUNE_THRESHOLDED_GATES
    scores: np.ndarray = field(default_factory=lambda: np.zeros(0))
    history: list[PruneRecord] = field(default_factory=list)
    _snapshot: tuple[np.ndarray, float, float] | None = None

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.prune_type not in (PRUNE_RAW_GATES, PRUNE_THRESHOLDED_GATES):
            raise ConfigError(f"unknown prune_type '{self.prune_type}'")
        if self.scores.size == 0:
            self.scores = np.zeros(self.n_experts)

    def update(self, gamma: np.ndarray, alive: np.ndarray) -> None:
        """I <- (1 - alpha) I + alpha * gamma over the alive experts only."""
        if np.any(gamma < 0):
            raise ConfigError("contribution scores must be non-negative")
        self.scores[alive] = (1.0 - self.alpha) * self.scores[alive] + self.alpha * gamma

    def normalized(self, alive: np.ndarray) -> np.ndarray:
        vals = self.scores[alive]
        top = vals.max() if vals.size else 0.0
        if top <= 0.0:
            return np.ones_like(vals)  # nothing has contributed yet; keep all
        return vals / top

    def prune(self, pool: ExpertPool, epoch: int, val_metric: float) -> list[int]:
        """Drop alive experts whose normalized importance falls below eta.

        The best-scoring expert always survives. Returns pruned expert ids
        and stores a rollback snapshot of the alive flags."""
        alive = pool.alive_indices()
        normed = self.normalized(alive)
        keep = normed >= self.eta
        if not keep.any():
            keep[int(np.argmax(normed))] = True
        alive_flags = np.array([e.alive for e in pool.entries])
        self._snapshot = (alive_flags, self.eta, val_metric)
        pruned: list[int] = []
        for pos, expert_id in enumerate(alive):
            expert_id = int(expert_id)
            action = "kept" if keep[pos] else "pruned"
            if not keep[pos]:
                pool.entries[expert_id].alive = False
                pruned.append(expert_id)
            self.history.append(PruneRecord(epoch, expert_id,
                                            pool.entries[expert_id].spec.kind,
                                            float(normed[pos]), action))
        return pruned

    def maybe_rollback(self, pool: ExpertPool, epoch: int, val_metric: float,
                       delta_val: float) -> bool:
        """Restore the pre-prune alive set if validation regressed too far.

        Halves eta after a rollback so the next prune is less aggressive.
        """
        if self._snapshot is None:
            return False
        alive_flags, eta_before, metric_before = self._snapshot
        self._snapshot = None
        if val_metric >= metric_before - delta_val:
            return False
        for expert_id, was_alive in enumerate(alive_flags):
            if was_alive and not pool.entries[expert_id].alive:
                pool.entries[expert_id].alive = True
                self.history.append(PruneRecord(epoch, expert_id,
                                                pool.entries[expert_id].spec.kind,
                                                float(self.scores[expert_id]), "restored"))
        self.eta = eta_before * 0.5
        return True


def freeze_experts(pool: ExpertPool, checkpoints: dict[int, dict[str, np.ndarray]]) -> None:
    """Load per-expert parameters and mark them frozen (router-only training)."""
    for i, entry in enumerate(pool.entries):
        if entry.spec.kind == "noise":
            entry.frozen = True
            continue
        blob = checkpoints.get(i)
        if blob is None:
            raise CheckpointError(f"missing checkpoint for expert {i} ({entry.spec.kind})")
        for name, param in entry.params.items():
            if name not in blob:
                raise CheckpointError(
                    f"checkpoint for expert {i} ({entry.spec.kind}) lacks '{name}'")
            if blob[name].shape != param.values.shape:
                raise CheckpointError(
                    f"checkpoint shape mismatch for expert {i} parameter '{name}'")
            param.values[:] = blob[name]
        entry.frozen = True
