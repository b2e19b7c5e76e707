"""Validation lab for the loss concentration bound and its ingredients.

For k experts activated per node, a stability constant eps0, and a loss
level a, the probability that the stabilized binary cross-entropy of the
averaged posterior falls at or below a is bounded by

    (U - f(k, eps0)) / (U - a),

with U = -log(eps0) and f(k, eps0) = log(2 k^2) - log(2 k (1 + eps0) - 1).
All logarithms here are natural. The Monte Carlo check rebuilds the
first-order expert outputs through an order-1 count sketch of the
convolution row, exactly the construction that yields the bound, and
verifies the empirical probability never exceeds the closed form beyond
the confidence interval.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, NumericalError
from .graph import Graph, build_graph, row_normalized_adjacency, sym_normalized_adjacency


# ---------------------------------------------------------------------------
# closed-form bound quantities
# ---------------------------------------------------------------------------

def posterior_eta(x) -> float:
    """Logistic of the coordinate sum, stable for large |sum|."""
    s = float(np.sum(x))
    if s >= 0:
        return 1.0 / (1.0 + np.exp(-s))
    e = np.exp(s)
    return e / (1.0 + e)


def stable_bce(x: float, y: int, eps0: float) -> float:
    """-y log(x + eps0) - (1 - y) log(1 - x + eps0); bounded by eps0 > 0."""
    if eps0 <= 0:
        raise ConfigError(f"eps0 must be positive, got {eps0}")
    return -y * np.log(x + eps0) - (1 - y) * np.log(1.0 - x + eps0)


def loss_upper(eps0: float) -> float:
    """U = -log(eps0), the ceiling of the stabilized loss."""
    if eps0 <= 0:
        raise ConfigError(f"eps0 must be positive, got {eps0}")
    return -np.log(eps0)


def bound_f(k: int, eps0: float) -> float:
    """log(2 k^2) - log(2 k (1 + eps0) - 1); requires k >= 2 (k = 2 is the
    boundary of the assumptions and is accepted)."""
    if k < 2:
        raise ConfigError(f"activated expert count must be >= 2, got {k}")
    if eps0 <= 0:
        raise ConfigError(f"eps0 must be positive, got {eps0}")
    return np.log(2.0 * k * k) - np.log(2.0 * k * (1.0 + eps0) - 1.0)


def theorem_bound(k: int, eps0: float, a: float, clamp: bool = True) -> float:
    """(U - f(k, eps0)) / (U - a); values above 1 are vacuous and clamped."""
    u = loss_upper(eps0)
    if a >= u:
        raise ConfigError(f"loss level a={a} must be below U={u:.4f}")
    raw = (u - bound_f(k, eps0)) / (u - a)
    if raw > 1.0:
        if clamp:
            warnings.warn(f"bound is vacuous (raw value {raw:.4f} > 1); clamped to 1",
                          stacklevel=2)
            return 1.0
        return raw
    return raw


def wilson_interval(successes: int, trials: int, z: float = 2.5758293035489004
                    ) -> tuple[float, float]:
    """Wilson score interval; default z is the two-sided 99% quantile."""
    if trials <= 0:
        raise ConfigError("wilson_interval needs at least one trial")
    phat = successes / trials
    denom = 1.0 + z * z / trials
    center = (phat + z * z / (2 * trials)) / denom
    half = (z / denom) * np.sqrt(phat * (1 - phat) / trials + z * z / (4 * trials * trials))
    return max(0.0, center - half), min(1.0, center + half)


# ---------------------------------------------------------------------------
# count sketch
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SketchSpec:
    """Hash and sign maps for a width-c count sketch of length-n vectors."""

    n: int
    c: int
    seed: int

    def maps(self) -> tuple[np.ndarray, np.ndarray]:
        rng = np.random.default_rng(self.seed)
        h = rng.integers(0, self.c, size=self.n)
        s = rng.integers(0, 2, size=self.n) * 2 - 1
        return h, s.astype(np.float64)


def count_sketch(u: np.ndarray, spec: SketchSpec) -> np.ndarray:
    """CS(u)_i = sum over j with h(j) = i of s(j) u_j."""
    u = np.asarray(u, dtype=np.float64).ravel()
    if u.size != spec.n:
        raise DataError(f"vector length {u.size} does not match sketch n={spec.n}")
    h, s = spec.maps()
    out = np.zeros(spec.c)
    np.add.at(out, h, s * u)
    return out


def sketch_matrix(spec: SketchSpec) -> np.ndarray:
    """The c x n matrix R with CS(u) = R u (dense; for small n only)."""
    h, s = spec.maps()
    r = np.zeros((spec.c, spec.n))
    r[h, np.arange(spec.n)] = s
    return r


def cs_inner_check(dim: int, widths: list[int], trials: int, seed: int = 0) -> list[dict]:
    """Inner-product estimation error of <CS(u), CS(v)> per sketch width.

    Returns one row per width with the mean estimate, the true inner
    product, the RMS error, and the standard error of the mean.
    """
    rng = np.random.default_rng(seed)
    u = rng.normal(size=dim)
    v = rng.normal(size=dim)
    truth = float(u @ v)
    rows = []
    for c in widths:
        estimates = np.empty(trials)
        for t in range(trials):
            spec = SketchSpec(n=dim, c=c, seed=seed * 1_000_003 + c * 7919 + t)
            estimates[t] = count_sketch(u, spec) @ count_sketch(v, spec)
        rows.append({
            "width": c,
            "true_inner": truth,
            "mean_estimate": float(estimates.mean()),
            "rms_error": float(np.sqrt(np.mean((estimates - truth) ** 2))),
            "sem": float(estimates.std(ddof=1) / np.sqrt(trials)),
        })
    return rows


# ---------------------------------------------------------------------------
# Monte Carlo validation of the bound
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MonteCarloResult:
    k: int
    eps0: float
    a: float
    samples: int
    probability: float
    ci_low: float
    ci_high: float
    bound: float

    @property
    def valid(self) -> bool:
        half = (self.ci_high - self.ci_low) / 2.0
        return self.probability <= self.bound + half


def _first_order_rows(k: int, n: int, seed: int) -> np.ndarray:
    """Per-expert rows A_1 = conv_row @ R^T R from order-1 sketches.

    Each expert gets an independent sketch of the same convolution row,
    taken from the normalized adjacency of one seeded random graph.
    """
    rng = np.random.default_rng(seed)
    edges = rng.integers(0, n, size=(3 * n, 2))
    g = build_graph(edges, n)
    conv = sym_normalized_adjacency(g, add_self_loops=True)
    row = np.asarray(conv[0].todense()).ravel()
    rows = np.empty((k, n))
    width = max(2, n // 2)
    for i in range(k):
        r = sketch_matrix(SketchSpec(n=n, c=width, seed=seed + 104729 * (i + 1)))
        rows[i] = (r @ row) @ r          # sketch, then map back through R
    return rows


def monte_carlo_loss_prob(k: int, eps0: float, a: float, samples: int,
                          d: int = 8, n: int = 16, seed: int = 0) -> MonteCarloResult:
    """Empirical Pr{loss <= a} for the sketched first-order expert mixture.

    Per sample: Gaussian features H, per-expert Gaussian weight vectors,
    expert outputs A_1 H w, posterior of the summed outputs divided by k,
    and a symmetric Bernoulli label. Returns the success fraction with a
    Wilson 99% interval and the closed-form bound for the same (k, eps0, a).
    """
    if k < 2:
        raise ConfigError(f"activated expert count must be >= 2, got {k}")
    if samples < 1:
        raise ConfigError("samples must be positive")
    bound = theorem_bound(k, eps0, a, clamp=True)
    a1 = _first_order_rows(k, n, seed)
    rng = np.random.default_rng(seed + 1)
    batch = 4096
    hits = 0
    done = 0
    while done < samples:
        b = min(batch, samples - done)
        feats = rng.normal(size=(b, n, d))
        w = rng.normal(size=(b, k, d))
        # expert output per sample: (a1[i] @ H) . w[i]
        projected = np.einsum("kn,bnd->bkd", a1, feats)
        outputs = np.einsum("bkd,bkd->bk", projected, w)
        y_sum = outputs.sum(axis=1)
        eta = np.where(y_sum >= 0, 1.0 / (1.0 + np.exp(-np.abs(y_sum))),
                       np.exp(-np.abs(y_sum)) / (1.0 + np.exp(-np.abs(y_sum))))
        x = eta / k
        labels = rng.integers(0, 2, size=b)
        losses = np.where(labels == 1, -np.log(x + eps0), -np.log(1.0 - x + eps0))
        hits += int(np.count_nonzero(losses <= a))
        done += b
    prob = hits / samples
    lo, hi = wilson_interval(hits, samples)
    return MonteCarloResult(k=k, eps0=eps0, a=a, samples=samples,
                            probability=prob, ci_low=lo, ci_high=hi, bound=bound)


def bound_sweep(k_values, eps0: float, a: float, samples: int, seed: int = 0
                ) -> list[MonteCarloResult]:
    return [monte_carlo_loss_prob(k, eps0, a, samples, seed=seed + k) for k in k_values]


# ---------------------------------------------------------------------------
# variance-gate case study
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VarianceScore:
    score: float
    skipped_rows: int


def variance_gate(h: np.ndarray, row_sum_tol: float = 1e-12) -> VarianceScore:
    """Sum of per-column variances after normalizing each row to sum 1.

    Rows whose sum is within ``row_sum_tol`` of zero are skipped and
    counted; if every row is degenerate the score is undefined.
    """
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 2 or h.size == 0:
        raise DataError("variance_gate expects a non-empty 2-D matrix")
    sums = h.sum(axis=1)
    good = np.abs(sums) >= row_sum_tol
    skipped = int(np.count_nonzero(~good))
    if not good.any():
        raise NumericalError("variance_gate: every row sum is degenerate")
    normalized = h[good] / sums[good, None]
    return VarianceScore(score=float(normalized.var(axis=0).sum()), skipped_rows=skipped)


def case_study_outputs(g: Graph, d: int = 8, hidden: int = 8, seed: int = 0,
                       gin_eps: float = 0.0) -> dict[str, np.ndarray]:
    """First-layer expert outputs on the all-ones input.

    Uses the row-normalized spectral operator for GCN (so its rows are
    exactly row-stochastic), identity-plus-mean for the mean aggregator,
    and sum aggregation followed by a random two-layer perceptron with
    nonzero biases for the injective expert. With these operators the
    first two produce rows that are identical after normalization while
    the third separates nodes by degree.
    """
    rng = np.random.default_rng(seed)
    ones = np.ones((g.n, d))

    def relu(x):
        return np.maximum(x, 0.0)

    theta_gcn = rng.normal(size=(d, hidden))
    c_gcn = sym_normalized_adjacency(g, add_self_loops=True)
    row_sums = np.asarray(c_gcn.sum(axis=1)).ravel()
    scale = np.divide(1.0, row_sums, out=np.zeros_like(row_sums), where=row_sums != 0)
    h_gcn = relu((scale[:, None] * (c_gcn @ ones)) @ theta_gcn)

    theta_sage = rng.normal(size=(d, hidden))
    c_sage = ones + row_normalized_adjacency(g) @ ones
    h_sage = relu(c_sage @ theta_sage)

    w1 = rng.normal(size=(d, hidden))
    b1 = rng.normal(size=hidden)
    w2 = rng.normal(size=(hidden, hidden))
    b2 = rng.normal(size=hidden)
    agg = g.adjacency() @ ones + (1.0 + gin_eps) * ones
    h_gin = relu(agg @ w1 + b1) @ w2 + b2

    return {"GCN": h_gcn, "GraphSAGE": h_sage, "GIN": h_gin}


def case_study_scores(g: Graph, d: int = 8, hidden: int = 8, seed: int = 0
                      ) -> dict[str, VarianceScore]:
    return {kind: variance_gate(h) for kind, h in case_study_outputs(g, d, hidden, seed).items()}
