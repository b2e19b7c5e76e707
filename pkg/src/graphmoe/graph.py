"""Sparse undirected graphs, normalizations, and spectral positional features.

Conventions, fixed here once for the whole package:

* isolated nodes get all-zero rows in D^-1 A and zero entries in D^-1/2,
  so every operator stays finite;
* self-loops present in the input are kept and counted once by degrees;
* eigenvector signs are made deterministic by forcing the first component
  with magnitude > 1e-10 positive, and near-equal eigenvalues are ordered
  by eigenvalue then lexicographically by the sign-fixed vectors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .errors import DataError, ShapeError

DENSE_NODE_LIMIT = 20_000


@dataclass(frozen=True)
class Graph:
    """Immutable CSR adjacency of an undirected graph.

    Both edge directions are stored; column indices are sorted and
    deduplicated within each row, and ``degrees[u]`` equals the row length.
    """

    n: int
    indptr: np.ndarray
    indices: np.ndarray
    degrees: np.ndarray

    @property
    def num_edges(self) -> int:
        """Directed entry count (an undirected edge contributes two)."""
        return int(self.indices.size)

    def neighbors(self, u: int) -> np.ndarray:
        return self.indices[self.indptr[u]:self.indptr[u + 1]]

    def adjacency(self) -> sp.csr_matrix:
        data = np.ones(self.indices.size, dtype=np.float64)
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(self.n, self.n))

    def edge_array(self) -> np.ndarray:
        """Unique undirected edges as (m, 2) with u <= v."""
        rows = np.repeat(np.arange(self.n), np.diff(self.indptr))
        cols = self.indices
        keep = rows <= cols
        return np.stack([rows[keep], cols[keep]], axis=1)


@dataclass(frozen=True)
class ContextFeatures:
    """Node features enriched with multihop smoothing and spectral coordinates.

    The first d columns average the raw, 1-hop, and 2-hop features; the
    last p columns are orthonormal eigenvectors of the normalized Laplacian.
    """

    values: np.ndarray
    p: int


def build_graph(edge_list, n: int) -> Graph:
    """Build a symmetrized, deduplicated CSR graph from (u, v) pairs."""
    if n <= 0:
        raise DataError(f"node count must be positive, got {n}")
    pairs = np.asarray(list(edge_list), dtype=np.int64).reshape(-1, 2)
    if pairs.size and (pairs.min() < 0 or pairs.max() >= n):
        bad = pairs[(pairs < 0).any(axis=1) | (pairs >= n).any(axis=1)][0]
        raise DataError(f"edge ({bad[0]}, {bad[1]}) out of range for n={n}")
    if pairs.size:
        both = np.concatenate([pairs, pairs[:, ::-1]], axis=0)
        both = np.unique(both, axis=0)
        rows, cols = both[:, 0], both[:, 1]
    else:
        rows = cols = np.empty(0, dtype=np.int64)
    counts = np.bincount(rows, minlength=n)
    indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    order = np.lexsort((cols, rows))
    indices = cols[order]
    return Graph(n=n, indptr=indptr, indices=indices, degrees=counts.astype(np.int64))


def from_adjacency(adj: sp.spmatrix) -> Graph:
    """Wrap an existing symmetric 0/1 adjacency matrix."""
    a = sp.csr_matrix(adj)
    a.sum_duplicates()
    a.sort_indices()
    coo = a.tocoo()
    return build_graph(np.stack([coo.row, coo.col], axis=1), a.shape[0])


def row_normalized_adjacency(g: Graph) -> sp.csr_matrix:
    """D^-1 A; rows of isolated nodes are all-zero."""
    inv_deg = np.zeros(g.n)
    nz = g.degrees > 0
    inv_deg[nz] = 1.0 / g.degrees[nz]
    data = np.repeat(inv_deg, np.diff(g.indptr))
    return sp.csr_matrix((data, g.indices, g.indptr), shape=(g.n, g.n))


def sym_normalized_adjacency(g: Graph, add_self_loops: bool = False) -> sp.csr_matrix:
    """D^-1/2 A D^-1/2, optionally on A + I with degrees counted accordingly."""
    a = g.adjacency()
    if add_self_loops:
        a = (a + sp.eye(g.n, format="csr")).tocsr()
        # a self-loop already present in g would now count twice; clip back
        a.data = np.minimum(a.data, 1.0)
    deg = np.asarray(a.sum(axis=1)).ravel()
    inv_sqrt = np.zeros(g.n)
    nz = deg > 0
    inv_sqrt[nz] = 1.0 / np.sqrt(deg[nz])
    d = sp.diags(inv_sqrt)
    return (d @ a @ d).tocsr()


def sym_norm_laplacian(g: Graph) -> np.ndarray:
    """Dense L = I - D^-1/2 A D^-1/2 (no self-loops added)."""
    if g.n > DENSE_NODE_LIMIT:
        raise DataError(f"dense Laplacian limited to {DENSE_NODE_LIMIT} nodes, got {g.n}")
    lap = sp.eye(g.n) - sym_normalized_adjacency(g)
    dense = np.asarray(lap.todense(), dtype=np.float64)
    return (dense + dense.T) / 2.0


def multihop_features(g: Graph, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """1-hop and 2-hop row-normalized aggregates of ``x``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != g.n:
        raise DataError(f"feature matrix has {x.shape[0] if x.ndim == 2 else '?'} rows, graph has {g.n}")
    p = row_normalized_adjacency(g)
    x1 = p @ x
    x2 = p @ x1
    return x1, x2


def laplacian_pe(g: Graph, p: int) -> np.ndarray:
    """Eigenvectors of the p smallest Laplacian eigenvalues, sign-fixed."""
    if not 1 <= p < g.n:
        raise DataError(f"positional dimension must satisfy 1 <= p < n, got p={p}, n={g.n}")
    lap = sym_norm_laplacian(g)
    vals, vecs = scipy.linalg.eigh(lap, subset_by_index=(0, p - 1))
    vecs = _fix_signs(vecs)
    order = _tie_break_order(vals, vecs)
    return vecs[:, order]


def _fix_signs(vecs: np.ndarray) -> np.ndarray:
    out = vecs.copy()
    for j in range(out.shape[1]):
        col = out[:, j]
        nz = np.nonzero(np.abs(col) > 1e-10)[0]
        if nz.size and col[nz[0]] < 0:
            out[:, j] = -col
    return out


def _tie_break_order(vals: np.ndarray, vecs: np.ndarray) -> np.ndarray:
    """Ascending eigenvalue; lexicographic columns within near-equal groups."""
    order = np.argsort(vals, kind="stable")
    result: list[int] = []
    i = 0
    while i < order.size:
        j = i
        while j + 1 < order.size and vals[order[j + 1]] - vals[order[i]] <= 1e-9:
            j += 1
        group = sorted(order[i:j + 1], key=lambda k: tuple(vecs[:, k]))
        result.extend(group)
        i = j + 1
    return np.asarray(result)


def local_context_term(g: Graph, x: np.ndarray) -> np.ndarray:
    """Arithmetic mean of raw, 1-hop, and 2-hop features."""
    x = np.asarray(x, dtype=np.float64)
    x1, x2 = multihop_features(g, x)
    return (x + x1 + x2) / 3.0


def context_features(g: Graph, x: np.ndarray, p: int) -> ContextFeatures:
    """Local multihop term concatenated with Laplacian positional columns."""
    local = local_context_term(g, x)
    pe = laplacian_pe(g, p)
    return ContextFeatures(values=np.concatenate([local, pe], axis=1), p=p)


def induced_subgraph(g: Graph, nodes) -> tuple[Graph, np.ndarray]:
    """Subgraph on ``nodes`` plus the old-index array (new -> old)."""
    nodes = np.asarray(nodes, dtype=np.int64)
    if np.unique(nodes).size != nodes.size:
        raise DataError("duplicate node in subgraph node list")
    if nodes.size and (nodes.min() < 0 or nodes.max() >= g.n):
        raise DataError("subgraph node index out of range")
    relabel = -np.ones(g.n, dtype=np.int64)
    relabel[nodes] = np.arange(nodes.size)
    edges = []
    for new_u, old_u in enumerate(nodes):
        for old_v in g.neighbors(old_u):
            new_v = relabel[old_v]
            if new_v >= 0 and new_u <= new_v:
                edges.append((new_u, int(new_v)))
    sub = build_graph(edges, int(nodes.size)) if nodes.size else build_graph([], 1)
    if nodes.size == 0:
        raise DataError("subgraph node list is empty")
    return sub, nodes


def disjoint_union(graphs: list[Graph]) -> tuple[Graph, np.ndarray]:
    """Merge graphs into one block-diagonal graph; returns membership ids."""
    if not graphs:
        raise DataError("disjoint_union: no graphs")
    total = sum(gr.n for gr in graphs)
    edges = []
    membership = np.empty(total, dtype=np.int64)
    offset = 0
    for gid, gr in enumerate(graphs):
        membership[offset:offset + gr.n] = gid
        arr = gr.edge_array()
        if arr.size:
            edges.append(arr + offset)
        offset += gr.n
    all_edges = np.concatenate(edges, axis=0) if edges else np.empty((0, 2), dtype=np.int64)
    return build_graph(all_edges, total), membership
