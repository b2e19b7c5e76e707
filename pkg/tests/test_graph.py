"""Graph construction, normalization, and positional-encoding tests."""

import numpy as np
import pytest

from graphmoe import graph as gr
from graphmoe.errors import DataError


def star(leaves: int) -> gr.Graph:
    return gr.build_graph([(0, i) for i in range(1, leaves + 1)], leaves + 1)


class TestBuildGraph:
    def test_two_node_path(self):
        g = gr.build_graph([(0, 1)], 2)
        np.testing.assert_array_equal(g.degrees, [1, 1])
        np.testing.assert_array_equal(g.neighbors(0), [1])
        np.testing.assert_array_equal(g.neighbors(1), [0])

    def test_symmetrization_is_idempotent(self):
        g = gr.build_graph([(0, 1), (1, 0), (0, 1)], 2)
        assert g.num_edges == 2
        np.testing.assert_array_equal(g.degrees, [1, 1])

    def test_out_of_range_rejected(self):
        with pytest.raises(DataError):
            gr.build_graph([(0, 5)], 3)
        with pytest.raises(DataError):
            gr.build_graph([(0, 1)], 0)

    def test_self_loop_kept_once(self):
        g = gr.build_graph([(0, 0), (0, 1)], 2)
        np.testing.assert_array_equal(g.degrees, [2, 1])
        np.testing.assert_array_equal(g.neighbors(0), [0, 1])

    def test_csr_invariants_on_random_graph(self):
        rng = np.random.default_rng(0)
        n = 30
        edges = rng.integers(0, n, size=(120, 2))
        g = gr.build_graph(edges, n)
        a = g.adjacency().toarray()
        np.testing.assert_array_equal(a, a.T)
        for u in range(n):
            nbrs = g.neighbors(u)
            assert np.all(np.diff(nbrs) > 0)  # sorted, no duplicates
            assert g.degrees[u] == nbrs.size


class TestRowNormalized:
    def test_k2(self):
        p = gr.row_normalized_adjacency(gr.build_graph([(0, 1)], 2)).toarray()
        np.testing.assert_allclose(p, [[0, 1], [1, 0]])

    def test_star_center_row(self):
        p = gr.row_normalized_adjacency(star(3)).toarray()
        np.testing.assert_allclose(p[0], [0, 1 / 3, 1 / 3, 1 / 3])
        for leaf in (1, 2, 3):
            np.testing.assert_allclose(p[leaf, 0], 1.0)
            assert p[leaf].sum() == pytest.approx(1.0)

    def test_isolated_node_row_is_zero(self):
        g = gr.build_graph([(0, 1)], 3)
        p = gr.row_normalized_adjacency(g).toarray()
        np.testing.assert_allclose(p[2], 0.0)

    def test_row_stochastic_property(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            n = int(rng.integers(3, 40))
            edges = rng.integers(0, n, size=(3 * n, 2))
            g = gr.build_graph(edges, n)
            sums = np.asarray(gr.row_normalized_adjacency(g).sum(axis=1)).ravel()
            expect = (g.degrees > 0).astype(float)
            np.testing.assert_allclose(sums, expect, atol=1e-12)


class TestMultihop:
    def test_k2_swap(self):
        g = gr.build_graph([(0, 1)], 2)
        x1, x2 = gr.multihop_features(g, np.array([[1.0], [3.0]]))
        np.testing.assert_allclose(x1, [[3.0], [1.0]])
        np.testing.assert_allclose(x2, [[1.0], [3.0]])

    def test_all_ones_fixed_point_on_connected_graph(self):
        rng = np.random.default_rng(2)
        g = gr.build_graph([(i, (i + 1) % 12) for i in range(12)]
                           + [tuple(rng.integers(0, 12, 2)) for _ in range(8)], 12)
        ones = np.ones((12, 2))
        x1, x2 = gr.multihop_features(g, ones)
        np.testing.assert_allclose(x1, ones, atol=1e-12)
        np.testing.assert_allclose(x2, ones, atol=1e-12)

    def test_star_single_hot_center(self):
        x1, _ = gr.multihop_features(star(3), np.array([[1.0], [0.0], [0.0], [0.0]]))
        np.testing.assert_allclose(x1, [[0.0], [1.0], [1.0], [1.0]])

    def test_row_count_mismatch(self):
        with pytest.raises(DataError):
            gr.multihop_features(star(3), np.ones((2, 1)))


class TestLaplacian:
    def test_k2(self):
        lap = gr.sym_norm_laplacian(gr.build_graph([(0, 1)], 2))
        np.testing.assert_allclose(lap, [[1, -1], [-1, 1]], atol=1e-12)

    def test_triangle(self):
        g = gr.build_graph([(0, 1), (1, 2), (0, 2)], 3)
        lap = gr.sym_norm_laplacian(g)
        np.testing.assert_allclose(np.diag(lap), 1.0)
        off = lap[~np.eye(3, dtype=bool)]
        np.testing.assert_allclose(off, -0.5)

    def test_isolated_node_convention(self):
        g = gr.build_graph([(0, 1)], 3)
        lap = gr.sym_norm_laplacian(g)
        assert lap[2, 2] == pytest.approx(1.0)  # I minus an all-zero row

    def test_spectrum_containment(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            n = int(rng.integers(2, 50))
            edges = rng.integers(0, n, size=(3 * n, 2))
            lap = gr.sym_norm_laplacian(gr.build_graph(edges, n))
            vals = np.linalg.eigvalsh(lap)
            assert vals.min() >= -1e-8
            assert vals.max() <= 2 + 1e-8


class TestLaplacianPE:
    def test_k2_constant_eigenvector(self):
        pe = gr.laplacian_pe(gr.build_graph([(0, 1)], 2), 1)
        np.testing.assert_allclose(pe, np.full((2, 1), 1 / np.sqrt(2)), atol=1e-10)

    def test_p_bounds(self):
        g = gr.build_graph([(0, 1)], 2)
        with pytest.raises(DataError):
            gr.laplacian_pe(g, 2)
        with pytest.raises(DataError):
            gr.laplacian_pe(g, 0)

    def test_connected_graph_kernel_vector(self):
        # eigenvalue-0 vector of L is proportional to sqrt(degrees)
        rng = np.random.default_rng(4)
        edges = [(i, (i + 1) % 9) for i in range(9)]
        edges += [tuple(rng.integers(0, 9, 2)) for _ in range(6)]
        g = gr.build_graph(edges, 9)
        lap = gr.sym_norm_laplacian(g)
        v = np.sqrt(g.degrees.astype(float))
        np.testing.assert_allclose(lap @ v, 0.0, atol=1e-10)
        pe = gr.laplacian_pe(g, 1)[:, 0]
        v_unit = v / np.linalg.norm(v)
        assert min(np.linalg.norm(pe - v_unit), np.linalg.norm(pe + v_unit)) < 1e-8

    def test_orthonormality(self):
        rng = np.random.default_rng(5)
        for _ in range(5):
            n = int(rng.integers(8, 40))
            edges = rng.integers(0, n, size=(4 * n, 2))
            g = gr.build_graph(edges, n)
            pe = gr.laplacian_pe(g, 5)
            np.testing.assert_allclose(pe.T @ pe, np.eye(5), atol=1e-8)

    def test_sign_and_order_deterministic(self):
        g = star(4)  # leaf eigenvectors are degenerate
        a = gr.laplacian_pe(g, 3)
        b = gr.laplacian_pe(g, 3)
        assert np.array_equal(a, b)
        first_nonzero = [col[np.abs(col) > 1e-10][0] for col in a.T]
        assert all(v > 0 for v in first_nonzero)


class TestContextFeatures:
    def test_k2_combined(self):
        g = gr.build_graph([(0, 1)], 2)
        ctx = gr.context_features(g, np.array([[1.0], [3.0]]), 1)
        assert ctx.values.shape == (2, 2)
        np.testing.assert_allclose(ctx.values[:, 0], [5 / 3, 7 / 3])
        np.testing.assert_allclose(ctx.values[:, 1], 1 / np.sqrt(2), atol=1e-10)

    def test_zero_features_keep_pe(self):
        g = star(3)
        ctx = gr.context_features(g, np.zeros((4, 2)), 2)
        np.testing.assert_allclose(ctx.values[:, :2], 0.0)
        assert np.abs(ctx.values[:, 2:]).max() > 0.1


class TestInducedSubgraph:
    def test_star_center_plus_leaf(self):
        sub, idx = gr.induced_subgraph(star(3), [0, 1])
        np.testing.assert_array_equal(idx, [0, 1])
        np.testing.assert_array_equal(sub.degrees, [1, 1])

    def test_two_leaves_disconnect(self):
        sub, _ = gr.induced_subgraph(star(3), [1, 2])
        np.testing.assert_array_equal(sub.degrees, [0, 0])

    def test_full_node_set_identity(self):
        rng = np.random.default_rng(6)
        edges = rng.integers(0, 15, size=(40, 2))
        g = gr.build_graph(edges, 15)
        sub, idx = gr.induced_subgraph(g, np.arange(15))
        np.testing.assert_array_equal(idx, np.arange(15))
        np.testing.assert_array_equal(sub.indptr, g.indptr)
        np.testing.assert_array_equal(sub.indices, g.indices)

    def test_duplicate_node_rejected(self):
        with pytest.raises(DataError):
            gr.induced_subgraph(star(3), [1, 1])


class TestDisjointUnion:
    def test_membership_and_edges(self):
        g1 = gr.build_graph([(0, 1)], 2)
        g2 = gr.build_graph([(0, 1), (1, 2)], 3)
        merged, member = gr.disjoint_union([g1, g2])
        assert merged.n == 5
        np.testing.assert_array_equal(member, [0, 0, 1, 1, 1])
        np.testing.assert_array_equal(merged.neighbors(2), [3])
