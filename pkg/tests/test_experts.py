"""Expert pool construction and per-kind forward behavior."""

import numpy as np
import pytest

from graphmoe import tape
from graphmoe.errors import ConfigError
from graphmoe.experts import (
    EXPERT_KINDS,
    ConvCache,
    ExpertSpec,
    build_expert_pool,
    default_pool_kinds,
    expert_equivariance_check,
    expert_forward,
    init_expert_params,
)
from graphmoe.graph import build_graph


def star3():
    return build_graph([(0, 1), (0, 2), (0, 3)], 4)


def run(spec, g, x, seed=0):
    params = init_expert_params(spec, x.shape[1], np.random.default_rng(seed))
    return expert_forward(spec, params, tape.constant(x), ConvCache(g))


class TestPoolConstruction:
    def test_node_default_is_eight_experts_in_fixed_order(self):
        kinds = default_pool_kinds("node_cls")
        assert len(kinds) == 8
        assert set(kinds) == set(EXPERT_KINDS)
        pool = build_expert_pool(kinds, 4, 8, 2, np.random.SeedSequence(0))
        assert pool.kinds() == list(kinds)
        assert pool.alive_count == pool.initial_count == 8

    def test_link_default_pool(self):
        assert default_pool_kinds("link_pred") == ("GCN", "GraphSAGE", "JKNet", "SGC")

    def test_graph_default_pool(self):
        assert default_pool_kinds("graph_cls") == ("GCN", "GIN", "GraphSAGE", "GAT")

    def test_duplicates_need_flag(self):
        with pytest.raises(ConfigError):
            build_expert_pool(["GCN"] * 4, 4, 8, 2, np.random.SeedSequence(0))
        pool = build_expert_pool(["GCN"] * 8, 4, 8, 2, np.random.SeedSequence(0),
                                 allow_duplicates=True)
        assert pool.kinds() == ["GCN"] * 8

    def test_empty_pool_rejected(self):
        with pytest.raises(ConfigError):
            build_expert_pool([], 4, 8, 2, np.random.SeedSequence(0))

    def test_unknown_kind_rejected(self):
        with pytest.raises(ConfigError):
            ExpertSpec(kind="Transformer")

    def test_independent_init_streams(self):
        pool = build_expert_pool(["GCN", "GCN"], 4, 8, 2, np.random.SeedSequence(1),
                                 allow_duplicates=True)
        w0 = pool.entries[0].params["layer0.W"].values
        w1 = pool.entries[1].params["layer0.W"].values
        assert not np.allclose(w0, w1)


class TestForwardShapes:
    @pytest.mark.parametrize("kind", EXPERT_KINDS)
    def test_output_width_is_hidden(self, kind):
        rng = np.random.default_rng(3)
        g = build_graph(rng.integers(0, 7, size=(14, 2)), 7)
        spec = ExpertSpec(kind=kind, layers=2, hidden=6)
        out = run(spec, g, rng.normal(size=(7, 4)))
        assert out.shape == (7, 6)


class TestKindSemantics:
    def test_gcn_symmetry_on_k2(self):
        g = build_graph([(0, 1)], 2)
        spec = ExpertSpec(kind="GCN", layers=1, hidden=3)
        out = run(spec, g, np.ones((2, 3)))
        np.testing.assert_allclose(out.values[0], out.values[1], atol=1e-12)

    def test_gin_aggregation_on_star(self):
        # (A + (1+eps)I) 1 with eps=0 gives degree+1 per node: [4, 2, 2, 2]
        g = star3()
        spec = ExpertSpec(kind="GIN", layers=1, hidden=3, gin_eps_learnable=True)
        x = np.ones((4, 1))
        params = init_expert_params(spec, 1, np.random.default_rng(0))
        adj = ConvCache(g).get("adj")
        agg = adj @ x + (1.0 + params["layer0.eps"].item()) * x
        np.testing.assert_allclose(agg.ravel(), [4, 2, 2, 2])

    def test_sgc_two_steps_equal_dense_square(self):
        rng = np.random.default_rng(4)
        g = build_graph(rng.integers(0, 8, size=(20, 2)), 8)
        x = rng.normal(size=(8, 3))
        spec = ExpertSpec(kind="SGC", layers=1, hidden=5, sgc_steps=2)
        params = init_expert_params(spec, 3, np.random.default_rng(1))
        out = expert_forward(spec, params, tape.constant(x), ConvCache(g))
        a_hat = ConvCache(g).get("sym_selfloop").toarray()
        expected = (a_hat @ a_hat @ x) @ params["layer0.W"].values + params["layer0.b"].values
        np.testing.assert_allclose(out.values, expected, atol=1e-10)

    def test_gat_attention_rows_sum_to_one(self):
        rng = np.random.default_rng(5)
        g = build_graph(rng.integers(0, 6, size=(12, 2)), 6)
        spec = ExpertSpec(kind="GAT", layers=1, hidden=4)
        params = init_expert_params(spec, 3, np.random.default_rng(2))
        x = tape.constant(rng.normal(size=(6, 3)))
        conv = ConvCache(g)
        hw = tape.add_row(x @ params["layer0.W"], params["layer0.b"])
        s_src = hw @ params["layer0.att_src"]
        s_dst = hw @ params["layer0.att_dst"]
        scores = tape.add(s_src @ tape.constant(np.ones((1, 6))),
                          tape.constant(np.ones((6, 1))) @ tape.transpose(s_dst))
        attn = tape.masked_row_softmax(tape.leaky_relu(scores, 0.2), conv.attention_mask())
        np.testing.assert_allclose(attn.values.sum(axis=1), 1.0, atol=1e-12)

    def test_regular_graph_constant_output(self):
        # cycle graph is 2-regular: spectral kinds keep constant inputs constant
        g = build_graph([(i, (i + 1) % 6) for i in range(6)], 6)
        x = np.ones((6, 3))
        for kind in ("GCN", "SGC", "ChebCNN"):
            out = run(ExpertSpec(kind=kind, layers=2, hidden=4), g, x).values
            assert np.abs(out - out[0]).max() < 1e-10, kind

    def test_mixhop_width_split_sums_to_hidden(self):
        spec = ExpertSpec(kind="MixHop", layers=1, hidden=7, mixhop_powers=(0, 1, 2))
        g = star3()
        out = run(spec, g, np.ones((4, 2)))
        assert out.shape == (4, 7)

    def test_noise_expert_ignores_input(self):
        g = star3()
        spec = ExpertSpec(kind="noise", layers=1, hidden=5)
        rng = np.random.default_rng(0)
        a = run(spec, g, rng.normal(size=(4, 3)))
        b = run(spec, g, rng.normal(size=(4, 3)))
        assert np.array_equal(a.values, b.values)


class TestEquivariance:
    @pytest.mark.parametrize("kind", EXPERT_KINDS)
    def test_all_kinds_equivariant(self, kind):
        spec = ExpertSpec(kind=kind, layers=2, hidden=4)
        assert expert_equivariance_check(spec, n=6, in_dim=3, seed=7)

    def test_broken_expert_fails(self):
        # negative control: a fixed positional bias breaks equivariance
        def biased(spec, params, x, conv, **kw):
            out = expert_forward(spec, params, x, conv, **kw)
            bias = np.outer(np.arange(out.shape[0]), np.ones(out.shape[1]))
            return tape.add(out, tape.constant(bias))

        spec = ExpertSpec(kind="GCN", layers=1, hidden=4)
        assert not expert_equivariance_check(spec, n=6, in_dim=3, seed=7, forward=biased)


class TestGradients:
    @pytest.mark.parametrize("kind", EXPERT_KINDS)
    def test_expert_gradients_match_finite_differences(self, kind):
        from graphmoe.optim import grad_check

        rng = np.random.default_rng(10)
        g = build_graph(rng.integers(0, 6, size=(12, 2)), 6)
        x = tape.constant(rng.normal(size=(6, 3)))
        spec = ExpertSpec(kind=kind, layers=2, hidden=3)
        params = init_expert_params(spec, 3, np.random.default_rng(11))
        weights = rng.normal(size=(6, 3))

        def loss():
            out = expert_forward(spec, params, x, ConvCache(g))
            return tape.sum_all(tape.elementwise_mul(out, tape.constant(weights)))

        assert grad_check(loss, params, h=1e-6) < 1e-6
