"""Closed-form bound, Monte Carlo, count sketch, and case-study tests."""

import numpy as np
import pytest

from graphmoe import theory
from graphmoe.errors import ConfigError, DataError, NumericalError
from graphmoe.graph import build_graph
from graphmoe.theory import SketchSpec, VarianceScore


def star3():
    return build_graph([(0, 1), (0, 2), (0, 3)], 4)


class TestPosterior:
    def test_zero_is_half(self):
        assert theory.posterior_eta(np.zeros(5)) == pytest.approx(0.5)

    def test_monotone_limit(self):
        # at a coordinate sum of 50 the posterior is within 1e-20 of 1
        assert 1.0 - theory.posterior_eta(np.array([50.0])) <= 1e-20
        assert theory.posterior_eta(np.array([-50.0])) < 1e-20

    def test_symmetry(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            x = rng.normal(size=rng.integers(1, 10))
            assert theory.posterior_eta(x) + theory.posterior_eta(-x) == pytest.approx(1.0, abs=1e-12)


class TestStableBce:
    def test_midpoint_approaches_log2(self):
        assert theory.stable_bce(0.5, 1, 1e-12) == pytest.approx(np.log(2), abs=1e-9)

    def test_worst_case_hits_ceiling(self):
        val = theory.stable_bce(0.0, 1, 0.001)
        assert val == pytest.approx(-np.log(0.001))
        assert val == pytest.approx(theory.loss_upper(0.001))

    def test_slightly_negative_floor(self):
        assert theory.stable_bce(1.0, 1, 0.001) == pytest.approx(-np.log(1.001))

    def test_boundedness_on_grid_and_random(self):
        rng = np.random.default_rng(1)
        eps0 = 0.001
        lo, hi = -np.log(1 + eps0), -np.log(eps0)
        xs = np.concatenate([np.linspace(0, 1, 101), rng.random(200)])
        for x in xs:
            for y in (0, 1):
                val = theory.stable_bce(float(x), y, eps0)
                assert lo - 1e-12 <= val <= hi + 1e-12


class TestBound:
    def test_reference_values_k2(self):
        f = theory.bound_f(2, 0.001)
        assert f == pytest.approx(np.log(8) - np.log(3.004), rel=1e-12)
        assert f == pytest.approx(0.9793, abs=2e-4)
        b = theory.theorem_bound(2, 0.001, 0.3)
        assert b == pytest.approx((6.9078 - 0.9793) / 6.6078, abs=2e-4)
        assert b == pytest.approx(0.8972, abs=2e-4)

    def test_strictly_decreasing_in_k(self):
        vals = [theory.theorem_bound(k, 0.001, 0.3) for k in range(2, 17)]
        assert all(a > b for a, b in zip(vals, vals[1:]))

    def test_vacuous_limit_clamps_with_warning(self):
        # as eps0 grows U shrinks toward f and the raw bound exceeds 1
        with pytest.warns(UserWarning, match="vacuous"):
            assert theory.theorem_bound(2, 0.25, 0.9) == 1.0
        raw = theory.theorem_bound(2, 0.25, 0.9, clamp=False)
        assert raw > 1.0

    def test_eps_to_zero_bound_to_one(self):
        # the ceiling U = -log(eps0) dominates, so the bound climbs to 1
        vals = [theory.theorem_bound(3, e, 0.3) for e in (1e-3, 1e-6, 1e-12, 1e-250)]
        assert all(a < b for a, b in zip(vals, vals[1:]))
        assert vals[-1] > 0.995

    def test_domain_guards(self):
        with pytest.raises(ConfigError):
            theory.bound_f(1, 0.001)
        with pytest.raises(ConfigError):
            theory.theorem_bound(3, 0.001, 8.0)  # a >= U
        with pytest.raises(ConfigError):
            theory.stable_bce(0.5, 1, 0.0)


class TestWilson:
    def test_contains_point_estimate(self):
        lo, hi = theory.wilson_interval(50, 100)
        assert lo < 0.5 < hi

    def test_narrows_with_samples(self):
        lo1, hi1 = theory.wilson_interval(500, 1000)
        lo2, hi2 = theory.wilson_interval(5000, 10000)
        assert hi2 - lo2 < hi1 - lo1


class TestMonteCarlo:
    def test_bound_holds_on_small_grid(self):
        for k in (2, 4, 8):
            res = theory.monte_carlo_loss_prob(k, 0.001, 0.3, samples=20_000, seed=3)
            half = (res.ci_high - res.ci_low) / 2
            assert res.probability <= res.bound + half, (k, res)
            assert res.valid

    def test_vacuous_regime_probability_near_one(self):
        u = theory.loss_upper(0.001)
        with pytest.warns(UserWarning, match="vacuous"):
            res = theory.monte_carlo_loss_prob(4, 0.001, u - 1e-6, samples=5_000, seed=4)
        assert res.probability > 0.999
        assert res.bound == 1.0

    def test_seeded_reproducibility(self):
        a = theory.monte_carlo_loss_prob(3, 0.001, 0.3, samples=5_000, seed=7)
        b = theory.monte_carlo_loss_prob(3, 0.001, 0.3, samples=5_000, seed=7)
        assert a.probability == b.probability
        assert a.ci_low == b.ci_low and a.ci_high == b.ci_high


class TestCountSketch:
    def test_basis_vector_width_one(self):
        u = np.zeros(5)
        u[0] = 1.0
        sk = theory.count_sketch(u, SketchSpec(n=5, c=1, seed=0))
        assert sk.shape == (1,)
        assert abs(sk[0]) == pytest.approx(1.0)
        assert sk @ sk == pytest.approx(1.0)  # self inner product = |u|^2

    def test_sketch_matrix_agrees(self):
        rng = np.random.default_rng(2)
        u = rng.normal(size=20)
        spec = SketchSpec(n=20, c=6, seed=5)
        np.testing.assert_allclose(theory.count_sketch(u, spec),
                                   theory.sketch_matrix(spec) @ u, atol=1e-12)

    def test_unbiased_inner_product(self):
        rows = theory.cs_inner_check(dim=30, widths=[8], trials=10_000, seed=6)
        row = rows[0]
        z99 = 2.5758293035489004
        assert abs(row["mean_estimate"] - row["true_inner"]) <= z99 * row["sem"]

    def test_width_monotone_rms(self):
        rows = theory.cs_inner_check(dim=30, widths=[8, 64], trials=2_000, seed=7)
        by_width = {r["width"]: r["rms_error"] for r in rows}
        assert by_width[64] < by_width[8]

    def test_length_mismatch(self):
        with pytest.raises(DataError):
            theory.count_sketch(np.ones(4), SketchSpec(n=5, c=2, seed=0))


class TestVarianceGate:
    def test_proportional_rows_score_zero(self):
        h = np.outer([1.0, 2.0, 5.0], [0.2, 0.3, 0.5])
        assert theory.variance_gate(h).score == pytest.approx(0.0, abs=1e-15)

    def test_scale_invariance(self):
        rng = np.random.default_rng(8)
        h = rng.random((6, 4)) + 0.5
        base = theory.variance_gate(h).score
        for c in (0.1, 3.0, 250.0):
            assert theory.variance_gate(c * h).score == pytest.approx(base, rel=1e-9)

    def test_degenerate_rows_skipped_and_counted(self):
        h = np.array([[1.0, -1.0], [2.0, 2.0], [3.0, 1.0]])
        res = theory.variance_gate(h)
        assert res.skipped_rows == 1

    def test_all_degenerate_is_an_error(self):
        with pytest.raises(NumericalError):
            theory.variance_gate(np.array([[1.0, -1.0], [2.0, -2.0]]))


class TestCaseStudy:
    def test_spectral_and_mean_experts_score_zero_on_star(self):
        scores = theory.case_study_scores(star3(), seed=0)
        assert scores["GCN"].score <= 1e-12
        assert scores["GraphSAGE"].score <= 1e-12

    def test_injective_expert_separates_in_95_of_100_seeds(self):
        wins = sum(theory.case_study_scores(star3(), seed=s)["GIN"].score > 1e-6
                   for s in range(100))
        assert wins >= 95, f"only {wins}/100 seeds separated"

    def test_regular_graph_gives_zero_for_injective_too(self):
        # on a cycle all degrees agree, so even sum aggregation cannot separate
        cycle = build_graph([(i, (i + 1) % 5) for i in range(5)], 5)
        scores = theory.case_study_scores(cycle, seed=0)
        assert scores["GIN"].score <= 1e-12
