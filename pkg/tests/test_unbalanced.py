"""Unbalanced Haar systems, weak balance, quantile splits."""

import math
from fractions import Fraction

import numpy as np
import pytest
from scipy.stats import beta as beta_dist

from cartwave.errors import InvalidInputError
from cartwave.haar import (
    CoeffArray,
    GridFunction,
    HolderSpec,
    forward_haar,
    inverse_haar,
    make_test_function,
)
from cartwave.posterior import posterior_exact, simulate, SequenceData
from cartwave.trees import PriorSpec, Tree, node_index, sample_tree
from cartwave.unbalanced import (
    BasisPrior,
    Breakpoints,
    build_uh,
    check_admissibility,
    check_weak_balance,
    complexity_certificates,
    decay_bound_report,
    dyadic_breakpoints,
    granularity,
    admissible_depth,
    nondyadic_prior_sample,
    projection_bias,
    quantile_balance_constants,
    quantile_breakpoints,
    uh_coefficients,
    uh_pinball,
)

BETA25 = lambda u: beta_dist.ppf(u, 2.0, 5.0)


def gram_deviation(s):
    mats = [s.render(u.node) for u in s.nodes] + [s.render((-1, 0))]
    G = np.array(mats)
    gram = G @ G.T / (1 << s.grid_exp)
    return float(np.max(np.abs(gram - np.eye(len(G)))))


class TestBuildUH:
    def test_dyadic_midpoints_reduce_to_standard(self):
        s = build_uh(dyadic_breakpoints(3, 6))
        for u in s.nodes:
            l, k = u.node
            rendered = s.render(u.node)
            flat = np.zeros(64)
            flat[node_index(u.node)] = 1.0
            from cartwave.haar import inverse_haar_flat

            assert np.max(np.abs(rendered - inverse_haar_flat(flat))) < 1e-12

    def test_skewed_root_amplitudes(self):
        bp = Breakpoints({(0, 0): Fraction(3, 4)}, 3)
        s = build_uh(bp)
        al, ar = s.nodes[0].amp
        c = 1.0 / math.sqrt(4.0 / 3.0 + 4.0)
        assert al == pytest.approx(c / 0.75)
        assert ar == pytest.approx(-c / 0.25)
        r = s.render((0, 0))
        assert np.sum(r**2) / 8 == pytest.approx(1.0)
        assert np.sum(r) / 8 == pytest.approx(0.0, abs=1e-14)

    def test_gram_identity_random_weakly_balanced(self):
        rng = np.random.default_rng(0)
        for trial in range(10):
            a = 1.0 + rng.random()
            b = 1.0 + rng.random()
            q = quantile_breakpoints(
                lambda u: float(beta_dist.ppf(u, a, b)), D=4, n=256
            )
            assert gram_deviation(build_uh(q)) < 1e-10

    def test_breakpoint_off_grid_rejected(self):
        with pytest.raises(ValueError):
            Breakpoints({(0, 0): Fraction(1, 3)}, 4)


class TestWeakBalance:
    def test_paper_counterexample(self):
        bp = Breakpoints(
            {(0, 0): Fraction(1, 2), (1, 0): Fraction(7, 16), (1, 1): Fraction(3, 4)},
            4,
        )
        rep = check_weak_balance(build_uh(bp), E=5, D=2)
        verdicts = {r.node: r.ok for r in rep.records}
        assert verdicts[(0, 0)]
        assert verdicts[(1, 1)]
        assert not verdicts[(1, 0)]  # max side 7/16 is not M/8 for integer M
        assert not rep.all_pass

    def test_dyadic_all_pass_minimal_constants(self):
        rep = check_weak_balance(build_uh(dyadic_breakpoints(3, 6)), E=1, D=1)
        assert rep.all_pass

    def test_quantile_beta_passes_with_lemma_constants(self):
        consts = quantile_balance_constants(BETA25, D=4, n=1024)
        q = quantile_breakpoints(BETA25, D=4, n=1024)
        rep = check_weak_balance(build_uh(q), E=consts["E"], D=4)
        assert rep.all_pass
        assert all(r.min_ok for r in rep.records)  # induced min-side property


class TestQuantileBreakpoints:
    def test_uniform_recovers_midpoints(self):
        q = quantile_breakpoints(lambda u: u, D=2, n=64)
        for (l, k), b in q.b.items():
            assert b == Fraction(2 * k + 1, 1 << (l + 1))

    def test_beta11_equals_uniform(self):
        ginv = lambda u: float(beta_dist.ppf(u, 1.0, 1.0))
        q = quantile_breakpoints(ginv, D=2, n=64)
        u = quantile_breakpoints(lambda x: x, D=2, n=64)
        assert q.b == u.b

    def test_twenty_admissible_densities_pass(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            a = 1.0 + 1.2 * rng.random()
            b = 1.0 + 1.2 * rng.random()
            ginv = lambda u: float(beta_dist.ppf(u, a, b))
            consts = quantile_balance_constants(ginv, D=4, n=256)
            q = quantile_breakpoints(ginv, D=4, n=256)
            assert check_weak_balance(build_uh(q), E=consts["E"], D=4).all_pass

    def test_density_bound_violation_raises(self):
        steep = lambda u: float(beta_dist.ppf(u, 8.0, 8.0))  # sup g ~ 3.2
        with pytest.raises(ValueError):
            quantile_breakpoints(steep, D=3, n=256)


class TestGranularity:
    def test_dyadic_levels(self):
        s = build_uh(dyadic_breakpoints(4, 6))
        for l in range(5):
            assert granularity(s, l) == l + 1

    def test_example_walkthrough(self):
        bp = Breakpoints({(0, 0): Fraction(3, 4)}, 4)
        assert granularity(build_uh(bp), 0) == 2

    def test_weakly_balanced_bound(self):
        q = quantile_breakpoints(BETA25, D=4, n=1024)
        s = build_uh(q)
        top = max(u.node[0] for u in s.nodes)
        for l in range(top + 1):
            assert granularity(s, l) <= l + 4


class TestAdmissibleDepth:
    def test_arithmetic_example(self):
        assert admissible_depth(65536, 1.0) == 12

    def test_dyadic_always_admissible(self):
        s = build_uh(dyadic_breakpoints(4, 6))
        rep = check_admissibility(s, 64, 1.0)
        assert rep["missing"] == []

    def test_random_weakly_balanced_no_violations(self):
        rng = np.random.default_rng(2)
        for _ in range(5):
            a, b = 1.0 + rng.random(), 1.0 + rng.random()
            q = quantile_breakpoints(
                lambda u: float(beta_dist.ppf(u, a, b)), D=4, n=1024
            )
            rep = check_admissibility(build_uh(q), 1024, 1.0)
            assert rep["missing"] == []


class TestUHCoefficients:
    def test_constant_has_zero_details(self):
        s = build_uh(quantile_breakpoints(BETA25, D=4, n=256))
        co = uh_coefficients(GridFunction(np.full(256, 1.7)), s)
        assert co[(-1, 0)] == pytest.approx(1.7)
        for u in s.nodes:
            assert co[u.node] == pytest.approx(0.0, abs=1e-12)

    def test_dyadic_matches_forward_haar(self):
        s = build_uh(dyadic_breakpoints(4, 6))
        g = GridFunction(np.random.default_rng(3).standard_normal(64))
        co = uh_coefficients(g, s)
        ca = forward_haar(g)
        assert co[(-1, 0)] == pytest.approx(ca.root, abs=1e-12)
        for l in range(5):
            for k in range(1 << l):
                assert co[(l, k)] == pytest.approx(float(ca.levels[l][k]), abs=1e-12)

    def test_cusp_decay_bound(self):
        h = HolderSpec(0.5, 1.0)
        cusp = make_test_function("cusp", h, 10)
        f = GridFunction(inverse_haar(cusp).values)
        s = build_uh(quantile_breakpoints(BETA25, D=4, n=1024))
        rep = decay_bound_report(uh_coefficients(f, s), s, h)
        assert rep["ok"]

    def test_resolution_check(self):
        s = build_uh(dyadic_breakpoints(3, 6))
        with pytest.raises(ValueError):
            uh_coefficients(GridFunction(np.zeros(16)), s)


class TestUHPinball:
    def test_dyadic_histogram_assembly(self):
        s = build_uh(dyadic_breakpoints(4, 6))
        rng = np.random.default_rng(4)
        spec = PriorSpec("gw", L_max=4, gamma=3.0)
        from cartwave.haar import inverse_haar_flat

        for _ in range(10):
            t = sample_tree(spec, rng)
            beta = rng.standard_normal(t.n_leaves)
            A = uh_pinball(s, t)
            heights = A @ beta
            flat = np.zeros(64)
            for node, b in zip(t.rooted_internal, beta):
                flat[node_index(node)] = b
            vals = inverse_haar_flat(flat)
            for leaf, h in zip(t.leaves, heights):
                l, k = leaf
                seg = vals[k << (6 - l) : (k + 1) << (6 - l)]
                assert np.max(np.abs(seg - h)) < 1e-10

    def test_nondyadic_histogram_assembly(self):
        q = quantile_breakpoints(BETA25, D=4, n=256)
        s = build_uh(q)
        rng = np.random.default_rng(5)
        spec = PriorSpec("gw", L_max=4, gamma=3.0)
        for _ in range(10):
            t = sample_tree(spec, rng)
            beta = rng.standard_normal(t.n_leaves)
            heights = uh_pinball(s, t) @ beta
            # assemble the same function directly from the wavelets
            direct = np.full(256, beta[0], dtype=float)
            for node, b in zip(t.rooted_internal[1:], beta[1:]):
                direct += b * s.render(node)
            grid = np.zeros(256)
            from cartwave.unbalanced import _leaf_cell

            for leaf, h in zip(t.leaves, heights):
                lo, hi = _leaf_cell(s, leaf)
                grid[lo:hi] = h
            assert np.max(np.abs(grid - direct)) < 1e-10


class TestNondyadicPrior:
    def test_uniform_basis_reduces_to_dyadic(self):
        bprior = BasisPrior(((1.0, (1.0, 1.0)),), D=2, n=256)
        rng = np.random.default_rng(6)
        s, t, coeffs, grid = nondyadic_prior_sample(
            bprior, PriorSpec("gw", L_max=5, gamma=3.0), rng
        )
        for (l, k), b in s.breakpoints.b.items():
            assert b == Fraction(2 * k + 1, 1 << (l + 1))

    def test_exponent_four_shallower_trees(self):
        bprior = BasisPrior(((1.0, (1.0, 1.0)),), D=2, n=256)
        rng = np.random.default_rng(7)
        spec1 = PriorSpec("gw", L_max=6, gamma=2.0)
        spec4 = PriorSpec("gw", L_max=6, gamma=2.0, exponent=4.0)
        d1 = np.mean(
            [nondyadic_prior_sample(bprior, spec1, rng)[1].depth for _ in range(200)]
        )
        d4 = np.mean(
            [nondyadic_prior_sample(bprior, spec4, rng)[1].depth for _ in range(200)]
        )
        assert d4 < d1

    def test_step_function_jumps_on_breakpoints(self):
        bprior = BasisPrior(((0.4, (1.0, 1.0)), (0.6, (2.0, 5.0))), D=4, n=256)
        rng = np.random.default_rng(8)
        s, t, coeffs, grid = nondyadic_prior_sample(
            bprior, PriorSpec("gw", L_max=4, gamma=3.0), rng
        )
        jumps = np.nonzero(np.diff(grid))[0] + 1
        allowed = {
            int(b * 256) for b in s.breakpoints.b.values()
        }
        assert set(jumps.tolist()) <= allowed


class TestComplexityCertificates:
    def test_dyadic_expansion_is_one_term(self):
        s = build_uh(dyadic_breakpoints(3, 6))
        rep = complexity_certificates(s, E=1, D=1)
        assert rep["ok"]
        assert all(r["expansion_terms"] == 1 for r in rep["rows"])

    def test_quantile_counts_within_bound(self):
        consts = quantile_balance_constants(BETA25, D=4, n=256)
        s = build_uh(quantile_breakpoints(BETA25, D=4, n=256))
        h = HolderSpec(0.5, 1.0)
        cusp = make_test_function("cusp", h, 8)
        f = GridFunction(inverse_haar(cusp).values)
        rep = complexity_certificates(s, E=consts["E"], D=4, h=h, f=f)
        assert rep["ok"]

    def test_random_systems_never_violate(self):
        rng = np.random.default_rng(9)
        for _ in range(8):
            a, b = 1.0 + rng.random(), 1.0 + rng.random()
            ginv = lambda u: float(beta_dist.ppf(u, a, b))
            consts = quantile_balance_constants(ginv, D=4, n=256)
            s = build_uh(quantile_breakpoints(ginv, D=4, n=256))
            assert complexity_certificates(s, E=consts["E"], D=4)["ok"]


class TestProjectionBias:
    def test_constant_zero_bias(self):
        s = build_uh(quantile_breakpoints(BETA25, D=4, n=256))
        assert projection_bias(GridFunction(np.full(256, 0.4)), s, 2) == pytest.approx(
            0.0, abs=1e-12
        )

    def test_dyadic_cusp_ratio_bounded(self):
        h = HolderSpec(0.5, 1.0)
        cusp = make_test_function("cusp", h, 8)
        f = GridFunction(inverse_haar(cusp).values)
        s = build_uh(dyadic_breakpoints(7, 8))
        for lam in (2, 4, 6):
            bias = projection_bias(f, s, lam)
            envelope = (lam * 2.0**-lam) ** h.alpha
            assert bias <= 2.0 * h.M * envelope

    def test_full_projection_exact(self):
        s = build_uh(dyadic_breakpoints(5, 6))
        g = GridFunction(np.random.default_rng(10).standard_normal(64))
        assert projection_bias(g, s, 5) == pytest.approx(0.0, abs=1e-10)


class TestDyadicReductionPipeline:
    def test_posterior_on_uh_coefficients_matches_dyadic(self):
        # the whole pipeline: uniform-density UH data -> engine == dyadic engine
        truth = make_test_function("full_decay", HolderSpec(0.5, 1.0), 6)
        d = simulate(truth, 64, np.random.default_rng(11))
        s = build_uh(dyadic_breakpoints(5, 6))
        g = GridFunction(inverse_haar(d.X).values)
        co = uh_coefficients(g, s)
        flat = np.zeros(64)
        flat[0] = co[(-1, 0)]
        for u in s.nodes:
            flat[node_index(u.node)] = co[u.node]
        d_uh = SequenceData(CoeffArray.from_flat(flat), 64)
        spec = PriorSpec("gw", L_max=5, gamma=4.0)
        p1 = posterior_exact(d, spec, method="dp")
        p2 = posterior_exact(d_uh, spec, method="dp")
        for a, b in zip(p1.inclusion_arrays(), p2.inclusion_arrays()):
            assert np.max(np.abs(a - b)) < 1e-9
