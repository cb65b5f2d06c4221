"""Pinball matrix algebra and coefficient covariances."""

import math

import numpy as np
import pytest

from cartwave.errors import InvalidInputError
from cartwave.haar import CoeffArray, inverse_haar
from cartwave.pinball import (
    CovarianceSpec,
    build_pinball,
    covariance,
    external_to_internal,
    histogram_coeffs,
    internal_to_external,
    render_histogram,
    spectrum_checks,
)
from cartwave.trees import PriorSpec, Tree, flat_tree, sample_tree

FIG3_TREE = Tree(frozenset({(0, 0), (1, 0), (2, 1)}), 3)
SQRT2 = math.sqrt(2.0)
FIG3_MATRIX = np.array(
    [
        [1.0, 1.0, 0.0, 0.0],
        [1.0, -1.0, -SQRT2, 0.0],
        [1.0, -1.0, SQRT2, -2.0],
        [1.0, -1.0, SQRT2, 2.0],
    ]
)


def random_trees(count, L_max, gamma=2.2, seed=0):
    rng = np.random.default_rng(seed)
    spec = PriorSpec("gw", L_max=L_max, gamma=gamma)
    return [sample_tree(spec, rng) for _ in range(count)]


class TestBuildPinball:
    def test_flat_one_by_hand(self):
        A = build_pinball(flat_tree(1, 3))
        assert np.array_equal(A.entries, np.array([[1.0, -1.0], [1.0, 1.0]]))
        assert np.array_equal(A.entries @ A.entries.T, np.diag([2.0, 2.0]))

    def test_figure_matrix_exact(self):
        A = build_pinball(FIG3_TREE)
        rational = np.array([[True, True, False, True]] * 4)
        # integer entries are exact, sqrt(2) entries to 1e-15
        assert np.array_equal(A.entries[:, [0, 1, 3]], FIG3_MATRIX[:, [0, 1, 3]])
        assert np.max(np.abs(A.entries[:, 2] - FIG3_MATRIX[:, 2])) < 1e-15

    def test_diag_identity_random(self):
        for t in random_trees(100, 10):
            A = build_pinball(t)
            dev = np.max(np.abs(A.entries @ A.entries.T - np.diag(A.diag)))
            assert dev < 1e-10

    def test_scaled_rows_orthogonal(self):
        for t in random_trees(20, 8, seed=1):
            A = build_pinball(t)
            Q = A.entries / np.sqrt(A.diag)[:, None]
            assert np.max(np.abs(Q @ Q.T - np.eye(A.K))) < 1e-10


class TestHeightMaps:
    def test_root_unit_gives_constant(self):
        for t in random_trees(10, 5, seed=2):
            e = np.zeros(t.n_leaves)
            e[0] = 3.25
            heights = internal_to_external(build_pinball(t), e)
            assert np.allclose(heights, 3.25)

    def test_figure_last_column(self):
        heights = internal_to_external(
            build_pinball(FIG3_TREE), np.array([0.0, 0.0, 0.0, 1.0])
        )
        assert np.allclose(heights, [0.0, 0.0, -2.0, 2.0])

    def test_histogram_render_matches_haar_synthesis(self):
        # the pinball weights left children -1 while the Haar mother wavelet
        # is +1 on the left, so the bridge flips detail signs
        rng = np.random.default_rng(3)
        for t in random_trees(20, 5, seed=4):
            A = build_pinball(t)
            beta = rng.standard_normal(t.n_leaves)
            grid = render_histogram(t, internal_to_external(A, beta), exponent=5)
            via_haar = inverse_haar(histogram_coeffs(t, beta, 5)).values
            assert np.max(np.abs(grid - via_haar)) < 1e-10

    def test_constant_heights_invert_to_root(self):
        t = Tree(frozenset({(0, 0), (1, 1)}), 3)
        beta = external_to_internal(build_pinball(t), np.full(3, 1.5))
        assert np.allclose(beta, [1.5, 0.0, 0.0], atol=1e-12)

    def test_roundtrip(self):
        rng = np.random.default_rng(5)
        for t in random_trees(30, 6, seed=6):
            A = build_pinball(t)
            h = rng.standard_normal(t.n_leaves)
            assert np.max(np.abs(internal_to_external(A, external_to_internal(A, h)) - h)) < 1e-10

    def test_flat_one_solve_by_hand(self):
        beta = external_to_internal(build_pinball(flat_tree(1, 2)), np.array([0.0, 2.0]))
        assert np.allclose(beta, [1.0, 1.0])

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            internal_to_external(build_pinball(flat_tree(1, 2)), np.zeros(3))


class TestCovariance:
    def test_g_prior_flat_one_is_identity(self):
        cov = covariance(flat_tree(1, 2), CovarianceSpec("g_prior", g_n=2.0))
        assert np.allclose(cov.realized, np.eye(2), atol=1e-12)

    def test_identity_kind(self):
        for t in random_trees(5, 4, seed=7):
            cov = covariance(t, CovarianceSpec("identity"))
            assert np.array_equal(cov.realized, np.eye(t.n_leaves))

    def test_ar1_rho_to_zero_limit(self):
        t = FIG3_TREE
        cov = covariance(t, CovarianceSpec("ar1_external", rho=1e-12, c_n=1.0))
        A = build_pinball(t)
        assert np.allclose(cov.realized, np.linalg.inv(A.gram()), atol=1e-9)

    def test_g_prior_matches_direct_inverse(self):
        for t in random_trees(20, 6, seed=8):
            cov = covariance(t, CovarianceSpec("g_prior", g_n=7.0))
            A = build_pinball(t)
            direct = 7.0 * np.linalg.inv(A.gram())
            assert np.max(np.abs(cov.realized - direct)) < 1e-9
            assert np.max(np.abs(cov.inverse @ cov.realized - np.eye(t.n_leaves))) < 1e-9

    def test_terminal_parent_independent_under_g_prior(self):
        # a node whose children are both leaves decouples from the rest
        for t in random_trees(30, 6, seed=9):
            if t.n_leaves < 3:
                continue
            cov = covariance(t, CovarianceSpec("g_prior", g_n=3.0))
            cols = {node: j for j, node in enumerate(t.rooted_internal)}
            for node in t.prunable():
                j = cols[node]
                row = cov.realized[j].copy()
                row[j] = 0.0
                assert np.max(np.abs(row)) < 1e-10

    def test_custom_non_pd_rejected(self):
        t = flat_tree(1, 2)
        with pytest.raises(ValueError):
            covariance(t, CovarianceSpec("custom", matrix=np.array([[1.0, 2.0], [2.0, 1.0]])))

    def test_ar1_logdet_and_inverse(self):
        t = FIG3_TREE
        cov = covariance(t, CovarianceSpec("ar1_external", rho=0.6, c_n=2.0))
        sign, logdet = np.linalg.slogdet(cov.realized)
        assert sign > 0
        assert logdet == pytest.approx(cov.logdet, abs=1e-9)
        assert np.max(np.abs(cov.inverse - np.linalg.inv(cov.realized))) < 1e-7

    def test_ar1_auto_scale_meets_floor(self):
        t = flat_tree(2, 4)
        n = 4096
        cov = covariance(t, CovarianceSpec("ar1_external", rho=0.5, n=n))
        assert cov.eig_min == pytest.approx(1.0 / math.sqrt(math.log(n)), rel=1e-6)


class TestSpectrum:
    def test_flat_two_eigenvalues(self):
        A = build_pinball(flat_tree(2, 3))
        eigs = np.sort(np.linalg.eigvalsh(A.gram()))
        assert np.allclose(eigs, [4.0, 4.0, 4.0, 4.0], atol=1e-10)

    def test_figure_tree_eigenvalues(self):
        A = build_pinball(FIG3_TREE)
        eigs = np.sort(np.linalg.eigvalsh(A.gram()))
        assert np.allclose(eigs, [2.0, 4.0, 8.0, 8.0], atol=1e-10)

    def test_random_trees_deviation(self):
        for t in random_trees(100, 8, seed=10):
            if t.n_leaves < 2:
                continue
            assert spectrum_checks(t)["max_deviation"] < 1e-9

    def test_gram_eigen_bounds(self):
        for t in random_trees(30, 7, seed=11):
            if t.n_leaves < 2:
                continue
            A = build_pinball(t)
            eigs = np.linalg.eigvalsh(A.gram())
            assert eigs.max() <= 2.0 ** (t.depth + 1) + 1e-9
            assert eigs.min() == pytest.approx(min(A.diag), rel=1e-9)

    def test_nonzero_eigs_coincide(self):
        for t in random_trees(10, 6, seed=12):
            A = build_pinball(t)
            e1 = np.sort(np.linalg.eigvalsh(A.gram()))
            e2 = np.sort(np.linalg.eigvalsh(A.entries @ A.entries.T))
            assert np.allclose(e1, e2, atol=1e-9)
