"""The `verify` subcommand: a quick pass over every module's invariants.

Each check is small enough to finish in seconds; together they exercise the
load-bearing identities (transform roundtrips, prior normalization, the
pinball algebra, DP/enumeration agreement, median-tree heredity, band
geometry, UH orthonormality and the dyadic reduction).
"""

from __future__ import annotations

import math
from fractions import Fraction
from typing import Callable

import numpy as np

from . import haar, pinball, posterior, trees, unbalanced, uq


def _check_roundtrip() -> None:
    rng = np.random.default_rng(0)
    for L in (0, 1, 4, 8):
        g = haar.GridFunction(rng.standard_normal(1 << L))
        c = haar.forward_haar(g)
        back = haar.inverse_haar(c)
        assert np.max(np.abs(back.values - g.values)) < 1e-12
        again = haar.forward_haar(back)
        assert np.max(np.abs(again.to_flat() - c.to_flat())) < 1e-12
        assert abs(np.sum(c.to_flat() ** 2) - np.mean(g.values**2)) < 1e-10


def _check_domination() -> None:
    rng = np.random.default_rng(1)
    for _ in range(50):
        a = haar.CoeffArray.from_flat(rng.standard_normal(64))
        b = haar.CoeffArray.from_flat(rng.standard_normal(64))
        dist = haar.ell_inf_distance(a, b)
        sup = float(
            np.max(np.abs(haar.inverse_haar(a).values - haar.inverse_haar(b).values))
        )
        assert dist >= sup - 1e-12


def _check_projector() -> None:
    rng = np.random.default_rng(2)
    c = haar.CoeffArray.from_flat(rng.standard_normal(64))
    p = haar.level_projection(c, 3)
    pp = haar.level_projection(p, 3)
    assert np.max(np.abs(p.to_flat() - pp.to_flat())) == 0.0


def _check_self_similarity() -> None:
    h = haar.HolderSpec(0.5, 1.0)
    full = haar.make_test_function("full_decay", h, 8)
    assert haar.self_similarity_check(full, h, eps=h.M, j0=0)
    assert not haar.self_similarity_check(haar.CoeffArray.zeros(8), h, 0.5, 0)


def _check_tree_invariants() -> None:
    rng = np.random.default_rng(3)
    spec = trees.PriorSpec("gw", L_max=8, gamma=3.0)
    for _ in range(200):
        t = trees.sample_tree(spec, rng)
        assert t.n_leaves == len(t.internal) + 1
        assert len(t.leaves) == t.n_leaves
    forced = trees.PriorSpec("gw", L_max=6, gamma=3.0, j0=2)
    for _ in range(50):
        assert trees.sample_tree(forced, rng).fills_layers(2)


def _check_prior_masses() -> None:
    for spec in (
        trees.PriorSpec("gw", L_max=3, gamma=4.0),
        trees.PriorSpec("cond_uniform", L_max=3, lam=1.5),
        trees.PriorSpec("exponential", L_max=3, c=0.3, n=8),
    ):
        total = sum(
            math.exp(trees.log_prior_mass(t, spec)) for t in trees.enumerate_trees(3)
        )
        assert abs(total - 1.0) < 1e-10, (spec.kind, total)


def _check_catalan() -> None:
    # recurrence oracle and the unrestricted enumeration count
    c = [1]
    for n in range(12):
        c.append(sum(c[i] * c[n - i] for i in range(n + 1)))
    for K in range(12):
        assert trees.catalan(K) == c[K]


def _check_prune_extend() -> None:
    rng = np.random.default_rng(4)
    spec = trees.PriorSpec("gw", L_max=6, gamma=2.5)
    for _ in range(100):
        t = trees.sample_tree(spec, rng)
        if not t.internal:
            continue
        tm, removed = trees.prune_deepest_rightmost(t)
        assert trees.extend_to_node(tm, removed).internal == t.internal


def _check_pinball() -> None:
    rng = np.random.default_rng(5)
    spec = trees.PriorSpec("gw", L_max=10, gamma=2.2)
    for _ in range(100):
        t = trees.sample_tree(spec, rng)
        A = pinball.build_pinball(t)
        dev = np.max(np.abs(A.entries @ A.entries.T - np.diag(A.diag)))
        assert dev < 1e-10
        orth = (A.entries / np.sqrt(A.diag)[:, None])
        assert np.max(np.abs(orth @ orth.T - np.eye(A.K))) < 1e-10
        if t.n_leaves >= 2:
            rep = pinball.spectrum_checks(t)
            assert rep["max_deviation"] < 1e-9


def _check_posterior_equivalence() -> None:
    rng = np.random.default_rng(6)
    truth = haar.make_test_function("full_decay", haar.HolderSpec(0.5, 1.0), 4)
    d = posterior.simulate(truth, 16, rng)
    for spec in (
        trees.PriorSpec("gw", L_max=3, gamma=4.0),
        trees.PriorSpec("exponential", L_max=3, c=0.4, n=16),
        trees.PriorSpec("cond_uniform", L_max=3, lam=1.5),
    ):
        en = posterior.posterior_exact(d, spec, method="enumerate")
        dp = posterior.posterior_exact(d, spec, method="dp")
        for t, lp in zip(en.trees, en.log_probs):
            assert abs(math.exp(lp) - math.exp(dp.log_prob(t))) < 1e-10


def _check_median_tree() -> None:
    rng = np.random.default_rng(7)
    truth = haar.make_test_function("cusp", haar.HolderSpec(1.0, 1.0), 5)
    spec = trees.PriorSpec("gw", L_max=4, gamma=3.0)
    for rep in range(50):
        d = posterior.simulate(truth, 32, rng)
        post = posterior.posterior_exact(d, spec, method="dp")
        t = uq.median_tree(post.inclusion_arrays(), 4)
        assert t.n_leaves == len(t.internal) + 1


def _check_band_geometry() -> None:
    rng = np.random.default_rng(8)
    truth = haar.make_test_function("full_decay", haar.HolderSpec(0.5, 1.0), 8)
    d = posterior.simulate(truth, 256, rng)
    spec = trees.PriorSpec("gw", L_max=8, gamma=4.0, j0=1)
    post = posterior.posterior_exact(d, spec, method="dp")
    band, diag = uq.compute_band(post, d, uq.BandSpec(j0=1), rng, draws=300)
    assert diag["accepted_diameter"] <= 2 * band.sigma_n + 1e-12
    assert band.sigma_n >= 0 and band.R_n >= 0


def _check_uh() -> None:
    bp = unbalanced.Breakpoints(
        {(0, 0): Fraction(1, 2), (1, 0): Fraction(7, 16), (1, 1): Fraction(3, 4)}, 4
    )
    rep = unbalanced.check_weak_balance(unbalanced.build_uh(bp), E=5, D=2)
    verdicts = {r.node: r.ok for r in rep.records}
    assert not verdicts[(1, 0)] and verdicts[(0, 0)] and verdicts[(1, 1)]
    s = unbalanced.build_uh(unbalanced.dyadic_breakpoints(3, 5))
    mats = [s.render(u.node) for u in s.nodes] + [s.render((-1, 0))]
    G = np.array(mats)
    gram = G @ G.T / (1 << s.grid_exp)
    assert np.max(np.abs(gram - np.eye(len(G)))) < 1e-10
    f = haar.GridFunction(np.random.default_rng(9).standard_normal(32))
    co = unbalanced.uh_coefficients(f, s)
    ca = haar.forward_haar(f)
    for l in range(4):
        for k in range(1 << l):
            assert abs(co[(l, k)] - ca.levels[l][k]) < 1e-12


CHECKS: list[tuple[str, Callable[[], None]]] = [
    ("haar.roundtrip+parseval", _check_roundtrip),
    ("haar.ell_inf_dominates_sup", _check_domination),
    ("haar.level_projection_idempotent", _check_projector),
    ("haar.self_similarity", _check_self_similarity),
    ("trees.full_binary_invariants", _check_tree_invariants),
    ("trees.prior_masses_sum_to_one", _check_prior_masses),
    ("trees.catalan_recurrence", _check_catalan),
    ("trees.prune_extend_roundtrip", _check_prune_extend),
    ("pinball.identities", _check_pinball),
    ("posterior.dp_equals_enumeration", _check_posterior_equivalence),
    ("uq.median_tree_heredity", _check_median_tree),
    ("uq.band_geometry", _check_band_geometry),
    ("unbalanced.balance+gram+dyadic_reduction", _check_uh),
]


def run_all(verbose: bool = True) -> list[str]:
    """Run every invariant check; returns the names of failures."""
    failures = []
    for name, fn in CHECKS:
        try:
            fn()
            if verbose:
                print(f"PASS {name}")
        except Exception as exc:  # noqa: BLE001 - report and continue
            failures.append(name)
            if verbose:
                print(f"FAIL {name}: {exc}")
    return failures
