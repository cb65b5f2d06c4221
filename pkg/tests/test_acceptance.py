"""Acceptance criteria, one test per criterion at its stated tolerance.

Each test prints a single pass/fail line (run with ``pytest -s`` to see them
inline).  Statistical criteria run on fixed seed streams, so the whole module
is deterministic.
"""

import math
import time
from collections import Counter
from fractions import Fraction

import numpy as np
import pytest
from scipy.stats import beta as beta_dist

from cartwave._rng import stream
from cartwave.experiments import (
    ExperimentPlan,
    bvm_check,
    coverage_experiment,
    depth_cutoff,
    flat_vs_cart,
    rate_experiment,
    signal_set,
    sparse_ell_inf_losses,
)
from cartwave.haar import CoeffArray, GridFunction, HolderSpec, forward_haar, make_test_function
from cartwave.pinball import CovarianceSpec, build_pinball
from cartwave.posterior import (
    noise_event_holds,
    posterior_exact,
    posterior_mcmc,
    simulate,
)
from cartwave.trees import PriorSpec, Tree, sample_tree
from cartwave.uq import median_tree
from cartwave.unbalanced import (
    Breakpoints,
    build_uh,
    check_weak_balance,
    dyadic_breakpoints,
    quantile_balance_constants,
    quantile_breakpoints,
    uh_coefficients,
)


def report(k: int, name: str, ok: bool, detail: str) -> None:
    print(f"ACCEPTANCE {k} {name}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, f"criterion {k} ({name}) failed: {detail}"


def test_criterion_1_pinball_identity():
    t0 = time.time()
    rng = np.random.default_rng(101)
    spec = PriorSpec("gw", L_max=10, gamma=2.1)
    worst = 0.0
    for _ in range(1000):
        t = sample_tree(spec, rng)
        A = build_pinball(t)
        worst = max(
            worst, float(np.max(np.abs(A.entries @ A.entries.T - np.diag(A.diag))))
        )
    fig_tree = Tree(frozenset({(0, 0), (1, 0), (2, 1)}), 3)
    A = build_pinball(fig_tree).entries
    s2 = math.sqrt(2.0)
    expected = np.array(
        [
            [1.0, 1.0, 0.0, 0.0],
            [1.0, -1.0, -s2, 0.0],
            [1.0, -1.0, s2, -2.0],
            [1.0, -1.0, s2, 2.0],
        ]
    )
    fig_exact = bool(
        np.array_equal(A[:, [0, 1, 3]], expected[:, [0, 1, 3]])
        and np.max(np.abs(A[:, 2] - expected[:, 2])) < 1e-15
    )
    elapsed = time.time() - t0
    ok = worst < 1e-10 and fig_exact and elapsed < 10.0
    report(
        1,
        "pinball identity",
        ok,
        f"max |AA'-diag| = {worst:.2e}, figure matrix exact = {fig_exact}, {elapsed:.1f}s",
    )


def test_criterion_2_oracle_equivalence():
    t0 = time.time()
    truth = make_test_function("full_decay", HolderSpec(0.5, 1.0), 4)
    specs = [
        PriorSpec("gw", L_max=4, gamma=4.0),
        PriorSpec("exponential", L_max=4, c=0.4, n=16),
        PriorSpec("cond_uniform", L_max=4, lam=1.5),
    ]
    worst = 0.0
    for i in range(100):
        d = simulate(truth, 16, stream(202, "acc-oracle", i))
        for spec in specs:
            en = posterior_exact(d, spec, method="enumerate")
            dp = posterior_exact(d, spec, method="dp")
            for t, lp in zip(en.trees, en.log_probs):
                worst = max(worst, abs(math.exp(lp) - math.exp(dp.log_prob(t))))
    truth3 = make_test_function("full_decay", HolderSpec(0.5, 1.0), 3)
    d3 = simulate(truth3, 8, stream(202, "acc-oracle-mcmc"))
    cov = CovarianceSpec("g_prior", g_n=8.0)
    spec3 = PriorSpec("gw", L_max=3, gamma=4.0)
    en3 = posterior_exact(d3, spec3, cov, method="enumerate")
    chain = posterior_mcmc(
        d3, spec3, cov, iters=200_000, rng=stream(202, "acc-chain"), thin=5
    )
    freq = Counter(t.internal for t in chain.chain)
    m = len(chain.chain)
    worst_z = 0.0
    for t, lp in zip(en3.trees, en3.log_probs):
        p = math.exp(lp)
        if p > 0.01:
            f = freq.get(t.internal, 0) / m
            worst_z = max(worst_z, abs(f - p) / math.sqrt(p * (1 - p) / m))
    elapsed = time.time() - t0
    ok = worst < 1e-10 and worst_z <= 3.0 and elapsed < 300.0
    report(
        2,
        "oracle equivalence",
        ok,
        f"max per-tree dev = {worst:.2e}, MCMC worst z = {worst_z:.2f}, {elapsed:.0f}s",
    )


def test_criterion_3_median_tree_validity():
    violations = 0
    count = 0
    configs = [
        ("cusp", 1.0, 4, 32, 4.0, 0),
        ("full_decay", 0.5, 4, 16, 3.0, 0),
        ("single_branch_decay", 0.7, 5, 32, 3.0, 1),
        ("spike", 1.0, 4, 16, 2.5, 0),
        ("cusp", 0.5, 5, 32, 8.0, 1),
    ]
    for ci, (kind, alpha, L, n, gamma, j0) in enumerate(configs):
        truth = make_test_function(
            kind, HolderSpec(alpha, 1.0), L, spike_level=2 if kind == "spike" else None
        )
        spec = PriorSpec("gw", L_max=L, gamma=gamma, j0=j0)
        for rep in range(100):
            d = simulate(truth, n, stream(303, "acc-median", ci, rep))
            post = posterior_exact(d, spec, method="dp")
            count += 1
            try:
                t = median_tree(post.inclusion_arrays(), L, tol=0.0)
                assert len(t.leaves) == len(t.internal) + 1
            except Exception:
                violations += 1
    ok = violations == 0 and count == 500
    report(3, "median tree validity", ok, f"{violations} violations in {count} posteriors")


def test_criterion_4_rate_slopes():
    t0 = time.time()
    grid = (256, 512, 1024, 2048, 4096, 8192, 16384, 32768, 65536)
    details = []
    ok = True
    for alpha in (0.5, 1.0):
        plan = ExperimentPlan(
            "rates",
            truth_kind="full_decay",
            alpha=alpha,
            M=1.0,
            n_grid=grid,
            replicates=50,
            draws=500,
            gw_gamma=8.0,
            seed=404,
        )
        rep = rate_experiment(plan)
        err = rep.aggregates["slope_abs_error"]
        details.append(
            f"alpha={alpha}: slope {rep.aggregates['slope']:.3f} vs "
            f"{rep.aggregates['target_slope']:.3f} (|err| {err:.3f})"
        )
        ok = ok and err <= 0.1
    elapsed = time.time() - t0
    ok = ok and elapsed <= 1800.0
    report(4, "rate slopes", ok, "; ".join(details) + f", {elapsed:.0f}s")


def test_criterion_5_flat_tree_gap():
    t0 = time.time()
    plan = ExperimentPlan(
        "flat_vs_cart",
        alpha=0.5,
        M=2.0,
        n_grid=(1024, 4096, 16384, 65536),
        replicates=20,
        draws=400,
        gw_gamma=8.0,
        seed=505,
    )
    rep = flat_vs_cart(plan)
    a = rep.aggregates
    lo_d, hi_d = a["depth_tracking_spread"]
    elapsed = time.time() - t0
    ok = (
        a["final_ratio"] > 1.5
        and a["ratio_increasing"]
        and a["endpoint_cis_disjoint"]
        and 0.5 <= lo_d
        and hi_d <= 2.0
        and elapsed <= 1200.0
    )
    report(
        5,
        "flat-tree gap",
        ok,
        f"ratio at 2^16 = {a['final_ratio']:.2f}, endpoint CIs disjoint = "
        f"{a['endpoint_cis_disjoint']}, depth ratio in [{lo_d:.2f}, {hi_d:.2f}], {elapsed:.0f}s",
    )


def test_criterion_6_bvm_proximity():
    t0 = time.time()
    details = []
    ok = True
    final_ks = {}
    for cov_kind in ("identity", "g_prior"):
        plan = ExperimentPlan(
            "bvm",
            truth_kind="full_decay",
            alpha=0.5,
            n_grid=(64, 1024, 16384),
            replicates=8,
            draws=2000,
            gw_gamma=8.0,
            j0=1,
            cov_kind=cov_kind,
            mcmc_iters=20_000,
            seed=606,
        )
        rep = bvm_check(plan)
        curve = rep.aggregates["curves"]["ks"]
        final_ks[cov_kind] = curve[-1][1]
        ok = ok and curve[-1][1] < 0.05
        details.append(f"{cov_kind} KS@2^14 = {curve[-1][1]:.4f}")
        if cov_kind == "identity":
            decreasing = rep.aggregates["ks_decreasing"]
            ok = ok and decreasing
            details.append(
                "identity KS over n: "
                + " > ".join(f"{y:.4f}" for _, y, _ in curve)
                + f" (decreasing={decreasing})"
            )
    elapsed = time.time() - t0
    ok = ok and elapsed <= 300.0
    report(6, "BvM proximity", ok, "; ".join(details) + f", {elapsed:.0f}s")


def test_criterion_7_coverage():
    t0 = time.time()
    plan = ExperimentPlan(
        "coverage",
        truth_kind="full_decay",
        alpha=0.5,
        M=1.0,
        n_grid=(1024, 4096, 16384),
        replicates=100,
        draws=1000,
        gw_gamma=8.0,
        band_gamma=0.05,
        seed=707,
    )
    rep = coverage_experiment(plan)
    a = rep.aggregates
    ratios = [y for _, y, _ in a["curves"]["diameter_ratio"]]
    stable = max(ratios) / min(ratios) <= 3.0
    elapsed = time.time() - t0
    ok = (
        a["final_coverage"] >= 0.90
        and a["final_credibility"] >= 0.90
        and stable
        and elapsed <= 1800.0
    )
    report(
        7,
        "coverage",
        ok,
        f"coverage@2^14 = {a['final_coverage']:.2f}, credibility = "
        f"{a['final_credibility']:.2f}, diameter ratios {['%.2f' % r for r in ratios]}, {elapsed:.0f}s",
    )


def test_criterion_8_unbalanced_haar_suite():
    t0 = time.time()
    # Example 4.1: fails weak balance exactly at node (1,0)
    bp = Breakpoints(
        {(0, 0): Fraction(1, 2), (1, 0): Fraction(7, 16), (1, 1): Fraction(3, 4)}, 4
    )
    repc = check_weak_balance(build_uh(bp), E=5, D=2)
    verdicts = {r.node: r.ok for r in repc.records}
    counterexample_ok = (
        not verdicts[(1, 0)] and verdicts[(0, 0)] and verdicts[(1, 1)]
    )

    def gram_dev(s):
        mats = [s.render(u.node) for u in s.nodes] + [s.render((-1, 0))]
        G = np.array(mats)
        return float(np.max(np.abs(G @ G.T / (1 << s.grid_exp) - np.eye(len(G)))))

    quantile_ok = True
    gram_worst = 0.0
    for a, b in ((1.0, 1.0), (2.0, 5.0)):
        ginv = lambda u: beta_dist.ppf(u, a, b)
        consts = quantile_balance_constants(ginv, D=4, n=1024)
        s = build_uh(quantile_breakpoints(ginv, D=4, n=1024))
        quantile_ok = quantile_ok and check_weak_balance(s, consts["E"], 4).all_pass
        gram_worst = max(gram_worst, gram_dev(s))

    sd = build_uh(dyadic_breakpoints(5, 6))
    g = GridFunction(np.random.default_rng(808).standard_normal(64))
    co = uh_coefficients(g, sd)
    ca = forward_haar(g)
    red_dev = max(
        abs(co[(l, k)] - float(ca.levels[l][k]))
        for l in range(6)
        for k in range(1 << l)
    )
    red_dev = max(red_dev, abs(co[(-1, 0)] - ca.root))
    elapsed = time.time() - t0
    ok = (
        counterexample_ok
        and quantile_ok
        and gram_worst < 1e-10
        and red_dev < 1e-12
        and elapsed < 60.0
    )
    report(
        8,
        "unbalanced Haar suite",
        ok,
        f"counterexample fails at (1,0) = {counterexample_ok}, quantile systems pass = "
        f"{quantile_ok}, gram dev = {gram_worst:.2e}, dyadic reduction dev = {red_dev:.2e}, "
        f"{elapsed:.1f}s",
    )


def test_criterion_9_proof_apparatus_diagnostics():
    t0 = time.time()
    n, L = 16384, 14
    alpha, M, A = 0.5, 2.0, 8.0
    truth = make_test_function("full_decay", HolderSpec(alpha, M), L)
    S = signal_set(truth, n, A)
    assert S, "signal set must be nonempty for the diagnostic to bite"
    lc = depth_cutoff(alpha, M, n)
    prior = PriorSpec("gw", L_max=L, gamma=48.0)
    held = 0
    worst_tail = 0.0
    worst_incl = 1.0
    for rep in range(100):
        d = simulate(truth, n, stream(909, "acc-diagnostics", rep))
        if not noise_event_holds(d):
            continue
        held += 1
        post = posterior_exact(d, prior, method="dp")
        worst_tail = max(worst_tail, post.depth_tail(lc))
        arrs = post.inclusion_arrays()
        worst_incl = min(worst_incl, min(arrs[l][k] for l, k in S))
    elapsed = time.time() - t0
    ok = (
        held >= 50
        and worst_tail < 0.05
        and worst_incl > 0.95
        and elapsed <= 900.0
    )
    report(
        9,
        "proof-apparatus diagnostics",
        ok,
        f"{held}/100 replicates hold the noise event; max deep-tree mass = "
        f"{worst_tail:.2e}, min signal inclusion = {worst_incl:.4f} over {len(S)} nodes, "
        f"L_c = {lc}, {elapsed:.0f}s",
    )
