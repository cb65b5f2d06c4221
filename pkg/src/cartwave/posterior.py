"""Posterior engines for tree-shaped Gaussian wavelet priors.

Data are noisy multiscale coefficients X_lk = beta0_lk + eps_lk / sqrt(n).
Given a tree, the active coefficients are conjugate Gaussian, so the tree
posterior is available in closed form up to the sum over trees, which this
module evaluates three ways: brute enumeration (small depth caps), a
per-node factorized dynamic program (Galton-Watson and exponential priors
with the identity coefficient covariance), and a leaf-count-stratified
dynamic program (conditionally uniform prior).  A grow/prune
Metropolis-Hastings chain covers everything else, including correlated
coefficient priors.

Everything runs in log space: the Gaussian data factors reach exp(n X^2 / 2)
and overflow any linear-scale representation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
import numpy as np
from scipy.linalg import solve_triangular

from ._poly import ScaledPoly
from .errors import (
    InvalidInputError,
    NumericalError,
    StuckChainError,
    UnsupportedConfigurationError,
)
from .haar import CoeffArray
from .pinball import CoefCovariance, CovarianceSpec, covariance
from .trees import (
    NodeId,
    PriorSpec,
    Tree,
    children,
    enumerate_trees,
    log_prior_mass,
    log_prior_mass_unnormalized,
    node_index,
)

__all__ = [
    "SequenceData",
    "TreePosterior",
    "GaussianCoefPosterior",
    "simulate",
    "noise_event_holds",
    "log_marginal_node_factor",
    "log_marginal_likelihood",
    "posterior_exact",
    "posterior_mcmc",
    "coefficients_given_tree",
    "draw_functions",
    "draw_sparse",
]


@dataclass(frozen=True)
class SequenceData:
    """Observed multiscale coefficients at noise scale 1/sqrt(n)."""

    X: CoeffArray
    n: int
    truth: CoeffArray | None = None

    def __post_init__(self) -> None:
        if self.n < 2:
            raise InvalidInputError("need n >= 2")

    @cached_property
    def flat(self) -> np.ndarray:
        out = self.X.to_flat()
        out.flags.writeable = False
        return out

    @cached_property
    def node_log_factors(self) -> np.ndarray:
        """Per-node log Gaussian-integral factor under the unit coefficient prior."""
        out = log_marginal_node_factor(self.flat, self.n)
        out.flags.writeable = False
        return out

    @property
    def max_level(self) -> int:
        return self.X.max_level


def simulate(
    truth: CoeffArray, n: int, rng: np.random.Generator, noise: np.ndarray | None = None
) -> SequenceData:
    """Observe a truth in white noise: X_lk = beta0_lk + eps_lk / sqrt(n).

    The noise fills the canonical flat layout (root, then levels in order),
    making every eps_lk a deterministic function of the generator state and
    the node's position.  ``noise`` overrides the draw for exact-limit tests.
    """
    if n < 2:
        raise InvalidInputError("need n >= 2")
    L = int(math.floor(math.log2(n)))
    if truth.max_level > L:
        for l in range(L, truth.max_level):
            if np.any(truth.levels[l]):
                raise InvalidInputError(
                    f"truth carries signal at level {l}, beyond max level {L} for n={n}"
                )
        truth = CoeffArray(truth.root, truth.levels[:L])
    truth = truth.pad_to(L)
    eps = rng.standard_normal(1 << L) if noise is None else np.asarray(noise, dtype=float)
    if len(eps) != 1 << L:
        raise InvalidInputError(f"noise must have {1 << L} entries")
    flat = truth.to_flat() + eps / math.sqrt(n)
    return SequenceData(CoeffArray.from_flat(flat), n, truth)


def noise_event_holds(d: SequenceData) -> bool:
    """Whether every rescaled noise coordinate stays under 2 log(2^{L+1})."""
    if d.truth is None:
        raise InvalidInputError("noise event needs the truth for the residuals")
    eps = math.sqrt(d.n) * (d.flat - d.truth.pad_to(d.max_level).to_flat())
    return bool(np.max(eps**2) <= 2.0 * math.log(2.0 ** (d.max_level + 1)))


def log_marginal_node_factor(x, n: int):
    """log of int exp(n x b - n b^2 / 2) phi(b) db = n^2 x^2 / (2(n+1)) - log(n+1)/2."""
    x = np.asarray(x, dtype=float)
    out = n**2 * x**2 / (2.0 * (n + 1.0)) - 0.5 * math.log(n + 1.0)
    return float(out) if out.ndim == 0 else out


def _tree_indices(t: Tree) -> np.ndarray:
    return np.array([node_index(node) for node in t.rooted_internal])


def log_marginal_likelihood(t: Tree, d: SequenceData, cov: CoefCovariance) -> float:
    """log N_X(T) = -log det(I + n Sigma)/2 + n^2 X' (nI + Sigma^{-1})^{-1} X / 2."""
    idx = _tree_indices(t)
    if idx.max() >= len(d.flat):
        raise InvalidInputError("tree reaches coefficients beyond the data's levels")
    x = d.flat[idx]
    if cov.spec.kind == "identity":
        return float(np.sum(d.node_log_factors[idx]))
    n = d.n
    M = n * np.eye(len(x)) + cov.inverse
    try:
        L = np.linalg.cholesky(M)
    except np.linalg.LinAlgError as exc:
        cond = np.linalg.cond(M)
        raise NumericalError(
            f"Cholesky failed for nI + Sigma^-1 (K={len(x)}, cond~{cond:.3g})"
        ) from exc
    y = solve_triangular(L, x, lower=True)
    quad = float(y @ y)
    logdet_M = 2.0 * float(np.sum(np.log(np.diag(L))))
    return -0.5 * (logdet_M + cov.logdet) + 0.5 * n**2 * quad


@dataclass(frozen=True)
class GaussianCoefPosterior:
    """Conditional law of the active coefficients given tree and data.

    mean and cov follow the tree's rooted-internal node order; off-tree
    coefficients are exact point masses at zero.
    """

    tree: Tree
    mean: np.ndarray
    cov: np.ndarray | None
    var_scalar: float | None

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.var_scalar is not None:
            return self.mean + math.sqrt(self.var_scalar) * rng.standard_normal(
                (size, len(self.mean))
            )
        chol = np.linalg.cholesky(self.cov)
        z = rng.standard_normal((size, len(self.mean)))
        return self.mean + z @ chol.T

    def marginal_sd(self) -> np.ndarray:
        if self.var_scalar is not None:
            return np.full(len(self.mean), math.sqrt(self.var_scalar))
        return np.sqrt(np.diag(self.cov))


def coefficients_given_tree(
    t: Tree, d: SequenceData, cov: CoefCovariance
) -> GaussianCoefPosterior:
    """N(mu, (nI + Sigma^{-1})^{-1}) with mu = n (nI + Sigma^{-1})^{-1} X_T."""
    idx = _tree_indices(t)
    x = d.flat[idx]
    n = d.n
    if cov.spec.kind == "identity":
        return GaussianCoefPosterior(t, n * x / (n + 1.0), None, 1.0 / (n + 1.0))
    M = n * np.eye(len(x)) + cov.inverse
    tilde = np.linalg.inv(M)
    tilde = (tilde + tilde.T) / 2.0
    return GaussianCoefPosterior(t, n * (tilde @ x), tilde, None)


# -- exact posteriors ---------------------------------------------------------


class TreePosterior:
    """Posterior over trees, in one of four modes.

    exact_enumerated keeps every tree with its log-probability;
    exact_dp / exact_dp_stratified keep per-node tables from which
    normalizers, per-tree probabilities, marginal inclusions, depth tails
    and exact samples all derive; mcmc keeps a thinned chain.
    """

    def __init__(
        self,
        mode: str,
        prior: PriorSpec,
        cov_spec: CovarianceSpec,
        data: SequenceData,
    ):
        self.mode = mode
        self.prior = prior
        self.cov_spec = cov_spec
        self.data = data
        self.trees: list[Tree] | None = None
        self.log_probs: np.ndarray | None = None
        self.chain: list[Tree] | None = None
        self.acceptance_rate: float | None = None
        self._logZ: list[np.ndarray] | None = None
        self._split_log: np.ndarray | None = None
        self._stop_log: np.ndarray | None = None
        self._polys: dict[NodeId, ScaledPoly] | None = None
        self._log_norm: float | None = None

    # ---- shared API

    def log_prob(self, t: Tree) -> float:
        """Exact log posterior probability of one tree (exact modes only)."""
        if self.mode == "exact_enumerated":
            for tt, lp in zip(self.trees, self.log_probs):
                if tt.internal == t.internal:
                    return float(lp)
            return -math.inf
        if self._log_norm is None:
            raise UnsupportedConfigurationError(
                "exact per-tree probabilities need an exact posterior mode"
            )
        lw = self._log_weight(t)
        return lw - self._log_norm

    def _log_weight(self, t: Tree) -> float:
        lp = log_prior_mass_unnormalized(t, self.prior)
        if not math.isfinite(lp):
            return -math.inf
        cov = covariance(t, self.cov_spec)
        return lp + log_marginal_likelihood(t, self.data, cov)

    def marginal_inclusion(self) -> dict[NodeId, float]:
        """Posterior probability that each node is internal."""
        arrays = self.inclusion_arrays()
        out: dict[NodeId, float] = {}
        for l, arr in enumerate(arrays):
            for k, p in enumerate(arr):
                out[(l, k)] = float(p)
        return out

    def inclusion_arrays(self) -> list[np.ndarray]:
        """Per-level inclusion probabilities, level l an array of length 2^l."""
        if self.mode == "exact_enumerated":
            L = self.prior.L_max
            arrays = [np.zeros(1 << l) for l in range(L)]
            probs = np.exp(self.log_probs)
            for t, p in zip(self.trees, probs):
                for l, k in t.internal:
                    arrays[l][k] += p
            return arrays
        if self.mode == "exact_dp":
            return self._dp_inclusion()
        if self.mode == "exact_dp_stratified":
            return self._stratified_inclusion()
        return self._chain_inclusion()

    def sample_trees(self, count: int, rng: np.random.Generator) -> list[Tree]:
        if self.mode == "exact_enumerated":
            probs = np.exp(self.log_probs)
            probs = probs / probs.sum()
            picks = rng.choice(len(self.trees), size=count, p=probs)
            return [self.trees[i] for i in picks]
        if self.mode == "exact_dp":
            return [self._dp_sample(rng) for _ in range(count)]
        if self.mode == "exact_dp_stratified":
            return [self._stratified_sample(rng) for _ in range(count)]
        picks = rng.integers(len(self.chain), size=count)
        return [self.chain[i] for i in picks]

    def depth_tail(self, dcap: int) -> float:
        """Posterior probability of depth strictly greater than dcap."""
        if dcap >= self.prior.L_max:
            return 0.0
        if dcap < self.prior.j0:
            return 1.0
        if self.mode == "exact_enumerated":
            probs = np.exp(self.log_probs)
            return float(sum(p for t, p in zip(self.trees, probs) if t.depth > dcap))
        if self.mode == "exact_dp":
            capped = _factorized_dp(self.data, self.prior, depth_cap=dcap)
            return float(
                max(0.0, 1.0 - math.exp(capped[0][0] - self._logZ[0][0]))
            )
        if self.mode == "exact_dp_stratified":
            root, _ = _stratified_dp(self.data, self.prior, depth_cap=dcap)
            lw = _cond_uniform_mix(root, self.prior)
            full_lw = self._log_norm_mix
            return float(max(0.0, 1.0 - math.exp(lw - full_lw)))
        return float(np.mean([t.depth > dcap for t in self.chain]))

    def top_trees(self, k: int, rng: np.random.Generator | None = None) -> list[tuple[Tree, float]]:
        """k most probable trees.

        The chain mode ranks by visit frequency; DP modes rank the distinct
        trees found by exact sampling, each with its exact probability.
        """
        if self.mode == "exact_enumerated":
            order = np.argsort(self.log_probs)[::-1][:k]
            return [(self.trees[i], float(math.exp(self.log_probs[i]))) for i in order]
        if self.mode == "mcmc":
            counts: dict[frozenset, tuple[Tree, int]] = {}
            for t in self.chain:
                got = counts.get(t.internal)
                counts[t.internal] = (t, 1 if got is None else got[1] + 1)
            ranked = sorted(counts.values(), key=lambda tc: tc[1], reverse=True)[:k]
            return [(t, c / len(self.chain)) for t, c in ranked]
        rng = rng if rng is not None else np.random.default_rng(0)
        seen: dict[frozenset, Tree] = {}
        for t in self.sample_trees(max(200, 4 * k), rng):
            seen.setdefault(t.internal, t)
        ranked = sorted(seen.values(), key=self.log_prob, reverse=True)[:k]
        return [(t, math.exp(self.log_prob(t))) for t in ranked]

    # ---- factorized DP internals

    def _dp_inclusion(self) -> list[np.ndarray]:
        logZ, split_log, stop_log = self._logZ, self._split_log, self._stop_log
        g = self.data.node_log_factors
        L = self.prior.L_max
        arrays: list[np.ndarray] = []
        prev = None
        for l in range(L):
            gl = g[1 << l : 1 << (l + 1)]
            s = np.exp(
                split_log[l] + gl + logZ[l + 1][0::2] + logZ[l + 1][1::2] - logZ[l]
            )
            cur = s if prev is None else np.repeat(prev, 2) * s
            arrays.append(cur)
            prev = cur
        return arrays

    def _dp_sample(self, rng: np.random.Generator) -> Tree:
        logZ, split_log = self._logZ, self._split_log
        g = self.data.node_log_factors
        L = self.prior.L_max
        internal: set[NodeId] = set()
        stack = [(0, 0)]
        while stack:
            l, k = stack.pop()
            if l >= L:
                continue
            p = math.exp(
                split_log[l]
                + g[(1 << l) + k]
                + logZ[l + 1][2 * k]
                + logZ[l + 1][2 * k + 1]
                - logZ[l][k]
            )
            if rng.random() < p:
                internal.add((l, k))
                stack.append((l + 1, 2 * k))
                stack.append((l + 1, 2 * k + 1))
        return Tree(frozenset(internal), L)

    # ---- stratified DP internals

    @cached_property
    def _log_norm_mix(self) -> float:
        root = self._polys[(0, 0)]
        return _cond_uniform_mix(root, self.prior)

    def _stratified_inclusion(self) -> list[np.ndarray]:
        # Inside-outside over leaf-count polynomials: outside(l,k) carries the
        # tree contexts in which (l,k) is reached, inside the subtree sums.
        prior, g = self.prior, self.data.node_log_factors
        L = prior.L_max
        polys = self._polys
        outside: dict[NodeId, ScaledPoly] = {(0, 0): ScaledPoly.monomial(0)}
        arrays = [np.zeros(1 << l) for l in range(L)]
        for l in range(L):
            for k in range(1 << l):
                o = outside.get((l, k))
                if o is None or o.is_zero():
                    continue
                left, right = children((l, k))
                split = o.scaled(g[(1 << l) + k]).mul(polys[left]).mul(polys[right])
                arrays[l][k] = math.exp(
                    _cond_uniform_mix(split, prior) - self._log_norm_mix
                )
                if l + 1 < L:
                    outside[left] = o.scaled(g[(1 << l) + k]).mul(polys[right])
                    outside[right] = o.scaled(g[(1 << l) + k]).mul(polys[left])
        return arrays

    def _stratified_sample(self, rng: np.random.Generator) -> Tree:
        prior = self.prior
        root = self._polys[(0, 0)]
        mindeg, logc = root.log_coeff_array()
        Ks = np.arange(mindeg, mindeg + len(logc))
        logw = np.array(
            [
                logc[i] + _log_cu_prior_term(int(K), prior)
                for i, K in enumerate(Ks)
            ]
        )
        m = logw[np.isfinite(logw)].max()
        probs = np.exp(np.where(np.isfinite(logw), logw - m, -np.inf))
        probs /= probs.sum()
        K = int(rng.choice(Ks, p=probs))
        internal: set[NodeId] = set()
        self._stratified_descend((0, 0), K, internal, rng)
        return Tree(frozenset(internal), prior.L_max)

    def _stratified_descend(
        self, node: NodeId, m: int, internal: set[NodeId], rng: np.random.Generator
    ) -> None:
        if m == 1:
            return
        internal.add(node)
        left, right = children(node)
        pl, pr = self._polys[left], self._polys[right]
        mins_l, logc_l = pl.log_coeff_array()
        mins_r, logc_r = pr.log_coeff_array()
        opts, logws = [], []
        for i, ll in enumerate(logc_l):
            j = m - (mins_l + i) - mins_r
            if 0 <= j < len(logc_r) and math.isfinite(ll) and math.isfinite(logc_r[j]):
                opts.append(mins_l + i)
                logws.append(ll + logc_r[j])
        logws = np.array(logws)
        probs = np.exp(logws - logws.max())
        probs /= probs.sum()
        i_left = int(rng.choice(len(opts), p=probs))
        self._stratified_descend(left, opts[i_left], internal, rng)
        self._stratified_descend(right, m - opts[i_left], internal, rng)

    # ---- chain internals

    def _chain_inclusion(self) -> list[np.ndarray]:
        L = self.prior.L_max
        arrays = [np.zeros(1 << l) for l in range(L)]
        for t in self.chain:
            for l, k in t.internal:
                arrays[l][k] += 1.0
        for arr in arrays:
            arr /= len(self.chain)
        return arrays

    def inclusion_se(self) -> dict[NodeId, float]:
        """Naive Monte Carlo standard errors for chain-mode inclusions."""
        if self.mode != "mcmc":
            return {}
        m = len(self.chain)
        out = {}
        for node, p in self.marginal_inclusion().items():
            out[node] = math.sqrt(max(p * (1 - p), 1e-12) / m)
        return out


def _split_stop_logs(prior: PriorSpec) -> tuple[np.ndarray, np.ndarray]:
    """Per-layer log split/stop weights absorbing the prior's per-node factors."""
    L = prior.L_max
    split = np.empty(L)
    stop = np.empty(L)
    if prior.kind == "gw":
        for l in range(L):
            p = prior.split_prob(l)
            split[l] = math.log(p) if p > 0 else -math.inf
            stop[l] = math.log1p(-p) if p < 1 else -math.inf
    elif prior.kind == "exponential":
        pen = -prior.c * math.log(prior.effective_n)
        split[:] = pen
        stop[:] = 0.0
        stop[: prior.j0] = -math.inf
    else:
        raise UnsupportedConfigurationError(
            "factorized DP supports gw and exponential priors only"
        )
    return split, stop


def _factorized_dp(
    d: SequenceData, prior: PriorSpec, depth_cap: int | None = None
) -> list[np.ndarray]:
    """Bottom-up log partition tables Z(l, k) for factorizing priors."""
    L = prior.L_max
    cap = L if depth_cap is None else depth_cap
    split, stop = _split_stop_logs(prior)
    g = d.node_log_factors
    logZ: list[np.ndarray] = [np.empty(0)] * (L + 1)
    logZ[cap] = np.full(1 << cap, 0.0 if cap == L else stop[cap])
    for l in range(cap - 1, -1, -1):
        gl = g[1 << l : 1 << (l + 1)]
        grow = split[l] + gl + logZ[l + 1][0::2] + logZ[l + 1][1::2]
        logZ[l] = np.logaddexp(stop[l], grow)
    return logZ


def _log_cu_prior_term(K: int, prior: PriorSpec) -> float:
    from .trees import _log_cond_uniform_unnorm

    return _log_cond_uniform_unnorm(K, prior.lam)


def _cond_uniform_mix(poly: ScaledPoly, prior: PriorSpec) -> float:
    """log sum_K u(K) [poly]_K for the conditionally uniform prior."""
    mindeg, logc = poly.log_coeff_array()
    terms = [
        lc + _log_cu_prior_term(mindeg + i, prior)
        for i, lc in enumerate(logc)
        if math.isfinite(lc)
    ]
    if not terms:
        return -math.inf
    m = max(terms)
    return m + math.log(sum(math.exp(t - m) for t in terms))


def _stratified_dp(
    d: SequenceData, prior: PriorSpec, depth_cap: int | None = None
) -> tuple[ScaledPoly, dict[NodeId, ScaledPoly]]:
    """Per-node leaf-count polynomials with data factors on splits."""
    L = prior.L_max
    cap = L if depth_cap is None else depth_cap
    g = d.node_log_factors
    polys: dict[NodeId, ScaledPoly] = {}
    for l in range(cap, -1, -1):
        for k in range(1 << l):
            leaf_term = ScaledPoly.monomial(1) if l >= prior.j0 else ScaledPoly.zero()
            if l >= cap:
                polys[(l, k)] = ScaledPoly.monomial(1)
                continue
            left, right = children((l, k))
            grow = (
                polys[left].mul(polys[right]).scaled(g[(1 << l) + k])
            )
            polys[(l, k)] = leaf_term.add(grow)
    return polys[(0, 0)], polys


def posterior_exact(
    d: SequenceData,
    prior: PriorSpec,
    cov_spec: CovarianceSpec | None = None,
    method: str = "dp",
) -> TreePosterior:
    """Exact tree posterior by enumeration or dynamic programming.

    Enumeration supports every prior/covariance pair but is guarded at depth
    5.  The DP route needs the identity coefficient covariance; GW and
    exponential priors factorize per node, the conditionally uniform prior
    runs leaf-count-stratified.
    """
    cov_spec = cov_spec if cov_spec is not None else CovarianceSpec("identity")
    if prior.L_max > d.max_level:
        raise InvalidInputError("prior depth cap exceeds the data's levels")
    if method == "enumerate":
        post = TreePosterior("exact_enumerated", prior, cov_spec, d)
        trees, logw = [], []
        for t in enumerate_trees(prior.L_max):
            if not t.fills_layers(prior.j0):
                continue
            lp = log_prior_mass(t, prior)
            if not math.isfinite(lp):
                continue
            cov = covariance(t, cov_spec)
            trees.append(t)
            logw.append(lp + log_marginal_likelihood(t, d, cov))
        logw = np.array(logw)
        m = logw.max()
        logZ = m + math.log(np.sum(np.exp(logw - m)))
        post.trees = trees
        post.log_probs = logw - logZ
        return post
    if method != "dp":
        raise InvalidInputError(f"unknown method {method!r}")
    if cov_spec.kind != "identity":
        raise UnsupportedConfigurationError(
            "the DP posterior requires the identity coefficient covariance; "
            "use method='enumerate' or posterior_mcmc for correlated priors"
        )
    if prior.kind in ("gw", "exponential"):
        post = TreePosterior("exact_dp", prior, cov_spec, d)
        post._logZ = _factorized_dp(d, prior)
        post._split_log, post._stop_log = _split_stop_logs(prior)
        post._log_norm = _dp_log_norm(post)
        return post
    post = TreePosterior("exact_dp_stratified", prior, cov_spec, d)
    root, polys = _stratified_dp(d, prior)
    post._polys = polys
    post._log_norm = _stratified_log_norm(post)
    return post


def _dp_log_norm(post: TreePosterior) -> float:
    """log sum_T exp(unnormalized prior mass + marginal likelihood).

    The DP table absorbs one prior/data factor per internal node; the root
    coefficient's data factor and, for the exponential prior, the +1 in
    K = |T_int| + 1 multiply every tree and sit outside the table.
    """
    prior, d = post.prior, post.data
    base = float(post._logZ[0][0]) + float(d.node_log_factors[0])
    if prior.kind == "exponential":
        base += -prior.c * math.log(prior.effective_n)
    return base


def _stratified_log_norm(post: TreePosterior) -> float:
    return post._log_norm_mix + float(post.data.node_log_factors[0])


# -- MCMC ---------------------------------------------------------------------


def _propose(
    t: Tree, prior: PriorSpec, rng: np.random.Generator
) -> tuple[Tree, float] | None:
    """Grow/prune proposal; returns (candidate, log q(back)/q(fwd))."""
    growable = [n for n in t.leaves if prior.j0 <= n[0] < prior.L_max]
    prunable = [n for n in t.prunable() if n[0] >= prior.j0]
    if not growable and not prunable:
        return None
    do_grow = bool(growable) and (not prunable or rng.random() < 0.5)
    if do_grow:
        node = growable[rng.integers(len(growable))]
        cand = Tree(t.internal | {node}, prior.L_max)
        fwd = (0.5 if prunable else 1.0) / len(growable)
        cand_prunable = [n for n in cand.prunable() if n[0] >= prior.j0]
        cand_growable = [n for n in cand.leaves if prior.j0 <= n[0] < prior.L_max]
        back = (0.5 if cand_growable else 1.0) / len(cand_prunable)
    else:
        node = prunable[rng.integers(len(prunable))]
        cand = Tree(t.internal - {node}, prior.L_max)
        fwd = (0.5 if growable else 1.0) / len(prunable)
        cand_growable = [n for n in cand.leaves if prior.j0 <= n[0] < prior.L_max]
        cand_prunable = [n for n in cand.prunable() if n[0] >= prior.j0]
        back = (0.5 if cand_prunable else 1.0) / len(cand_growable)
    return cand, math.log(back) - math.log(fwd)


def posterior_mcmc(
    d: SequenceData | None,
    prior: PriorSpec,
    cov_spec: CovarianceSpec | None,
    iters: int,
    rng: np.random.Generator,
    burnin: int | None = None,
    thin: int = 10,
    init: Tree | None = None,
) -> TreePosterior:
    """Grow/prune Metropolis-Hastings over trees.

    With ``d=None`` the chain targets the prior alone, which is how the
    sampler is validated against exact prior masses.  Burn-in defaults to
    20% of the iterations; the stored chain is thinned.
    """
    if iters < 1:
        raise InvalidInputError("need iters >= 1")
    cov_spec = cov_spec if cov_spec is not None else CovarianceSpec("identity")
    burnin = iters // 5 if burnin is None else burnin
    t = init if init is not None else _default_init(prior)
    cache: dict[frozenset, float] = {}

    def logw(tree: Tree) -> float:
        key = tree.internal
        got = cache.get(key)
        if got is not None:
            return got
        val = log_prior_mass_unnormalized(tree, prior)
        if d is not None and math.isfinite(val):
            val += log_marginal_likelihood(tree, d, covariance(tree, cov_spec))
        if len(cache) < 20000:
            cache[key] = val
        return val

    cur = logw(t)
    chain: list[Tree] = []
    accepted = proposed = 0
    for it in range(iters):
        prop = _propose(t, prior, rng)
        if prop is None:
            raise StuckChainError(
                "no grow or prune move available; the forced layers saturate the cap"
            )
        cand, log_qcorr = prop
        proposed += 1
        new = logw(cand)
        if math.log(rng.random()) < new - cur + log_qcorr:
            t, cur = cand, new
            accepted += 1
        if it >= burnin and (it - burnin) % thin == 0:
            chain.append(t)
    post = TreePosterior("mcmc", prior, cov_spec, d)
    post.chain = chain
    post.acceptance_rate = accepted / max(1, proposed)
    post._log_norm = None
    return post


def _default_init(prior: PriorSpec) -> Tree:
    from .trees import flat_tree

    return flat_tree(prior.j0, prior.L_max)


def chain_ess_proxy(post: TreePosterior) -> float:
    """Effective-sample-size proxy from the leaf-count autocorrelation."""
    if post.mode != "mcmc" or not post.chain:
        raise InvalidInputError("ESS proxy applies to chain posteriors")
    x = np.array([t.n_leaves for t in post.chain], dtype=float)
    x = x - x.mean()
    m = len(x)
    if np.allclose(x, 0.0):
        return float(m)
    acf_denom = float(x @ x)
    rho_sum = 0.0
    for lag in range(1, min(m // 2, 200)):
        rho = float(x[:-lag] @ x[lag:]) / acf_denom
        if rho < 0.05:
            break
        rho_sum += rho
    return m / (1.0 + 2.0 * rho_sum)


# -- posterior function draws -------------------------------------------------


def draw_sparse(
    post: TreePosterior, d: SequenceData, count: int, rng: np.random.Generator
) -> list[tuple[Tree, np.ndarray]]:
    """Joint draws grouped by distinct tree: (tree, draws x K coefficient block)."""
    trees = post.sample_trees(count, rng)
    groups: dict[frozenset, tuple[Tree, int]] = {}
    for t in trees:
        key = t.internal
        if key in groups:
            groups[key] = (groups[key][0], groups[key][1] + 1)
        else:
            groups[key] = (t, 1)
    out = []
    for t, m in groups.values():
        gp = coefficients_given_tree(t, d, covariance(t, post.cov_spec))
        out.append((t, gp.sample(rng, m)))
    return out


def draw_functions(
    post: TreePosterior, d: SequenceData, count: int, rng: np.random.Generator
) -> list[CoeffArray]:
    """Posterior function draws as full coefficient arrays (zeros off-tree)."""
    out: list[CoeffArray] = []
    for t, block in draw_sparse(post, d, count, rng):
        idx = _tree_indices(t)
        for row in block:
            flat = np.zeros(1 << d.max_level)
            flat[idx] = row
            out.append(CoeffArray.from_flat(flat))
    return out
