"""Median-tree estimation and adaptive credible bands.

The band centers on the median-tree estimator (observed coefficients kept on
the nodes whose posterior inclusion reaches 1/2), takes its sup-norm radius
sigma_n from the kept wavelets' absolute sum, and its multiscale radius R_n
from the posterior quantile of the weighted coefficient distance to the
data.  Membership requires both constraints.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .errors import InvalidInputError, MedianTreeError
from .haar import AdmissibleWeights, CoeffArray, inverse_haar_flat, multiscale_norm
from .posterior import SequenceData, TreePosterior, draw_sparse
from .trees import NodeId, Tree, node_index, parent

__all__ = [
    "BandSpec",
    "CredibleBand",
    "median_tree",
    "median_tree_estimator",
    "radius_sigma",
    "radius_R",
    "band_membership",
    "compute_band",
    "default_vn",
    "default_j0",
    "sparse_multiscale_distances",
]


def default_vn(n: int) -> float:
    """(log n)^{3/4}: grows past sqrt(log n) as the coverage theorem requires."""
    return math.log(n) ** 0.75


def default_j0(n: int) -> int:
    """ceil(0.1 log2 n) forced layers, so w_{j0} grows like a multiple of log n."""
    return max(1, math.ceil(0.1 * math.log2(n)))


@dataclass(frozen=True)
class BandSpec:
    """Credible-band configuration.

    ``gamma`` is the non-credibility level, ``v_n`` the sup-radius inflation
    (None resolves to (log n)^{3/4}), ``weights`` the admissible multiscale
    weights, ``j0`` the forced layers.  ``include_root`` counts the root
    wavelet in sigma_n; the root coefficient is always kept by the center.
    """

    gamma: float = 0.05
    v_n: float | None = None
    weights: AdmissibleWeights | None = None
    j0: int = 1
    include_root: bool = True

    def __post_init__(self) -> None:
        if not (0.0 < self.gamma < 1.0):
            raise InvalidInputError("gamma must lie in (0,1)")
        if self.v_n is not None and self.v_n <= 0:
            raise InvalidInputError("v_n must be positive")

    def resolved_vn(self, n: int) -> float:
        return self.v_n if self.v_n is not None else default_vn(n)

    def resolved_weights(self) -> AdmissibleWeights:
        return self.weights if self.weights is not None else AdmissibleWeights()


@dataclass(frozen=True)
class CredibleBand:
    center: CoeffArray
    center_tree: Tree
    sigma_n: float
    R_n: float
    spec: BandSpec
    n: int

    def envelope(self) -> tuple[np.ndarray, np.ndarray]:
        """Lower/upper step functions of the sup-norm constraint on the grid."""
        vals = inverse_haar_flat(self.center.to_flat())
        return vals - self.sigma_n, vals + self.sigma_n


def median_tree(
    incl: Mapping[NodeId, float] | Iterable[np.ndarray],
    max_depth_cap: int | None = None,
    tol: float = 1e-6,
) -> Tree:
    """Nodes of posterior inclusion >= 1/2, validated as a tree.

    Exact posteriors give inclusions that are monotone along ancestry, so
    the threshold set is hereditary by itself.  Chain estimates may dip a
    parent just under 1/2 by Monte Carlo error: within ``tol`` the parent is
    repaired into the tree, beyond it the diagnostic error fires.
    """
    if isinstance(incl, Mapping):
        probs = dict(incl)
    else:
        probs = {
            (l, k): float(arr[k])
            for l, arr in enumerate(incl)
            for k in range(len(arr))
        }
    cap = max_depth_cap
    if cap is None:
        cap = max((l for l, _ in probs), default=-1) + 1
    selected = {node for node, p in probs.items() if p >= 0.5}
    for node in sorted(selected, key=node_index):
        cur = node
        while cur[0] >= 1:
            par = parent(cur)
            if par in selected:
                break
            if probs.get(par, 0.0) >= 0.5 - tol:
                selected.add(par)
                cur = par
                continue
            raise MedianTreeError(
                f"node {node} selected but ancestor {par} has inclusion "
                f"{probs.get(par, 0.0):.4f} < 1/2 - tol; increase chain length"
            )
    return Tree(frozenset(selected), cap)


def median_tree_estimator(tstar: Tree, d: SequenceData) -> CoeffArray:
    """Observed coefficients kept on the median tree's nodes plus the root."""
    flat = np.zeros(1 << d.max_level)
    flat[0] = d.flat[0]
    for node in tstar.internal:
        flat[node_index(node)] = d.flat[node_index(node)]
    return CoeffArray.from_flat(flat)


def radius_sigma(tstar: Tree, d: SequenceData, spec: BandSpec) -> float:
    """sigma_n = v_n sqrt(log n / n) sup_x sum over kept nodes of |psi_lk(x)|.

    The sup is exact on the dyadic grid one level below the median tree's
    depth, where every kept wavelet is piecewise constant.
    """
    res = min(tstar.depth + 1, d.max_level)
    acc = np.zeros(1 << res)
    if spec.include_root:
        acc += 1.0
    for l, k in tstar.internal:
        width = 1 << (res - l)
        acc[k * width : (k + 1) * width] += 2.0 ** (l / 2.0)
    scale = spec.resolved_vn(d.n) * math.sqrt(math.log(d.n) / d.n)
    return scale * float(acc.max())


def sparse_multiscale_distances(
    groups: list[tuple[Tree, np.ndarray]], d: SequenceData, w: AdmissibleWeights
) -> np.ndarray:
    """Weighted multiscale distances ||f - X||_M(w) for grouped sparse draws.

    Off-tree coordinates of a draw are zero, so their contribution is
    |X_lk| / w_l; only the per-level maxima excluding the tree's nodes are
    needed, which the sorted tables below give in O(tree) per tree.
    """
    L = d.max_level
    wl = w.array(L)
    level_vals = []
    level_order = []
    for l in range(L):
        seg = np.abs(d.flat[1 << l : 1 << (l + 1)]) / wl[l]
        order = np.argsort(seg)[::-1]
        level_vals.append(seg)
        level_order.append(order)
    out = []
    for t, block in groups:
        nodes_by_level: dict[int, set[int]] = {}
        for l, k in t.internal:
            nodes_by_level.setdefault(l, set()).add(k)
        base = 0.0
        for l in range(L):
            excl = nodes_by_level.get(l)
            vals, order = level_vals[l], level_order[l]
            if not excl:
                if len(order):
                    base = max(base, float(vals[order[0]]))
                continue
            for idx in order:
                if int(idx) not in excl:
                    base = max(base, float(vals[idx]))
                    break
        idx_nodes = np.array([node_index(nd) for nd in t.rooted_internal])
        node_w = np.array([wl[max(nd[0], 0)] for nd in t.rooted_internal])
        diffs = np.abs(block - d.flat[idx_nodes][None, :]) / node_w[None, :]
        per_draw = np.maximum(diffs.max(axis=1), base)
        out.append(per_draw)
    return np.concatenate(out) if out else np.empty(0)


def radius_R(
    post: TreePosterior,
    d: SequenceData,
    spec: BandSpec,
    draws: int,
    rng: np.random.Generator,
    groups: list[tuple[Tree, np.ndarray]] | None = None,
) -> float:
    """Smallest radius whose ball around the data holds >= 1-gamma posterior mass."""
    if draws < 100:
        raise InvalidInputError("radius_R needs at least 100 draws")
    if groups is None:
        groups = draw_sparse(post, d, draws, rng)
    dist = sparse_multiscale_distances(groups, d, spec.resolved_weights())
    q = float(np.quantile(dist, 1.0 - spec.gamma, method="inverted_cdf"))
    return q * math.sqrt(d.n)


def band_membership(f: CoeffArray, band: CredibleBand, d: SequenceData) -> bool:
    """Both constraints: multiscale ball around the data, sup ball around the center."""
    w = band.spec.resolved_weights()
    diff_data = CoeffArray.from_flat(f.pad_to(d.max_level).to_flat() - d.flat)
    if multiscale_norm(diff_data, w) > band.R_n / math.sqrt(d.n):
        return False
    delta = f.pad_to(d.max_level).to_flat() - band.center.to_flat()
    sup = float(np.max(np.abs(inverse_haar_flat(delta))))
    return sup <= band.sigma_n


def compute_band(
    post: TreePosterior,
    d: SequenceData,
    spec: BandSpec,
    rng: np.random.Generator,
    draws: int = 2000,
) -> tuple[CredibleBand, dict]:
    """Assemble the band and report its empirical posterior credibility.

    Returns the band plus diagnostics: the credibility estimate (fraction of
    the draws inside both constraints) and the accepted draws' exact sup
    diameter.
    """
    tstar = median_tree(post.inclusion_arrays(), post.prior.L_max)
    center = median_tree_estimator(tstar, d)
    sigma = radius_sigma(tstar, d, spec)
    groups = draw_sparse(post, d, draws, rng)
    dist = sparse_multiscale_distances(groups, d, spec.resolved_weights())
    R_n = float(np.quantile(dist, 1.0 - spec.gamma, method="inverted_cdf")) * math.sqrt(d.n)
    band = CredibleBand(center, tstar, sigma, R_n, spec, d.n)

    center_vals = inverse_haar_flat(center.to_flat())
    inside = 0
    total = 0
    lo = np.full(1 << d.max_level, np.inf)
    hi = np.full(1 << d.max_level, -np.inf)
    pos = 0
    chunk = max(1, (1 << 22) // (1 << d.max_level))
    for t, block in groups:
        idx = np.array([node_index(nd) for nd in t.rooted_internal])
        for start in range(0, len(block), chunk):
            rows = block[start : start + chunk]
            flats = np.zeros((len(rows), 1 << d.max_level))
            flats[:, idx] = rows
            vals = np.atleast_2d(inverse_haar_flat(flats))
            sup = np.max(np.abs(vals - center_vals[None, :]), axis=1)
            ok = (dist[pos : pos + len(rows)] <= R_n / math.sqrt(d.n)) & (sup <= sigma)
            inside += int(ok.sum())
            total += len(rows)
            if ok.any():
                lo = np.minimum(lo, vals[ok].min(axis=0))
                hi = np.maximum(hi, vals[ok].max(axis=0))
            pos += len(rows)
    diameter = float(np.max(hi - lo)) if np.isfinite(hi).any() else 0.0
    diag = {"credibility": inside / total, "draws": total, "accepted_diameter": diameter}
    return band, diag
