"""Unbalanced Haar systems: breakpoint trees, weak balance, quantile splits.

A breakpoint collection assigns each dyadic node (l,k) a split location
inside its inherited bracket; the induced wavelets

    psi_lk = (1/sqrt(1/|L| + 1/|R|)) (1_L / |L| - 1_R / |R|)

are orthonormal by construction.  Weak balance requires the longer side to
be an exact multiple m/2^(l+D) with 1 <= m <= E+l, which controls both the
basis' granularity and its expansion complexity in the standard Haar system.

Breakpoints are dyadic rationals with denominator exponent at most the grid
exponent, so all integrals below are exact cell sums.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property, lru_cache
from typing import Callable, Iterable, Mapping

import numpy as np

from .errors import InvalidInputError
from .haar import CoeffArray, GridFunction, HolderSpec, forward_haar
from .trees import NodeId, PriorSpec, Tree, children, node_index, sample_tree

__all__ = [
    "Breakpoints",
    "UHSystem",
    "BasisPrior",
    "build_uh",
    "check_weak_balance",
    "quantile_breakpoints",
    "granularity",
    "admissible_depth",
    "uh_coefficients",
    "uh_pinball",
    "nondyadic_prior_sample",
    "complexity_certificates",
    "projection_bias",
    "dyadic_breakpoints",
]


@dataclass(frozen=True)
class Breakpoints:
    """Nested split locations b_lk in (0,1), as exact dyadic fractions.

    ``grid_exp`` fixes the admissible grid X = {i / 2^grid_exp}; every
    breakpoint must sit on it.  Brackets derive recursively: the root owns
    (0, 1], an even child inherits (parent-left, parent-break], an odd child
    (parent-break, parent-right].
    """

    b: Mapping[NodeId, Fraction]
    grid_exp: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "b", dict(self.b))
        denom = 1 << self.grid_exp
        for node, frac in self.b.items():
            if (frac * denom).denominator != 1:
                raise InvalidInputError(
                    f"breakpoint {frac} at {node} is off the 2^-{self.grid_exp} grid"
                )
        for node in self.b:
            lo, hi = self.bracket(node)
            if not (lo < self.b[node] < hi):
                raise InvalidInputError(
                    f"breakpoint at {node} falls outside its open bracket ({lo}, {hi})"
                )

    def bracket(self, node: NodeId) -> tuple[Fraction, Fraction]:
        l, k = node
        if l == 0:
            return Fraction(0), Fraction(1)
        par = (l - 1, k >> 1)
        if par not in self.b:
            raise InvalidInputError(f"node {node} has no split ancestor {par}")
        lo, hi = self.bracket(par)
        return (lo, self.b[par]) if k % 2 == 0 else (self.b[par], hi)

    @property
    def nodes(self) -> list[NodeId]:
        return sorted(self.b, key=node_index)

    def max_full_level(self) -> int:
        """Deepest level m with every node of levels <= m present."""
        m = -1
        while all((m + 1, k) in self.b for k in range(1 << (m + 1))):
            m += 1
        return m

    def to_json(self) -> str:
        import json

        return json.dumps(
            {
                "grid_exp": self.grid_exp,
                "breakpoints": [
                    [l, k, str(self.b[(l, k)])] for l, k in self.nodes
                ],
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "Breakpoints":
        import json

        obj = json.loads(text)
        return cls(
            {(int(l), int(k)): Fraction(s) for l, k, s in obj["breakpoints"]},
            int(obj["grid_exp"]),
        )


@dataclass(frozen=True)
class UHNode:
    node: NodeId
    lo: Fraction
    split: Fraction
    hi: Fraction

    @property
    def left_len(self) -> Fraction:
        return self.split - self.lo

    @property
    def right_len(self) -> Fraction:
        return self.hi - self.split

    @property
    def amp(self) -> tuple[float, float]:
        """Constant values of psi on the left and right pieces."""
        ll, rl = float(self.left_len), float(self.right_len)
        c = 1.0 / math.sqrt(1.0 / ll + 1.0 / rl)
        return c / ll, -c / rl


@dataclass(frozen=True)
class UHSystem:
    """Orthonormal unbalanced Haar system over an admissible node set."""

    breakpoints: Breakpoints
    nodes: tuple[UHNode, ...]

    @property
    def grid_exp(self) -> int:
        return self.breakpoints.grid_exp

    @cached_property
    def by_node(self) -> dict[NodeId, UHNode]:
        return {u.node: u for u in self.nodes}

    def max_full_level(self) -> int:
        return self.breakpoints.max_full_level()

    def render(self, node: NodeId) -> np.ndarray:
        """Grid values of psi_lk (the root wavelet for node (-1, 0))."""
        m = 1 << self.grid_exp
        if node == (-1, 0):
            return np.ones(m)
        u = self.by_node[node]
        out = np.zeros(m)
        al, ar = u.amp
        lo = int(u.lo * m)
        mid = int(u.split * m)
        hi = int(u.hi * m)
        out[lo:mid] = al
        out[mid:hi] = ar
        return out


def build_uh(b: Breakpoints) -> UHSystem:
    """Materialize the wavelet system of a breakpoint collection."""
    nodes = []
    for node in b.nodes:
        lo, hi = b.bracket(node)
        split = b.b[node]
        if not (lo < split < hi):
            raise InvalidInputError(f"empty side at {node}")
        nodes.append(UHNode(node, lo, split, hi))
    return UHSystem(b, tuple(nodes))


def dyadic_breakpoints(max_level: int, grid_exp: int) -> Breakpoints:
    """Midpoint splits: the system reduces to the standard Haar basis."""
    if max_level + 1 > grid_exp:
        raise InvalidInputError("midpoints at the deepest level fall off the grid")
    out = {}
    for l in range(max_level + 1):
        for k in range(1 << l):
            out[(l, k)] = Fraction(2 * k + 1, 1 << (l + 1))
    return Breakpoints(out, grid_exp)


@dataclass(frozen=True)
class BalanceRecord:
    node: NodeId
    max_side: Fraction
    M: Fraction
    ok: bool
    min_side: Fraction
    m_min: Fraction
    min_ok: bool


@dataclass(frozen=True)
class BalanceReport:
    E: int
    D: int
    records: tuple[BalanceRecord, ...]

    @property
    def all_pass(self) -> bool:
        return all(r.ok for r in self.records)

    def failures(self) -> list[BalanceRecord]:
        return [r for r in self.records if not r.ok]

    def to_csv(self) -> str:
        import csv as _csv
        import io

        buf = io.StringIO()
        w = _csv.writer(buf, lineterminator="\n")
        w.writerow(["l", "k", "max_side", "multiplier", "pass", "min_side", "min_multiplier", "min_pass"])
        for r in self.records:
            w.writerow(
                [r.node[0], r.node[1], str(r.max_side), str(r.M), int(r.ok), str(r.min_side), str(r.m_min), int(r.min_ok)]
            )
        return buf.getvalue()


def check_weak_balance(s: UHSystem, E: int, D: int) -> BalanceReport:
    """Per-node weak-balance verdicts: max side an exact multiple M/2^(l+D), M <= E+l.

    Also records the induced min-side property (an exact multiple m/2^(l+D)
    with m <= E+l), which weak balance implies by induction.
    """
    records = []
    for u in s.nodes:
        l = u.node[0]
        mx = max(u.left_len, u.right_len)
        mn = min(u.left_len, u.right_len)
        M = mx * (1 << (l + D))
        m_min = mn * (1 << (l + D))
        ok = M.denominator == 1 and 1 <= M <= E + l
        min_ok = m_min.denominator == 1 and 1 <= m_min <= E + l
        records.append(BalanceRecord(u.node, mx, M, ok, mn, m_min, min_ok))
    return BalanceReport(E, D, tuple(records))


def _measure_density(G_inverse: Callable[[float], float], lo: float, hi: float) -> tuple[float, float]:
    """(sup g, sup 1/g) on the quantile range [lo, hi], by finite differences."""
    us = np.linspace(lo, hi, 2049)
    try:
        ys = np.asarray(G_inverse(us), dtype=float)
        if ys.shape != us.shape:
            raise TypeError
    except (TypeError, ValueError):
        ys = np.array([float(G_inverse(float(u))) for u in us])
    dy = np.diff(ys)
    du = np.diff(us)
    if np.any(dy <= 0):
        raise InvalidInputError("G_inverse must be strictly increasing on the used range")
    slopes = dy / du  # 1/g at interior points
    return float(np.max(1.0 / slopes)), float(np.max(slopes))


def quantile_breakpoints(
    G_inverse: Callable[[float], float],
    D: int,
    n: int,
    max_level: int | None = None,
) -> Breakpoints:
    """Breakpoints at per-level dyadically rounded quantiles of G.

    b_lk rounds G^{-1}((2k+1)/2^(l+1)) down to the 2^-(l+D) grid (never
    finer than the data grid), which keeps every side an exact multiple of
    2^-(l+D) and yields a weakly balanced system with E = 2 + 3 C_q 2^(D-1),
    where C_q bounds 1/g on the used quantile range.  Requires
    sup g < 2^(D-2): that is what keeps the rounded sides nonempty.
    """
    grid_exp = int(math.floor(math.log2(n)))
    if 1 << grid_exp != n:
        raise InvalidInputError("n must be a power of two")
    top = grid_exp - D if max_level is None else max_level
    if top < 0 or top + D > grid_exp:
        raise InvalidInputError(
            f"levels up to {top} need rounding scale {top + D} <= grid exponent {grid_exp}"
        )
    sup_g, _ = _measure_density(
        G_inverse, 1.0 / 2 ** (top + 2), 1.0 - 1.0 / 2 ** (top + 2)
    )
    # equality is safe: the clamp below keeps sides nonempty on its own
    if sup_g > 2.0 ** (D - 2) + 1e-9:
        raise InvalidInputError(
            f"density bound violated: sup g ~ {sup_g:.3f} > 2^(D-2) = {2.0 ** (D - 2):.3f}; "
            "increase D"
        )
    out: dict[NodeId, Fraction] = {}
    brackets: dict[NodeId, tuple[Fraction, Fraction]] = {(0, 0): (Fraction(0), Fraction(1))}
    for l in range(top + 1):
        scale = 1 << (l + D)
        for k in range(1 << l):
            if (l, k) not in brackets:
                continue
            lo, hi = brackets[(l, k)]
            u = (2 * k + 1) / 2 ** (l + 1)
            y = G_inverse(float(u))
            cand = Fraction(int(math.floor(y * scale)), scale)
            lo_c = _ceil_to(lo, scale)
            hi_c = _floor_below(hi, scale)
            if lo_c > hi_c:
                continue  # no admissible interior point at this granularity
            cand = min(max(cand, lo_c), hi_c)
            out[(l, k)] = cand
            brackets[(l + 1, 2 * k)] = (lo, cand)
            brackets[(l + 1, 2 * k + 1)] = (cand, hi)
    return Breakpoints(out, grid_exp)


def quantile_balance_constants(
    G_inverse: Callable[[float], float], D: int, n: int, max_level: int | None = None
) -> dict:
    """Measured density bounds and the implied weak-balance constant E."""
    grid_exp = int(math.floor(math.log2(n)))
    top = grid_exp - D if max_level is None else max_level
    sup_g, c_q = _measure_density(
        G_inverse, 1.0 / 2 ** (top + 2), 1.0 - 1.0 / 2 ** (top + 2)
    )
    E = 2 + 3 * c_q * 2 ** (D - 1)
    return {"sup_g": sup_g, "C_q": c_q, "E": int(math.ceil(E)), "D": D}


def _ceil_to(x: Fraction, scale: int) -> Fraction:
    """Smallest multiple of 1/scale strictly above x."""
    q = x * scale
    f = math.floor(q)
    return Fraction(f + 1, scale)


def _floor_below(x: Fraction, scale: int) -> Fraction:
    """Largest multiple of 1/scale strictly below x."""
    q = x * scale
    c = math.ceil(q)
    return Fraction(c - 1, scale)


def granularity(s: UHSystem, l: int) -> int:
    """Smallest R >= 1 with min_k min(|L|,|R|) = j/2^R, 1 <= j <= 2^(R-1)."""
    sides = [
        min(u.left_len, u.right_len) for u in s.nodes if u.node[0] == l
    ]
    if not sides:
        raise InvalidInputError(f"level {l} is not populated")
    v = min(sides)
    num, den = v.numerator, v.denominator
    if den & (den - 1):
        raise InvalidInputError("side lengths must be dyadic rationals")
    R = den.bit_length() - 1
    if R == 0:
        # v is an integer, only possible for v = 1 which cannot happen (v <= 1/2)
        raise InvalidInputError("degenerate side length")
    return R


def admissible_depth(n: int, c: float) -> int:
    """Lambda = floor(log2(n / log^c n)); natural log throughout the package."""
    if c <= 0:
        raise InvalidInputError("need c > 0")
    return int(math.floor(math.log2(n / math.log(n) ** c)))


def check_admissibility(s: UHSystem, n: int, c: float) -> dict:
    """Verify every node with l <= Lambda got a breakpoint in the built system."""
    lam = admissible_depth(n, c)
    deepest_attempted = max((u.node[0] for u in s.nodes), default=-1)
    top = min(lam, deepest_attempted)
    missing = [
        (l, k)
        for l in range(top + 1)
        for k in range(1 << l)
        if (l, k) not in s.by_node
    ]
    return {"Lambda": lam, "checked_upto": top, "missing": missing}


def uh_coefficients(f: GridFunction, s: UHSystem) -> dict[NodeId, float]:
    """Exact inner products <f, psi_lk> over the grid, root included as (-1,0)."""
    if f.exponent < s.grid_exp:
        raise InvalidInputError(
            f"grid resolution 2^-{f.exponent} coarser than the system's 2^-{s.grid_exp}"
        )
    m = 1 << f.exponent
    cell = 1.0 / m
    vals = f.values
    out: dict[NodeId, float] = {(-1, 0): float(vals.sum() * cell)}
    up = f.exponent - s.grid_exp
    for u in s.nodes:
        al, ar = u.amp
        lo = int(u.lo * (1 << s.grid_exp)) << up
        mid = int(u.split * (1 << s.grid_exp)) << up
        hi = int(u.hi * (1 << s.grid_exp)) << up
        out[u.node] = float(
            (vals[lo:mid].sum() * al + vals[mid:hi].sum() * ar) * cell
        )
    return out


def decay_bound_report(
    coeffs: Mapping[NodeId, float], s: UHSystem, h: HolderSpec
) -> dict:
    """Check |beta_lk| <= M 2^(alpha - 1/2) max(|L|,|R|)^(alpha + 1/2) per node."""
    worst = -math.inf
    worst_node = None
    for u in s.nodes:
        bound = (
            h.M
            * 2.0 ** (h.alpha - 0.5)
            * float(max(u.left_len, u.right_len)) ** (h.alpha + 0.5)
        )
        ratio = abs(coeffs[u.node]) / bound
        if ratio > worst:
            worst, worst_node = ratio, u.node
    return {"worst_ratio": worst, "worst_node": worst_node, "ok": worst <= 1.0 + 1e-12}


def uh_pinball(s: UHSystem, t: Tree) -> np.ndarray:
    """Square map from internal UH coefficients to leaf-cell heights.

    Row per sorted leaf, column per sorted rooted internal node; the entry is
    the constant value psi^B of the ancestor on the leaf's bracket (1 for the
    root function).  Derived from the two-scale structure of the system.
    """
    K = t.n_leaves
    A = np.zeros((K, K))
    cols = {node: j for j, node in enumerate(t.rooted_internal)}
    for i, leaf in enumerate(t.leaves):
        A[i, 0] = 1.0
        l, k = leaf
        for j in range(l):
            anc = (j, k >> (l - j))
            u = s.by_node.get(anc)
            if u is None:
                raise InvalidInputError(f"tree touches node {anc} outside the system")
            child_pos = (k >> (l - j - 1)) & 1
            al, ar = u.amp
            A[i, cols[anc]] = al if child_pos == 0 else ar
    return A


@dataclass(frozen=True)
class BasisPrior:
    """Finite mixture of quantile systems from Beta-shaped densities.

    Each component is (weight, (a, b)) for a Beta(a, b) density; draws pick a
    component and build its quantile breakpoints.
    """

    components: tuple[tuple[float, tuple[float, float]], ...]
    D: int
    n: int
    max_level: int | None = None

    def systems(self) -> tuple[UHSystem, ...]:
        return _basis_prior_systems(self)

    def weights(self) -> np.ndarray:
        w = np.array([wt for wt, _ in self.components], dtype=float)
        return w / w.sum()


@lru_cache(maxsize=64)
def _basis_prior_systems(prior: "BasisPrior") -> tuple[UHSystem, ...]:
    return tuple(
        build_uh(
            quantile_breakpoints(_beta_quantile(a, b), prior.D, prior.n, prior.max_level)
        )
        for _, (a, b) in prior.components
    )


def _beta_quantile(a: float, b: float) -> Callable[[float], float]:
    from scipy.stats import beta as beta_dist

    return lambda u: beta_dist.ppf(u, a, b)


def nondyadic_prior_sample(
    basis_prior: BasisPrior,
    tree_prior: PriorSpec,
    rng: np.random.Generator,
    coef_sd: float = 1.0,
) -> tuple[UHSystem, Tree, dict[NodeId, float], np.ndarray]:
    """One draw of (basis, tree, coefficients) plus the assembled histogram.

    The basis and the tree are independent; coefficients are centered
    Gaussians on the rooted internal nodes.  The histogram heights come from
    the UH pinball map and render on the breakpoint grid.
    """
    import dataclasses

    systems = basis_prior.systems()
    i = int(rng.choice(len(systems), p=basis_prior.weights()))
    s = systems[i]
    cap = min(tree_prior.L_max, s.max_full_level() + 1)
    spec = dataclasses.replace(tree_prior, L_max=cap, j0=min(tree_prior.j0, cap))
    t = sample_tree(spec, rng)
    beta = coef_sd * rng.standard_normal(t.n_leaves)
    coeffs = {node: float(b) for node, b in zip(t.rooted_internal, beta)}
    A = uh_pinball(s, t)
    heights = A @ beta
    grid = np.zeros(1 << s.grid_exp)
    for (node, h) in zip(t.leaves, heights):
        lo, hi = _leaf_cell(s, node)
        grid[lo:hi] = h
    return s, t, coeffs, grid


def _leaf_cell(s: UHSystem, leaf: NodeId) -> tuple[int, int]:
    l, k = leaf
    m = 1 << s.grid_exp
    if l == 0:
        return 0, m
    par = s.by_node[(l - 1, k >> 1)]
    lo, hi = (par.lo, par.split) if k % 2 == 0 else (par.split, par.hi)
    return int(lo * m), int(hi * m)


def complexity_certificates(
    s: UHSystem, E: int, D: int, h: HolderSpec | None = None, f: GridFunction | None = None
) -> dict:
    """Expansion and decay certificates for a weakly balanced system.

    Counts each wavelet's exact standard-Haar expansion (must use levels
    <= l + D - 1 and at most 2 (E+l) (l+D) terms) and, when a Holder-attested
    function is supplied, checks the l^(3/2) 2^(-l(alpha+1/2)) decay with the
    balance-driven constant.
    """
    rows = []
    coeffs = uh_coefficients(f, s) if f is not None else None
    for u in s.nodes:
        l = u.node[0]
        grid = GridFunction(s.render(u.node))
        ca = forward_haar(grid)
        count = 0
        max_lvl = -1
        for lvl, arr in enumerate(ca.levels):
            nz = int(np.sum(np.abs(arr) > 1e-10))
            if nz:
                count += nz
                max_lvl = lvl
        bound = 2 * (E + l) * (l + D)
        row = {
            "node": u.node,
            "expansion_terms": count,
            "max_haar_level": max_lvl,
            "expansion_ok": count <= bound and max_lvl <= l + D - 1,
        }
        if coeffs is not None and h is not None:
            decay_bound = (
                h.M
                * 2.0 ** (h.alpha - 1.0)
                * float(E + l) ** (h.alpha + 0.5)
                * 2.0 ** (-(l + D) * (h.alpha + 0.5))
            )
            row["decay_ok"] = abs(coeffs[u.node]) <= decay_bound + 1e-12
        rows.append(row)
    ok = all(r["expansion_ok"] for r in rows) and all(
        r.get("decay_ok", True) for r in rows
    )
    return {"rows": rows, "ok": ok}


def projection_bias(f: GridFunction, s: UHSystem, lam: int) -> float:
    """Exact sup-norm distance of f to its L2 projection on levels <= lam."""
    coeffs = uh_coefficients(f, s)
    m = 1 << f.exponent
    proj = np.full(m, coeffs[(-1, 0)])
    up = f.exponent - s.grid_exp
    for u in s.nodes:
        if u.node[0] > lam:
            continue
        al, ar = u.amp
        lo = int(u.lo * (1 << s.grid_exp)) << up
        mid = int(u.split * (1 << s.grid_exp)) << up
        hi = int(u.hi * (1 << s.grid_exp)) << up
        proj[lo:mid] += coeffs[u.node] * al
        proj[mid:hi] += coeffs[u.node] * ar
    return float(np.max(np.abs(f.values - proj)))
