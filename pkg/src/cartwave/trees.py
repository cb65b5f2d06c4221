"""Dyadic binary trees, tree priors, and the surgeries used by diagnostics.

Nodes are ``(l, k)`` pairs with layer ``l >= 0`` and position ``0 <= k < 2^l``
(the coefficient root ``(-1, 0)`` never appears in a tree's internal set; it
is implied).  A tree is its set of internal nodes; heredity makes the full
binary structure, leaves included, derivable.  Node priority everywhere is
the index ``2^l + k``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Iterator, Sequence

import numpy as np

from ._poly import ScaledPoly
from .errors import InvalidInputError, SamplingFailureError

__all__ = [
    "NodeId",
    "Tree",
    "PriorSpec",
    "node_index",
    "parent",
    "children",
    "catalan",
    "flat_tree",
    "prune_deepest_rightmost",
    "extend_to_node",
    "enumerate_trees",
    "sample_tree",
    "log_prior_mass",
    "log_leaf_count_weights",
]

NodeId = tuple[int, int]

ENUMERATION_CAP = 5


def node_index(node: NodeId) -> int:
    l, k = node
    return 0 if l == -1 else (1 << l) + k


def parent(node: NodeId) -> NodeId:
    l, k = node
    if l <= 0:
        raise InvalidInputError(f"node {node} has no parent")
    return (l - 1, k >> 1)


def children(node: NodeId) -> tuple[NodeId, NodeId]:
    l, k = node
    return (l + 1, 2 * k), (l + 1, 2 * k + 1)


def _check_node(node: NodeId) -> None:
    l, k = node
    if l < 0 or not (0 <= k < 1 << l):
        raise InvalidInputError(f"invalid node {node}")


@dataclass(frozen=True)
class Tree:
    """Full binary tree over dyadic nodes, stored as its internal-node set.

    Heredity (every internal node's parent is internal) and the depth cap are
    enforced at construction; leaves, depth and the leaf count K are derived.
    """

    internal: frozenset[NodeId]
    max_depth_cap: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "internal", frozenset(self.internal))
        for node in self.internal:
            _check_node(node)
            if node[0] > self.max_depth_cap - 1:
                raise InvalidInputError(
                    f"internal node {node} exceeds depth cap {self.max_depth_cap}"
                )
            if node[0] >= 1 and parent(node) not in self.internal:
                raise InvalidInputError(f"heredity violated at {node}")

    @cached_property
    def internal_sorted(self) -> tuple[NodeId, ...]:
        return tuple(sorted(self.internal, key=node_index))

    @cached_property
    def leaves(self) -> tuple[NodeId, ...]:
        if not self.internal:
            return ((0, 0),)
        out = [
            c
            for node in self.internal
            for c in children(node)
            if c not in self.internal
        ]
        return tuple(sorted(out, key=node_index))

    @cached_property
    def rooted_internal(self) -> tuple[NodeId, ...]:
        """Internal nodes plus the implied root (-1, 0), in index order."""
        return ((-1, 0),) + self.internal_sorted

    @property
    def n_leaves(self) -> int:
        return len(self.internal) + 1

    @property
    def depth(self) -> int:
        return 0 if not self.internal else max(l for l, _ in self.internal) + 1

    def contains_internal(self, node: NodeId) -> bool:
        return node in self.internal

    def fills_layers(self, j0: int) -> bool:
        return all(
            (l, k) in self.internal for l in range(j0) for k in range(1 << l)
        )

    def prunable(self) -> list[NodeId]:
        """Internal nodes whose both children are leaves."""
        return [
            node
            for node in self.internal
            if all(c not in self.internal for c in children(node))
        ]

    def to_json(self) -> str:
        return json.dumps(
            {
                "internal": [list(n) for n in self.internal_sorted],
                "max_depth_cap": self.max_depth_cap,
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "Tree":
        obj = json.loads(text)
        return cls(
            frozenset((int(l), int(k)) for l, k in obj["internal"]),
            int(obj["max_depth_cap"]),
        )


def catalan(K: int) -> int:
    """Catalan number (2K)! / ((K+1)! K!); counts full binary trees with K+1 leaves."""
    if K < 0:
        raise InvalidInputError("catalan requires K >= 0")
    return math.comb(2 * K, K) // (K + 1)


def flat_tree(d: int, max_depth_cap: int) -> Tree:
    """All nodes of layers < d internal: the regular 2^d-bin histogram tree."""
    if not (0 <= d <= max_depth_cap):
        raise InvalidInputError(f"flat-tree depth {d} outside [0, {max_depth_cap}]")
    return Tree(
        frozenset((l, k) for l in range(d) for k in range(1 << l)), max_depth_cap
    )


def prune_deepest_rightmost(t: Tree) -> tuple[Tree, NodeId]:
    """Turn the internal node of highest index 2^l + k into a leaf."""
    if not t.internal:
        raise InvalidInputError("cannot prune a tree with no internal nodes")
    target = max(t.internal, key=node_index)
    return Tree(t.internal - {target}, t.max_depth_cap), target


def extend_to_node(t: Tree, target: NodeId) -> Tree:
    """Smallest supertree of t that splits ``target``.

    Adds the missing suffix of the root-to-target chain; heredity makes this
    minimal in node count among supertrees containing ``target``.
    """
    _check_node(target)
    if target[0] > t.max_depth_cap - 1:
        raise InvalidInputError(
            f"target {target} deeper than cap {t.max_depth_cap} allows"
        )
    if target in t.internal:
        return t
    chain = [target]
    node = target
    while node[0] > 0:
        node = parent(node)
        chain.append(node)
    added = frozenset(n for n in chain if n not in t.internal)
    return Tree(t.internal | added, t.max_depth_cap)


def _shapes(l: int, k: int, budget: int) -> Iterator[frozenset[NodeId]]:
    yield frozenset()
    if budget >= 1:
        for left in _shapes(l + 1, 2 * k, budget - 1):
            for right in _shapes(l + 1, 2 * k + 1, budget - 1):
                yield left | right | {(l, k)}


def enumerate_trees(max_depth_cap: int) -> list[Tree]:
    """All full binary trees of depth <= cap, without duplicates."""
    if max_depth_cap > ENUMERATION_CAP:
        raise InvalidInputError(
            f"enumeration is guarded at depth {ENUMERATION_CAP}, got {max_depth_cap}"
        )
    return [Tree(s, max_depth_cap) for s in _shapes(0, 0, max_depth_cap)]


@dataclass(frozen=True)
class PriorSpec:
    """Tree prior configuration.

    kind is one of ``gw`` (Galton-Watson with split probability
    Gamma^(-l^exponent)), ``cond_uniform`` (leaf count drawn with the
    truncated Poisson-style mass, shape uniform given the count) or
    ``exponential`` (mass proportional to exp(-c K log n)).  ``j0`` layers
    are forced: every tree in the support splits all nodes with l < j0.
    ``n`` feeds the exponential penalty; it defaults to 2^L_max.
    """

    kind: str
    L_max: int
    gamma: float | None = None
    exponent: float = 1.0
    lam: float | None = None
    c: float | None = None
    j0: int = 0
    n: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("gw", "cond_uniform", "exponential"):
            raise InvalidInputError(f"unknown prior kind {self.kind!r}")
        if self.L_max < 0 or not (0 <= self.j0 <= self.L_max):
            raise InvalidInputError("need 0 <= j0 <= L_max")
        if self.kind == "gw":
            if self.gamma is None or self.gamma <= 1.0:
                raise InvalidInputError("gw prior needs gamma > 1")
            if self.exponent < 1.0:
                raise InvalidInputError("gw exponent must be >= 1")
        if self.kind == "cond_uniform" and (self.lam is None or self.lam <= 0.0):
            raise InvalidInputError("cond_uniform prior needs lambda > 0")
        if self.kind == "exponential" and (self.c is None or self.c <= 0.0):
            raise InvalidInputError("exponential prior needs c > 0")

    @property
    def effective_n(self) -> int:
        return self.n if self.n is not None else 1 << self.L_max

    def split_prob(self, l: int) -> float:
        """GW cut probability at layer l, with forced layers and the depth cap."""
        if self.kind != "gw":
            raise InvalidInputError("split_prob only applies to the gw prior")
        if l < self.j0:
            return 1.0
        if l >= self.L_max:
            return 0.0
        return float(self.gamma ** (-float(l) ** self.exponent))


def log_leaf_count_weights(L_max: int, j0: int = 0) -> np.ndarray:
    """log of the number of depth-capped trees filling j0 layers, by leaf count.

    Entry K holds log #{full binary trees of depth <= L_max that split all
    layers < j0 and have K leaves}; index 0 is unused (-inf).
    """
    return _log_leaf_count_weights_cached(L_max, j0)


@lru_cache(maxsize=None)
def _subtree_count_poly(budget: int) -> ScaledPoly:
    if budget == 0:
        return ScaledPoly.monomial(1)
    q = _subtree_count_poly(budget - 1)
    return ScaledPoly.monomial(1).add(q.mul(q))


@lru_cache(maxsize=None)
def _log_leaf_count_weights_cached(L_max: int, j0: int) -> np.ndarray:
    if j0 == 0:
        root = _subtree_count_poly(L_max)
    else:
        # Forced layers pin 2^j0 subtrees below layer j0, each depth-capped
        # at L_max - j0.
        sub = _subtree_count_poly(L_max - j0)
        root = ScaledPoly.monomial(0)
        for _ in range(1 << j0):
            root = root.mul(sub)
    mindeg, logc = root.log_coeff_array()
    out = np.full((1 << L_max) + 1, -math.inf)
    out[mindeg : mindeg + len(logc)] = logc
    out.flags.writeable = False
    return out


def _log_cond_uniform_unnorm(K: int, lam: float) -> float:
    # lambda^K / ((e^lambda - 1) K! C_{K-1}) without the depth-cap normalizer.
    log_cat = math.lgamma(2 * K - 1) - math.lgamma(K + 1) - math.lgamma(K) if K >= 1 else 0.0
    norm = math.log(math.expm1(lam)) if lam < 500 else lam
    return K * math.log(lam) - norm - math.lgamma(K + 1) - log_cat


@lru_cache(maxsize=None)
def _cond_uniform_log_norm(lam: float, L_max: int, j0: int) -> float:
    logN = log_leaf_count_weights(L_max, j0)
    terms = [
        _log_cond_uniform_unnorm(K, lam) + logN[K]
        for K in range(1, len(logN))
        if math.isfinite(logN[K])
    ]
    return _logsumexp(terms)


@lru_cache(maxsize=None)
def _exponential_log_norm(c: float, log_n: float, L_max: int, j0: int) -> float:
    logN = log_leaf_count_weights(L_max, j0)
    terms = [
        -c * K * log_n + logN[K]
        for K in range(1, len(logN))
        if math.isfinite(logN[K])
    ]
    return _logsumexp(terms)


def _logsumexp(terms: Sequence[float]) -> float:
    m = max(terms)
    if not math.isfinite(m):
        return -math.inf
    return m + math.log(sum(math.exp(t - m) for t in terms))


def log_prior_mass(t: Tree, spec: PriorSpec) -> float:
    """Exact log prior probability of a tree, normalized over the capped support.

    Trees violating the forced layers raise; trees of prior probability zero
    (an unsplit root under the GW schedule, say) return -inf.
    """
    if t.max_depth_cap > spec.L_max or t.depth > spec.L_max:
        raise InvalidInputError("tree exceeds the prior's depth cap")
    if not t.fills_layers(spec.j0):
        raise InvalidInputError(f"tree does not fill the {spec.j0} forced layers")
    K = t.n_leaves
    if spec.kind == "gw":
        out = 0.0
        for l, _ in t.internal:
            if l >= spec.j0:
                p = spec.split_prob(l)
                out += math.log(p) if p > 0.0 else -math.inf
        for l, _ in t.leaves:
            if spec.j0 <= l < spec.L_max:
                p = spec.split_prob(l)
                out += math.log1p(-p) if p < 1.0 else -math.inf
        return out
    if spec.kind == "cond_uniform":
        return _log_cond_uniform_unnorm(K, spec.lam) - _cond_uniform_log_norm(
            spec.lam, spec.L_max, spec.j0
        )
    return -spec.c * K * math.log(spec.effective_n) - _exponential_log_norm(
        spec.c, math.log(spec.effective_n), spec.L_max, spec.j0
    )


def log_prior_mass_unnormalized(t: Tree, spec: PriorSpec) -> float:
    """Prior log-mass up to the spec's global normalizer (cheap for MCMC ratios)."""
    if spec.kind == "gw":
        return log_prior_mass(t, spec)
    if not t.fills_layers(spec.j0):
        return -math.inf
    if spec.kind == "cond_uniform":
        return _log_cond_uniform_unnorm(t.n_leaves, spec.lam)
    return -spec.c * t.n_leaves * math.log(spec.effective_n)


# -- sampling ---------------------------------------------------------------


def _randbelow(rng: np.random.Generator, bound: int) -> int:
    """Uniform integer in [0, bound) with exact big-int support."""
    if bound <= 0:
        raise InvalidInputError("empty range")
    nbytes = (bound.bit_length() + 7) // 8
    mask = (1 << bound.bit_length()) - 1
    while True:
        r = int.from_bytes(rng.bytes(nbytes), "big") & mask
        if r < bound:
            return r


def _uniform_shape(rng: np.random.Generator, K: int, l: int, k: int) -> set[NodeId]:
    """Uniform full binary tree shape with K leaves rooted at (l, k)."""
    if K == 1:
        return set()
    r = _randbelow(rng, catalan(K - 1))
    acc = 0
    for i in range(1, K):
        block = catalan(i - 1) * catalan(K - i - 1)
        if r < acc + block:
            left = _uniform_shape(rng, i, l + 1, 2 * k)
            right = _uniform_shape(rng, K - i, l + 1, 2 * k + 1)
            return {(l, k)} | left | right
        acc += block
    raise AssertionError("unranking walked past the Catalan total")


_REJECTION_CAP = 10**6


def _sample_gw(spec: PriorSpec, rng: np.random.Generator) -> Tree:
    import heapq

    internal: set[NodeId] = set()
    queue: list[tuple[int, NodeId]] = [(1, (0, 0))]
    while queue:
        _, node = heapq.heappop(queue)
        l, _ = node
        if l >= spec.L_max:
            continue
        if rng.random() < spec.split_prob(l):
            internal.add(node)
            for c in children(node):
                heapq.heappush(queue, (node_index(c), c))
    return Tree(frozenset(internal), spec.L_max)


def _sample_cond_uniform(spec: PriorSpec, rng: np.random.Generator) -> Tree:
    logN = log_leaf_count_weights(spec.L_max, spec.j0)
    logw = np.array(
        [
            _log_cond_uniform_unnorm(K, spec.lam) + logN[K]
            if math.isfinite(logN[K])
            else -math.inf
            for K in range(len(logN))
        ]
    )
    logw[0] = -math.inf
    probs = np.exp(logw - np.max(logw[np.isfinite(logw)]))
    probs[~np.isfinite(logw)] = 0.0
    probs /= probs.sum()
    K = int(rng.choice(len(probs), p=probs))
    for _ in range(_REJECTION_CAP):
        shape = _uniform_shape(rng, K, 0, 0)
        t = Tree(frozenset(shape), spec.L_max) if _depth_ok(shape, spec.L_max) else None
        if t is not None and t.fills_layers(spec.j0):
            return t
    raise SamplingFailureError(
        f"depth rejection exceeded {_REJECTION_CAP} retries at K={K}"
    )


def _depth_ok(shape: set[NodeId], cap: int) -> bool:
    return all(l <= cap - 1 for l, _ in shape)


def _sample_exponential(spec: PriorSpec, rng: np.random.Generator) -> Tree:
    if spec.L_max <= 4:
        trees = [
            t for t in enumerate_trees(spec.L_max) if t.fills_layers(spec.j0)
        ]
        logw = np.array([log_prior_mass_unnormalized(t, spec) for t in trees])
        probs = np.exp(logw - logw.max())
        probs /= probs.sum()
        return trees[int(rng.choice(len(trees), p=probs))]
    # Metropolis over grow/prune moves targeting the exponential mass.
    t = flat_tree(spec.j0, spec.L_max)
    cur = log_prior_mass_unnormalized(t, spec)
    iters = 2000 + 200 * spec.L_max
    for _ in range(iters):
        t, cur = _prior_mh_step(t, cur, spec, rng)
    return t


def _prior_mh_step(
    t: Tree, cur: float, spec: PriorSpec, rng: np.random.Generator
) -> tuple[Tree, float]:
    growable = [n for n in t.leaves if spec.j0 <= n[0] < spec.L_max]
    prunable = [n for n in t.prunable() if n[0] >= spec.j0]
    do_grow = bool(growable) and (not prunable or rng.random() < 0.5)
    if not growable and not prunable:
        return t, cur
    if do_grow:
        node = growable[rng.integers(len(growable))]
        prop = Tree(t.internal | {node}, spec.L_max)
        fwd = (0.5 if prunable else 1.0) / len(growable)
        back_prunable = [n for n in prop.prunable() if n[0] >= spec.j0]
        back_growable = [n for n in prop.leaves if spec.j0 <= n[0] < spec.L_max]
        back = (0.5 if back_growable else 1.0) / len(back_prunable)
    else:
        node = prunable[rng.integers(len(prunable))]
        prop = Tree(t.internal - {node}, spec.L_max)
        fwd = (0.5 if growable else 1.0) / len(prunable)
        back_growable = [n for n in prop.leaves if spec.j0 <= n[0] < spec.L_max]
        back_prunable = [n for n in prop.prunable() if n[0] >= spec.j0]
        back = (0.5 if back_prunable else 1.0) / len(back_growable)
    new = log_prior_mass_unnormalized(prop, spec)
    if math.log(rng.random()) < new - cur + math.log(back) - math.log(fwd):
        return prop, new
    return t, cur


def sample_tree(spec: PriorSpec, rng: np.random.Generator) -> Tree:
    """Draw one tree from the prior."""
    if spec.kind == "gw":
        return _sample_gw(spec, rng)
    if spec.kind == "cond_uniform":
        return _sample_cond_uniform(spec, rng)
    return _sample_exponential(spec, rng)
