"""The internal/external coefficient duality for a tree.

A tree's K leaf heights and its K internal wavelet coefficients (root
included) are linked by the square pinball matrix A: heights = A @ coeffs.
Each row encodes a leaf's ancestor chain with weights +-2^{j/2}; the product
A A' is exactly diag(2^l) over the leaves, which the module exploits to avoid
general matrix inversion throughout.
"""

from __future__ import annotations

import io
import csv
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import InvalidInputError
from .trees import NodeId, Tree, children, node_index, prune_deepest_rightmost

__all__ = [
    "PinballMatrix",
    "CovarianceSpec",
    "CoefCovariance",
    "build_pinball",
    "internal_to_external",
    "external_to_internal",
    "covariance",
    "spectrum_checks",
]


def _ancestor_chain(leaf: NodeId) -> list[tuple[NodeId, float]]:
    """(ancestor, signed weight) pairs for a leaf row, root excluded."""
    l, k = leaf
    out = []
    for j in range(l):
        anc = (j, k >> (l - j))
        child_pos = k >> (l - j - 1)
        sign = -1.0 if child_pos % 2 == 0 else 1.0
        out.append((anc, sign * 2.0 ** (j / 2.0)))
    return out


@dataclass(frozen=True)
class PinballMatrix:
    """Dense K x K change of basis between leaf heights and wavelet coefficients.

    Rows follow the sorted leaves, columns the sorted rooted internal nodes
    (ascending index 2^l + k, root first).
    """

    tree: Tree
    entries: np.ndarray

    @property
    def K(self) -> int:
        return len(self.entries)

    @cached_property
    def leaf_levels(self) -> np.ndarray:
        return np.array([l for l, _ in self.tree.leaves])

    @cached_property
    def diag(self) -> np.ndarray:
        """Diagonal of A A', exactly 2^l per leaf."""
        return 2.0 ** self.leaf_levels.astype(float)

    def gram(self) -> np.ndarray:
        """A' A (not diagonal except for flat trees)."""
        return self.entries.T @ self.entries

    def inv(self) -> np.ndarray:
        """A^{-1} = A' D^{-1}, from A A' = D."""
        return self.entries.T / self.diag[None, :]

    def gram_inv(self) -> np.ndarray:
        """(A' A)^{-1} = A' D^{-2} A without a general solve."""
        return (self.entries.T / self.diag[None, :] ** 2) @ self.entries

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["row", "col", "value"])
        for i in range(self.K):
            for j in range(self.K):
                w.writerow([i, j, "%.17g" % self.entries[i, j]])
        return buf.getvalue()


def build_pinball(t: Tree) -> PinballMatrix:
    """Assemble the pinball matrix of a tree."""
    cols = {node: j for j, node in enumerate(t.rooted_internal)}
    K = len(cols)
    A = np.zeros((K, K))
    for i, leaf in enumerate(t.leaves):
        A[i, 0] = 1.0
        for anc, wgt in _ancestor_chain(leaf):
            A[i, cols[anc]] = wgt
    A.flags.writeable = False
    return PinballMatrix(t, A)


def internal_to_external(A: PinballMatrix, beta: np.ndarray) -> np.ndarray:
    """Histogram heights A @ beta of the internal coefficient vector."""
    beta = np.asarray(beta, dtype=float)
    if beta.shape[-1] != A.K:
        raise InvalidInputError(f"expected length {A.K}, got {beta.shape[-1]}")
    return beta @ A.entries.T


def external_to_internal(A: PinballMatrix, heights: np.ndarray) -> np.ndarray:
    """Internal coefficients A' D^{-1} @ heights; exact inverse of the forward map."""
    heights = np.asarray(heights, dtype=float)
    if heights.shape[-1] != A.K:
        raise InvalidInputError(f"expected length {A.K}, got {heights.shape[-1]}")
    return (heights / A.diag) @ A.entries


@dataclass(frozen=True)
class CovarianceSpec:
    """Coefficient-prior covariance family.

    kind: ``identity``, ``g_prior`` (g_n (A'A)^{-1}), ``ar1_external``
    (pull-back of c_n rho^{|i-j|} on leaf heights) or ``custom``.
    For ar1, ``c_n = None`` picks the smallest value with
    lambda_min(Sigma) >= 1/sqrt(log n), which needs ``n``.
    """

    kind: str = "identity"
    g_n: float | None = None
    rho: float | None = None
    c_n: float | None = None
    n: int | None = None
    matrix: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("identity", "g_prior", "ar1_external", "custom"):
            raise InvalidInputError(f"unknown covariance kind {self.kind!r}")
        if self.kind == "g_prior" and (self.g_n is None or self.g_n <= 0):
            raise InvalidInputError("g_prior needs g_n > 0")
        if self.kind == "ar1_external":
            if self.rho is None or not (0.0 < self.rho < 1.0):
                raise InvalidInputError("ar1_external needs rho in (0,1)")
            if self.c_n is None and self.n is None:
                raise InvalidInputError("ar1_external needs c_n or n to derive it")
        if self.kind == "custom" and self.matrix is None:
            raise InvalidInputError("custom covariance needs its matrix")


@dataclass(frozen=True)
class CoefCovariance:
    """Realized K x K prior covariance with its inverse and log-determinant."""

    spec: CovarianceSpec
    realized: np.ndarray
    inverse: np.ndarray
    logdet: float
    eig_min: float
    eig_max: float


def _ar1_inverse(rho: float, c_n: float, K: int) -> tuple[np.ndarray, float]:
    """Closed-form inverse and log-det of the c_n rho^{|i-j|} matrix."""
    inv = np.zeros((K, K))
    if K == 1:
        return np.array([[1.0 / c_n]]), math.log(c_n)
    r2 = rho * rho
    main = np.full(K, (1.0 + r2) / (1.0 - r2))
    main[0] = main[-1] = 1.0 / (1.0 - r2)
    off = -rho / (1.0 - r2)
    inv[np.arange(K), np.arange(K)] = main
    inv[np.arange(K - 1), np.arange(1, K)] = off
    inv[np.arange(1, K), np.arange(K - 1)] = off
    logdet = K * math.log(c_n) + (K - 1) * math.log1p(-r2)
    return inv / c_n, logdet


def covariance(t: Tree, spec: CovarianceSpec) -> CoefCovariance:
    """Realize a covariance spec on a tree's rooted internal coordinates."""
    A = None
    K = t.n_leaves
    if spec.kind == "identity":
        realized = np.eye(K)
        inverse = np.eye(K)
        logdet = 0.0
    elif spec.kind == "g_prior":
        A = build_pinball(t)
        realized = spec.g_n * A.gram_inv()
        inverse = A.gram() / spec.g_n
        # eigenvalues of A'A are the leaf weights 2^l
        logdet = K * math.log(spec.g_n) - math.log(2.0) * float(A.leaf_levels.sum())
    elif spec.kind == "ar1_external":
        A = build_pinball(t)
        c_n = spec.c_n if spec.c_n is not None else _auto_ar1_scale(A, spec)
        tilde = c_n * spec.rho ** np.abs(np.subtract.outer(np.arange(K), np.arange(K)))
        ainv = A.inv()
        realized = ainv @ tilde @ ainv.T
        tilde_inv, tilde_logdet = _ar1_inverse(spec.rho, c_n, K)
        inverse = A.entries.T @ tilde_inv @ A.entries
        logdet = tilde_logdet - math.log(2.0) * float(A.leaf_levels.sum())
    else:
        realized = np.asarray(spec.matrix, dtype=float)
        if realized.shape != (K, K):
            raise InvalidInputError(f"custom matrix must be {K}x{K}")
        if not np.allclose(realized, realized.T, atol=1e-12):
            raise InvalidInputError("custom covariance must be symmetric")
        eigs = np.linalg.eigvalsh(realized)
        if eigs.min() <= 0:
            raise InvalidInputError("custom covariance must be positive definite")
        inverse = np.linalg.inv(realized)
        logdet = float(np.linalg.slogdet(realized)[1])
    eigs = np.linalg.eigvalsh(realized)
    return CoefCovariance(
        spec, realized, inverse, logdet, float(eigs.min()), float(eigs.max())
    )


def _auto_ar1_scale(A: PinballMatrix, spec: CovarianceSpec) -> float:
    """Smallest c_n with lambda_min(Sigma) >= 1/sqrt(log n); Sigma is linear in c_n."""
    tilde1 = spec.rho ** np.abs(
        np.subtract.outer(np.arange(A.K), np.arange(A.K))
    )
    ainv = A.inv()
    unit = ainv @ tilde1 @ ainv.T
    lam_min = float(np.linalg.eigvalsh(unit).min())
    target = 1.0 / math.sqrt(math.log(spec.n))
    return target / lam_min


def render_histogram(t: Tree, heights: np.ndarray, exponent: int | None = None) -> np.ndarray:
    """Grid values of the step function with the given height per sorted leaf."""
    g = t.depth if exponent is None else exponent
    if g < t.depth:
        raise InvalidInputError("grid exponent coarser than the tree's leaves")
    out = np.empty(1 << g)
    for (l, k), h in zip(t.leaves, heights):
        out[k << (g - l) : (k + 1) << (g - l)] = h
    return out


def histogram_coeffs(t: Tree, beta: np.ndarray, max_level: int) -> "CoeffArray":
    """CoeffArray whose Haar synthesis equals the pinball histogram A @ beta.

    The pinball convention weights left children negatively while the Haar
    mother wavelet is positive on the left half, so detail coefficients flip
    sign crossing between the two representations.
    """
    from .haar import CoeffArray

    flat = np.zeros(1 << max_level)
    for node, b in zip(t.rooted_internal, np.asarray(beta, dtype=float)):
        sign = 1.0 if node == (-1, 0) else -1.0
        flat[node_index(node)] = sign * b
    return CoeffArray.from_flat(flat)


def spectrum_checks(t: Tree) -> dict:
    """Numerical verification of the pinball matrix's spectral identities.

    Checks (i) the eigenvalues of A'A equal the multiset {2^l} over leaves,
    (ii) the recursive block structure of A'A under pruning the deepest
    rightmost internal node, (iii) the diagonal of A'A, which is the leaf
    count for the root column and 2^l x (number of descendant leaves) for an
    internal node.  Returns the per-check deviations.
    """
    if t.n_leaves < 2:
        raise InvalidInputError("spectrum checks need at least one internal node")
    A = build_pinball(t)
    gram = A.gram()
    eigs = np.sort(np.linalg.eigvalsh(gram))
    expected = np.sort(A.diag)
    dev_eigs = float(np.max(np.abs(eigs - expected)))

    tm, removed = prune_deepest_rightmost(t)
    Am = build_pinball(tm)
    gm = Am.gram()
    K = A.K
    block = gram[: K - 1, : K - 1]
    # v is the deleted leaf row of A minus its last column
    row = [i for i, leaf in enumerate(t.leaves) if leaf == children(removed)[0]][0]
    v = A.entries[row, : K - 1]
    dev_block = max(
        float(np.max(np.abs(block - (gm + np.outer(v, v))))),
        float(np.max(np.abs(gram[: K - 1, K - 1]))),
        abs(gram[K - 1, K - 1] - 2.0 ** (removed[0] + 1)),
    )

    diag = np.diag(gram)
    expected_diag = np.empty(K)
    expected_diag[0] = A.K
    for j, node in enumerate(t.rooted_internal[1:], start=1):
        nl, nk = node
        n_desc = sum(
            1 for l, k in t.leaves if l > nl and (k >> (l - nl)) == nk
        )
        expected_diag[j] = 2.0**nl * n_desc
    dev_diag = float(np.max(np.abs(diag - expected_diag)))

    return {
        "eigenvalue_deviation": dev_eigs,
        "pruning_block_deviation": dev_block,
        "diagonal_deviation": dev_diag,
        "max_deviation": max(dev_eigs, dev_block, dev_diag),
    }
