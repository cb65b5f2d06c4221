"""Haar multiscale representations: transforms, norms, function classes.

Functions live on the unit interval as step functions at dyadic resolution
2^-L.  Their sequence-space form is a :class:`CoeffArray` holding the mean
coefficient (the "root") plus detail coefficients for levels 0..L-1.  All
sup-norms in this package are evaluated exactly on the dyadic grid, which is
lossless because every in-scope function is piecewise constant there.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "CoeffArray",
    "GridFunction",
    "HolderSpec",
    "AdmissibleWeights",
    "forward_haar",
    "inverse_haar",
    "ell_inf_distance",
    "multiscale_norm",
    "holder_membership",
    "level_projection",
    "self_similarity_check",
    "make_test_function",
]

_SQRT2 = math.sqrt(2.0)


def _readonly(a: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(np.asarray(a, dtype=float))
    out.flags.writeable = False
    return out


def _check_power_of_two(m: int) -> int:
    if m < 1 or m & (m - 1):
        raise ValueError(f"length {m} is not a power of two")
    return m.bit_length() - 1


@dataclass(frozen=True)
class GridFunction:
    """Step function on dyadic cells (k 2^-L, (k+1) 2^-L], k = 0..2^L-1."""

    values: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", _readonly(self.values))
        _check_power_of_two(len(self.values))

    @property
    def exponent(self) -> int:
        """L such that the grid has 2^L cells."""
        return len(self.values).bit_length() - 1

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    def to_json(self) -> str:
        return json.dumps({"kind": "grid_function", "values": list(self.values)})

    @classmethod
    def from_json(cls, text: str) -> "GridFunction":
        obj = json.loads(text)
        if obj.get("kind") != "grid_function":
            raise ValueError("not a serialized GridFunction")
        return cls(np.array(obj["values"], dtype=float))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["role", "l", "k", "value"])
        L = self.exponent
        for k, v in enumerate(self.values):
            w.writerow(["cell", L, k, "%.17g" % v])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "GridFunction":
        rows = _read_csv_rows(text)
        cells = [(int(k), float(v)) for role, l, k, v in rows if role == "cell"]
        if not cells:
            raise ValueError("no grid cells in CSV")
        cells.sort()
        return cls(np.array([v for _, v in cells]))


@dataclass(frozen=True)
class CoeffArray:
    """Multiscale coefficient vector: root mean plus levels 0..L-1 of details.

    Level l holds exactly 2^l coefficients; the total entry count including
    the root is 2^L.  Instances are immutable.
    """

    root: float
    levels: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "root", float(self.root))
        lv = tuple(_readonly(a) for a in self.levels)
        for l, a in enumerate(lv):
            if len(a) != 1 << l:
                raise ValueError(f"level {l} holds {len(a)} entries, expected {1 << l}")
        object.__setattr__(self, "levels", lv)

    @property
    def max_level(self) -> int:
        return len(self.levels)

    @classmethod
    def zeros(cls, max_level: int) -> "CoeffArray":
        return cls(0.0, tuple(np.zeros(1 << l) for l in range(max_level)))

    def to_flat(self) -> np.ndarray:
        """Canonical flat layout: index 0 is the root, node (l,k) sits at 2^l+k."""
        out = np.empty(1 << self.max_level)
        out[0] = self.root
        for l, a in enumerate(self.levels):
            out[1 << l : 1 << (l + 1)] = a
        return out

    @classmethod
    def from_flat(cls, flat: np.ndarray) -> "CoeffArray":
        flat = np.asarray(flat, dtype=float)
        L = _check_power_of_two(len(flat))
        return cls(float(flat[0]), tuple(flat[1 << l : 1 << (l + 1)] for l in range(L)))

    def value(self, l: int, k: int) -> float:
        if l == -1:
            return self.root
        return float(self.levels[l][k])

    def pad_to(self, max_level: int) -> "CoeffArray":
        if max_level < self.max_level:
            raise ValueError("pad_to cannot shrink a CoeffArray")
        extra = tuple(np.zeros(1 << l) for l in range(self.max_level, max_level))
        return CoeffArray(self.root, self.levels + extra)

    def to_json(self) -> str:
        return json.dumps(
            {"kind": "coeff_array", "root": self.root, "levels": [list(a) for a in self.levels]}
        )

    @classmethod
    def from_json(cls, text: str) -> "CoeffArray":
        obj = json.loads(text)
        if obj.get("kind") != "coeff_array":
            raise ValueError("not a serialized CoeffArray")
        return cls(obj["root"], tuple(np.array(a, dtype=float) for a in obj["levels"]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["role", "l", "k", "value"])
        w.writerow(["root", -1, 0, "%.17g" % self.root])
        for l, a in enumerate(self.levels):
            for k, v in enumerate(a):
                w.writerow(["detail", l, k, "%.17g" % v])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "CoeffArray":
        rows = _read_csv_rows(text)
        root = 0.0
        details: dict[tuple[int, int], float] = {}
        for role, l, k, v in rows:
            if role == "root":
                root = float(v)
            elif role == "detail":
                details[(int(l), int(k))] = float(v)
            else:
                raise ValueError(f"unexpected row role {role!r} for CoeffArray")
        L = 0 if not details else max(l for l, _ in details) + 1
        levels = tuple(
            np.array([details.get((l, k), 0.0) for k in range(1 << l)]) for l in range(L)
        )
        return cls(root, levels)


def _read_csv_rows(text: str) -> list[tuple[str, str, str, str]]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header != ["role", "l", "k", "value"]:
        raise ValueError("expected header role,l,k,value")
    return [(r[0], r[1], r[2], r[3]) for r in reader if r]


@dataclass(frozen=True)
class HolderSpec:
    """Smoothness class parameters: exponent alpha in (0,1], radius M > 0."""

    alpha: float
    M: float

    def __post_init__(self) -> None:
        if not (0.0 < self.alpha <= 1.0):
            raise ValueError(f"alpha must lie in (0,1], got {self.alpha}")
        if not self.M > 0.0:
            raise ValueError(f"M must be positive, got {self.M}")


class AdmissibleWeights:
    """Monotone weight sequence w_l >= 1 with w_l / sqrt(l) diverging.

    The root coefficient is weighted as level 0.  The divergence condition is
    checked on an evaluated prefix, which is all a finite run can see.
    """

    def __init__(self, fn: Callable[[int], float] | None = None, check_upto: int = 64):
        self._fn = fn if fn is not None else (lambda l: float(max(1, l)))
        self._validate(check_upto)

    def _validate(self, upto: int) -> None:
        vals = [self._fn(l) for l in range(upto)]
        if any(v < 1.0 for v in vals):
            raise ValueError("weights must satisfy w_l >= 1")
        if any(b < a for a, b in zip(vals, vals[1:])):
            raise ValueError("weights must be monotone non-decreasing")
        ratios = [vals[l] / math.sqrt(l) for l in range(1, upto)]
        if ratios and ratios[-1] <= ratios[0]:
            raise ValueError("w_l / sqrt(l) does not grow on the evaluated prefix")

    def weight(self, l: int) -> float:
        return self._fn(max(0, l))

    def array(self, max_level: int) -> np.ndarray:
        return np.array([self._fn(l) for l in range(max(1, max_level))])


def forward_haar(g: GridFunction) -> CoeffArray:
    """Exact Haar analysis of a step function given by its cell values."""
    L = g.exponent
    a = g.values * 2.0 ** (-L / 2.0)
    levels: list[np.ndarray] = []
    for _ in range(L):
        s = (a[0::2] + a[1::2]) / _SQRT2
        d = (a[0::2] - a[1::2]) / _SQRT2
        levels.append(d)
        a = s
    levels.reverse()
    return CoeffArray(float(a[0]), tuple(levels))


def inverse_haar(c: CoeffArray) -> GridFunction:
    """Synthesize the step function of a coefficient array on its dyadic grid."""
    a = np.array([c.root])
    for d in c.levels:
        nxt = np.empty(2 * len(a))
        nxt[0::2] = (a + d) / _SQRT2
        nxt[1::2] = (a - d) / _SQRT2
        a = nxt
    return GridFunction(a * 2.0 ** (c.max_level / 2.0))


def inverse_haar_flat(flats: np.ndarray) -> np.ndarray:
    """Synthesis of canonical flat coefficient rows to grid values, batched.

    Accepts shape (m, 2^L) or (2^L,); returns matching grid-value rows.
    """
    arr = np.asarray(flats, dtype=float)
    single = arr.ndim == 1
    flats2 = np.atleast_2d(arr)
    L = _check_power_of_two(flats2.shape[1])
    a = flats2[:, :1].copy()
    for l in range(L):
        d = flats2[:, 1 << l : 1 << (l + 1)]
        nxt = np.empty((flats2.shape[0], 2 << l))
        nxt[:, 0::2] = (a + d) / _SQRT2
        nxt[:, 1::2] = (a - d) / _SQRT2
        a = nxt
    out = a * 2.0 ** (L / 2.0)
    return out[0] if single else out


def _common_level(a: CoeffArray, b: CoeffArray) -> tuple[CoeffArray, CoeffArray]:
    L = max(a.max_level, b.max_level)
    return a.pad_to(L), b.pad_to(L)


def ell_inf_distance(a: CoeffArray, b: CoeffArray) -> float:
    """Multiscale ell-infinity loss |dr| + sum_l 2^{l/2} max_k |d_lk|.

    Dominates the grid sup-norm of the difference.
    """
    a, b = _common_level(a, b)
    total = abs(a.root - b.root)
    for l in range(a.max_level):
        total += 2.0 ** (l / 2.0) * float(np.max(np.abs(a.levels[l] - b.levels[l])))
    return total


def multiscale_norm(a: CoeffArray, w: AdmissibleWeights) -> float:
    """Weighted sup-norm sup_l max_k |a_lk| / w_l, root weighted as level 0."""
    out = abs(a.root) / w.weight(0)
    for l in range(a.max_level):
        out = max(out, float(np.max(np.abs(a.levels[l]))) / w.weight(l))
    return out


def holder_membership(c: CoeffArray, h: HolderSpec) -> bool:
    """Whether 2^{l(1/2+alpha)} |beta_lk| <= M at every stored node and |root| <= M."""
    if abs(c.root) > h.M:
        return False
    for l in range(c.max_level):
        bound = h.M * 2.0 ** (-l * (0.5 + h.alpha))
        if np.max(np.abs(c.levels[l])) > bound:
            return False
    return True


def level_projection(c: CoeffArray, j: int) -> CoeffArray:
    """Keep the root and levels < j, zero levels >= j."""
    if not (0 <= j <= c.max_level):
        raise ValueError(f"projection level {j} outside [0, {c.max_level}]")
    levels = tuple(
        c.levels[l] if l < j else np.zeros(1 << l) for l in range(c.max_level)
    )
    return CoeffArray(c.root, levels)


def _tail_sup(c: CoeffArray, j: int) -> float:
    """Exact grid sup-norm of the detail tail at levels >= j."""
    tail = CoeffArray(0.0, tuple(
        np.zeros(1 << l) if l < j else c.levels[l] for l in range(c.max_level)
    ))
    return inverse_haar(tail).sup_norm()


def self_similarity_check(c: CoeffArray, h: HolderSpec, eps: float, j0: int) -> bool:
    """Whether the projection remainder stays >= eps 2^{-j alpha} for j0 <= j < L.

    The range stops at L-1: at j = L the stored tail is empty, so the
    condition is only meaningful for levels the array actually represents.
    Boundary cases that meet the bound with equality pass (a 1e-12 relative
    slack absorbs synthesis roundoff).
    """
    for j in range(j0, c.max_level):
        if _tail_sup(c, j) < eps * 2.0 ** (-j * h.alpha) * (1.0 - 1e-12):
            return False
    return True


def _cusp_cell_averages(alpha: float, L: int) -> np.ndarray:
    # Exact cell averages of x -> |x - 1/2|^alpha via the antiderivative
    # of |t|^alpha, sign(t) |t|^{alpha+1} / (alpha+1).
    edges = np.linspace(-0.5, 0.5, (1 << L) + 1)
    anti = np.sign(edges) * np.abs(edges) ** (alpha + 1.0) / (alpha + 1.0)
    return np.diff(anti) * (1 << L)


def make_test_function(
    kind: str, h: HolderSpec, L: int, spike_level: int | None = None
) -> CoeffArray:
    """Canonical truths: spike, full_decay, single_branch_decay, cusp.

    All returned arrays have zero root.  The spike needs ``spike_level``;
    spike and decay kinds sit exactly on the Holder boundary, the cusp is the
    Haar analysis of exact cell averages of M(|x-1/2|^alpha - c0) with c0
    chosen to zero-mean the samples.
    """
    if kind == "spike":
        if spike_level is None or not (0 <= spike_level < L):
            raise ValueError("spike requires spike_level in [0, L)")
        c = CoeffArray.zeros(L).to_flat()
        c[1 << spike_level] = h.M * 2.0 ** (-spike_level * (0.5 + h.alpha))
        return CoeffArray.from_flat(c)
    if kind == "full_decay":
        return CoeffArray(
            0.0,
            tuple(np.full(1 << l, h.M * 2.0 ** (-l * (0.5 + h.alpha))) for l in range(L)),
        )
    if kind == "single_branch_decay":
        levels = []
        for l in range(L):
            a = np.zeros(1 << l)
            a[0] = h.M * 2.0 ** (-l * (0.5 + h.alpha))
            levels.append(a)
        return CoeffArray(0.0, tuple(levels))
    if kind == "cusp":
        vals = h.M * _cusp_cell_averages(h.alpha, L)
        vals = vals - vals.mean()
        return forward_haar(GridFunction(vals))
    raise ValueError(f"unknown test-function kind {kind!r}")
