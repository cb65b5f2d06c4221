"""Replicated desk-scale studies of the posterior's statistical behavior.

Five experiments: contraction-rate slopes, the sharp-rate spike probe,
credible-band coverage under self-similarity, the finite-dimensional
Bernstein-von Mises check, and the flat-tree versus CART comparison.  Every
report ships its raw per-replicate rows; aggregates are a pure function of
the rows so they can be re-derived and audited.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from scipy.stats import kstest, norm

from ._rng import stream
from .errors import InvalidInputError
from .haar import CoeffArray, HolderSpec, make_test_function
from .pinball import CovarianceSpec
from .posterior import (
    SequenceData,
    draw_sparse,
    log_marginal_node_factor,
    noise_event_holds,
    posterior_exact,
    posterior_mcmc,
    simulate,
)
from .trees import PriorSpec, Tree, node_index
from .uq import BandSpec, band_membership, compute_band, default_j0, default_vn

__all__ = [
    "ExperimentPlan",
    "ExperimentReport",
    "rate_experiment",
    "sharp_lower_probe",
    "coverage_experiment",
    "bvm_check",
    "flat_vs_cart",
    "run_experiment",
    "recompute_aggregates",
    "sparse_ell_inf_losses",
    "signal_set",
    "depth_cutoff",
    "spike_level_for",
]

EXPERIMENT_NAMES = ("rates", "sharp", "coverage", "bvm", "flat_vs_cart")


@dataclass(frozen=True)
class ExperimentPlan:
    """Shared experiment configuration; unused knobs are ignored per study."""

    name: str
    truth_kind: str = "cusp"
    alpha: float = 1.0
    M: float = 1.0
    n_grid: tuple[int, ...] = (256, 1024, 4096, 16384, 65536)
    replicates: int = 50
    draws: int = 500
    prior_kind: str = "gw"
    gw_gamma: float = 8.0
    gw_exponent: float = 1.0
    prior_c: float = 1.0
    prior_lam: float = 1.0
    j0: int = 0
    cov_kind: str = "identity"
    g_n_rule: str = "n"
    band_gamma: float = 0.05
    v_n: float | None = None
    signal_A: float = 8.0
    mcmc_iters: int = 30000
    flat_prior: str = "exp_d"
    probe_multiple: float = 0.5
    seed: int = 0

    def __post_init__(self) -> None:
        if self.name not in EXPERIMENT_NAMES:
            raise InvalidInputError(f"unknown experiment {self.name!r}")
        if list(self.n_grid) != sorted(set(self.n_grid)):
            raise InvalidInputError("n_grid must be strictly increasing")
        if self.replicates < 1:
            raise InvalidInputError("need replicates >= 1")

    def holder(self) -> HolderSpec:
        return HolderSpec(self.alpha, self.M)

    def prior_for(self, n: int, j0: int | None = None) -> PriorSpec:
        L = int(math.floor(math.log2(n)))
        j = self.j0 if j0 is None else j0
        return PriorSpec(
            self.prior_kind,
            L_max=L,
            gamma=self.gw_gamma if self.prior_kind == "gw" else None,
            exponent=self.gw_exponent,
            lam=self.prior_lam if self.prior_kind == "cond_uniform" else None,
            c=self.prior_c if self.prior_kind == "exponential" else None,
            j0=min(j, L),
            n=n,
        )

    def cov_for(self, n: int) -> CovarianceSpec:
        if self.cov_kind == "identity":
            return CovarianceSpec("identity")
        if self.cov_kind == "g_prior":
            return CovarianceSpec("g_prior", g_n=float(n))
        raise InvalidInputError(f"experiments support identity/g_prior, got {self.cov_kind}")


@dataclass
class ExperimentReport:
    name: str
    config: dict
    rows: list[dict]
    aggregates: dict
    runtime_s: float

    def raw_csv(self) -> str:
        if not self.rows:
            return ""
        cols = list(self.rows[0].keys())
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for row in self.rows:
            w.writerow([_fmt(row[c]) for c in cols])
        return buf.getvalue()

    def aggregate_json(self) -> str:
        return json.dumps(
            {"name": self.name, "config": self.config, "aggregates": self.aggregates},
            indent=2,
            sort_keys=True,
        )

    def plot_csv(self) -> str:
        """x,y,err rows for the experiment's headline curve."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["series", "x", "y", "err"])
        for series, pts in self.aggregates.get("curves", {}).items():
            for x, y, err in pts:
                w.writerow([series, _fmt(x), _fmt(y), _fmt(err)])
        return buf.getvalue()


def _fmt(v) -> str:
    if isinstance(v, float):
        return "%.17g" % v
    return str(v)


def _mean_se(xs: list[float]) -> tuple[float, float]:
    a = np.asarray(xs, dtype=float)
    if len(a) <= 1:
        return float(a.mean()) if len(a) else math.nan, math.nan
    return float(a.mean()), float(a.std(ddof=1) / math.sqrt(len(a)))


def _wilson_ci(successes: int, total: int, z: float = 1.96) -> tuple[float, float]:
    if total == 0:
        return math.nan, math.nan
    p = successes / total
    den = 1 + z**2 / total
    center = (p + z**2 / (2 * total)) / den
    half = z * math.sqrt(p * (1 - p) / total + z**2 / (4 * total**2)) / den
    return center - half, center + half


def _ols_slope(logx: np.ndarray, logy: np.ndarray) -> tuple[float, float]:
    X = np.column_stack([np.ones_like(logx), logx])
    coef, res, _, _ = np.linalg.lstsq(X, logy, rcond=None)
    fitted = X @ coef
    dof = max(1, len(logx) - 2)
    s2 = float(np.sum((logy - fitted) ** 2)) / dof
    var_slope = s2 / float(np.sum((logx - logx.mean()) ** 2))
    return float(coef[1]), math.sqrt(var_slope)


# -- loss helpers -------------------------------------------------------------


def sparse_ell_inf_losses(
    groups: list[tuple[Tree, np.ndarray]], truth: CoeffArray, L: int
) -> np.ndarray:
    """ell-infinity losses of grouped sparse draws against a truth array.

    Off-tree coordinates of a draw are zero, so each level contributes the
    larger of the truth's off-tree maximum and the on-tree error maximum.
    """
    t_flat = truth.pad_to(L).to_flat()
    level_abs = [np.abs(t_flat[1 << l : 1 << (l + 1)]) for l in range(L)]
    level_sorted = [np.argsort(seg)[::-1] for seg in level_abs]
    scale = np.array([2.0 ** (l / 2.0) for l in range(L)])
    out = []
    for t, block in groups:
        excl: dict[int, set[int]] = {}
        for l, k in t.internal:
            excl.setdefault(l, set()).add(k)
        base = np.zeros(L)
        for l in range(L):
            seg, order = level_abs[l], level_sorted[l]
            if not len(order):
                continue
            s = excl.get(l)
            if not s:
                base[l] = seg[order[0]]
                continue
            for idx in order:
                if int(idx) not in s:
                    base[l] = seg[idx]
                    break
        idx_nodes = np.array([node_index(nd) for nd in t.rooted_internal])
        lv = np.array([nd[0] for nd in t.rooted_internal])
        diffs = np.abs(block - t_flat[idx_nodes][None, :])
        loss = diffs[:, 0].copy()  # root term
        per_level = np.zeros((len(block), L))
        for l in range(L):
            cols = np.where(lv == l)[0]
            if len(cols):
                per_level[:, l] = diffs[:, cols].max(axis=1)
        loss += (np.maximum(per_level, base[None, :]) * scale[None, :]).sum(axis=1)
        out.append(loss)
    return np.concatenate(out)


def depth_cutoff(alpha: float, M: float, n: int) -> int:
    """ceil(log2((8M)^{1/(alpha+1/2)} (n/log n)^{1/(2alpha+1)})), natural log."""
    v = (8.0 * M) ** (1.0 / (alpha + 0.5)) * (n / math.log(n)) ** (1.0 / (2 * alpha + 1))
    return int(math.ceil(math.log2(v)))


def signal_set(truth: CoeffArray, n: int, A: float) -> list[tuple[int, int]]:
    """Nodes with |beta0_lk| >= A log(n) / sqrt(n)."""
    thr = A * math.log(n) / math.sqrt(n)
    out = []
    for l in range(truth.max_level):
        for k in np.nonzero(np.abs(truth.levels[l]) >= thr)[0]:
            out.append((l, int(k)))
    return out


def spike_level_for(alpha: float, M: float, n: int) -> int:
    """ceil(log2(M^{1/(alpha+1/2)} (n/log^2 n)^{1/(2alpha+1)}))."""
    v = M ** (1.0 / (alpha + 0.5)) * (n / math.log(n) ** 2) ** (1.0 / (2 * alpha + 1))
    return int(math.ceil(math.log2(v)))


def _rate_eps(alpha: float, n: int) -> float:
    return (math.log(n) ** 2 / n) ** (alpha / (2 * alpha + 1))


# -- experiments --------------------------------------------------------------


def rate_experiment(plan: ExperimentPlan) -> ExperimentReport:
    """Posterior-mean ell-infinity loss across n; slope against -alpha/(2alpha+1)."""
    t0 = time.time()
    rows = []
    for i, n in enumerate(plan.n_grid):
        L = int(math.floor(math.log2(n)))
        truth = make_test_function(plan.truth_kind, plan.holder(), L) \
            if plan.truth_kind != "zero" else CoeffArray.zeros(L)
        prior = plan.prior_for(n)
        for rep in range(plan.replicates):
            rng = stream(plan.seed, "rates", i, rep)
            d = simulate(truth, n, rng)
            post = posterior_exact(d, prior, method="dp")
            groups = draw_sparse(post, d, plan.draws, rng)
            losses = sparse_ell_inf_losses(groups, truth, L)
            rows.append(
                {
                    "n": n,
                    "replicate": rep,
                    "mean_loss": float(losses.mean()),
                    "sd_loss": float(losses.std(ddof=1)),
                    "draws": int(len(losses)),
                }
            )
    agg = _aggregate_rates(rows, plan)
    return ExperimentReport("rates", asdict(plan), rows, agg, time.time() - t0)


def _aggregate_rates(rows: list[dict], plan: ExperimentPlan) -> dict:
    ns = sorted({r["n"] for r in rows})
    curve = []
    for n in ns:
        m, se = _mean_se([r["mean_loss"] for r in rows if r["n"] == n])
        curve.append((float(n), m, se))
    logx = np.log([c[0] for c in curve])
    logy = np.log([c[1] for c in curve])
    slope, slope_se = _ols_slope(logx, logy)
    target = -plan.alpha / (2 * plan.alpha + 1)
    return {
        "slope": slope,
        "slope_se": slope_se,
        "target_slope": target,
        "slope_abs_error": abs(slope - target),
        "curves": {"mean_loss": curve},
    }


def sharp_lower_probe(plan: ExperimentPlan) -> ExperimentReport:
    """Spike at the rate-critical level: its inclusion vanishes, inflated it sticks."""
    t0 = time.time()
    rows = []
    for i, n in enumerate(plan.n_grid):
        L = int(math.floor(math.log2(n)))
        lstar = min(spike_level_for(plan.alpha, plan.M, n), L - 1)
        base = make_test_function("spike", plan.holder(), L, spike_level=lstar)
        inflated = CoeffArray.from_flat(base.to_flat() * math.log(n))
        prior = plan.prior_for(n)
        eps = _rate_eps(plan.alpha, n)
        for rep in range(plan.replicates):
            rng = stream(plan.seed, "sharp", i, rep)
            d = simulate(base, n, rng)
            post = posterior_exact(d, prior, method="dp")
            incl = post.inclusion_arrays()[lstar][0]
            groups = draw_sparse(post, d, max(plan.draws, 100), rng)
            losses = sparse_ell_inf_losses(groups, base, L)
            probe = float(np.mean(losses <= plan.probe_multiple * eps))
            rng2 = stream(plan.seed, "sharp-inflated", i, rep)
            d2 = simulate(inflated, n, rng2)
            post2 = posterior_exact(d2, prior, method="dp")
            incl2 = post2.inclusion_arrays()[lstar][0]
            rows.append(
                {
                    "n": n,
                    "replicate": rep,
                    "spike_level": lstar,
                    "inclusion": float(incl),
                    "inclusion_inflated": float(incl2),
                    "probe_prob": probe,
                }
            )
    agg = _aggregate_sharp(rows)
    return ExperimentReport("sharp", asdict(plan), rows, agg, time.time() - t0)


def _aggregate_sharp(rows: list[dict]) -> dict:
    ns = sorted({r["n"] for r in rows})
    inc, inc_inf, probe = [], [], []
    for n in ns:
        sub = [r for r in rows if r["n"] == n]
        m, se = _mean_se([r["inclusion"] for r in sub])
        inc.append((float(n), m, se))
        m2, se2 = _mean_se([r["inclusion_inflated"] for r in sub])
        inc_inf.append((float(n), m2, se2))
        m3, se3 = _mean_se([r["probe_prob"] for r in sub])
        probe.append((float(n), m3, se3))
    return {
        "final_inclusion": inc[-1][1],
        "final_inclusion_inflated": inc_inf[-1][1],
        "curves": {"inclusion": inc, "inclusion_inflated": inc_inf, "probe": probe},
    }


def coverage_experiment(plan: ExperimentPlan) -> ExperimentReport:
    """Band coverage, credibility and diameter on a self-similar truth."""
    t0 = time.time()
    rows = []
    for i, n in enumerate(plan.n_grid):
        L = int(math.floor(math.log2(n)))
        truth = make_test_function(plan.truth_kind, plan.holder(), L)
        j0 = default_j0(n)
        prior = plan.prior_for(n, j0=j0)
        spec = BandSpec(gamma=plan.band_gamma, v_n=plan.v_n, j0=j0)
        for rep in range(plan.replicates):
            rng = stream(plan.seed, "coverage", i, rep)
            d = simulate(truth, n, rng)
            post = posterior_exact(d, prior, method="dp")
            band, diag = compute_band(post, d, spec, rng, draws=plan.draws)
            covered = band_membership(truth, band, d)
            rows.append(
                {
                    "n": n,
                    "replicate": rep,
                    "covered": int(covered),
                    "credibility": diag["credibility"],
                    "sigma_n": band.sigma_n,
                    "R_n": band.R_n,
                    "diameter": diag["accepted_diameter"],
                    "center_depth": band.center_tree.depth,
                }
            )
    agg = _aggregate_coverage(rows, plan)
    return ExperimentReport("coverage", asdict(plan), rows, agg, time.time() - t0)


def _aggregate_coverage(rows: list[dict], plan: ExperimentPlan) -> dict:
    ns = sorted({r["n"] for r in rows})
    cov_curve, cred_curve, diam_curve = [], [], []
    for n in ns:
        sub = [r for r in rows if r["n"] == n]
        hits = sum(r["covered"] for r in sub)
        lo, hi = _wilson_ci(hits, len(sub))
        cov_curve.append((float(n), hits / len(sub), (hi - lo) / 2))
        m, se = _mean_se([r["credibility"] for r in sub])
        cred_curve.append((float(n), m, se))
        vn = plan.v_n if plan.v_n is not None else default_vn(n)
        rate = (n / math.log(n)) ** (-plan.alpha / (2 * plan.alpha + 1)) * vn
        md, sed = _mean_se([r["diameter"] / rate for r in sub])
        diam_curve.append((float(n), md, sed))
    return {
        "final_coverage": cov_curve[-1][1],
        "final_coverage_ci": _wilson_ci(
            sum(r["covered"] for r in rows if r["n"] == ns[-1]),
            len([r for r in rows if r["n"] == ns[-1]]),
        ),
        "final_credibility": cred_curve[-1][1],
        "diameter_ratio_spread": (
            min(c[1] for c in diam_curve),
            max(c[1] for c in diam_curve),
        ),
        "curves": {
            "coverage": cov_curve,
            "credibility": cred_curve,
            "diameter_ratio": diam_curve,
        },
    }


def _analytic_ks_identity(x00: float, n: int) -> float:
    """Exact KS distance of N(-sqrt(n) x/(n+1), n/(n+1)) to N(0,1)."""
    m = -math.sqrt(n) * x00 / (n + 1.0)
    s = math.sqrt(n / (n + 1.0))
    grid = np.linspace(m - 8 * s, m + 8 * s, 4001)
    return float(np.max(np.abs(norm.cdf((grid - m) / s) - norm.cdf(grid))))


def bvm_check(plan: ExperimentPlan) -> ExperimentReport:
    """KS distance of sqrt(n)(beta_00 - X_00) posterior draws to N(0,1)."""
    t0 = time.time()
    rows = []
    for i, n in enumerate(plan.n_grid):
        L = int(math.floor(math.log2(n)))
        truth = make_test_function(plan.truth_kind, plan.holder(), L)
        j0 = max(1, plan.j0)
        prior = plan.prior_for(n, j0=j0)
        cov = plan.cov_for(n)
        for rep in range(plan.replicates):
            rng = stream(plan.seed, f"bvm-{plan.cov_kind}", i, rep)
            d = simulate(truth, n, rng)
            if cov.kind == "identity":
                post = posterior_exact(d, prior, method="dp")
            else:
                post = posterior_mcmc(d, prior, cov, plan.mcmc_iters, rng)
            groups = draw_sparse(post, d, plan.draws, rng)
            vals = []
            for t, block in groups:
                col = list(t.rooted_internal).index((0, 0))
                vals.append(block[:, col])
            z = math.sqrt(n) * (np.concatenate(vals) - d.flat[1])
            ks = float(kstest(z, "norm").statistic)
            row = {
                "n": n,
                "replicate": rep,
                "cov_kind": plan.cov_kind,
                "ks": ks,
                "draws": int(len(z)),
            }
            if cov.kind == "identity":
                row["ks_analytic"] = _analytic_ks_identity(float(d.flat[1]), n)
            rows.append(row)
    agg = _aggregate_bvm(rows)
    return ExperimentReport("bvm", asdict(plan), rows, agg, time.time() - t0)


def _aggregate_bvm(rows: list[dict]) -> dict:
    ns = sorted({r["n"] for r in rows})
    curve = []
    for n in ns:
        m, se = _mean_se([r["ks"] for r in rows if r["n"] == n])
        curve.append((float(n), m, se))
    return {
        "final_ks": curve[-1][1],
        "ks_decreasing": all(a[1] > b[1] for a, b in zip(curve, curve[1:])),
        "curves": {"ks": curve},
    }


def _flat_depth_log_weights(d: SequenceData, L: int, prior: str) -> np.ndarray:
    """log posterior weights over the number of active layers m = 0..L."""
    g = d.node_log_factors
    level_sums = np.array([g[1 << l : 1 << (l + 1)].sum() for l in range(L)])
    data_part = g[0] + np.concatenate([[0.0], np.cumsum(level_sums)])
    m = np.arange(L + 1, dtype=float)
    if prior == "exp_d":
        logpi = -m
    elif prior == "uniform":
        logpi = np.zeros(L + 1)
    elif prior == "exp_dlogd":
        logpi = -m * np.log(np.maximum(m, 1.0))
    else:
        raise InvalidInputError(f"unknown flat prior {prior!r}")
    logw = logpi + data_part
    return logw - (logw.max() + math.log(np.sum(np.exp(logw - logw.max()))))


def _flat_dstar(truth_flat: np.ndarray, L: int, n: int) -> int:
    """argmin_m 2^(m-1) log(n+1) + (n/2) sum_{l>=m} |beta0_l|^2."""
    tails = np.zeros(L + 1)
    for l in range(L - 1, -1, -1):
        tails[l] = tails[l + 1] + float(
            np.sum(truth_flat[1 << l : 1 << (l + 1)] ** 2)
        )
    m = np.arange(L + 1, dtype=float)
    crit = 2.0 ** (m - 1) * math.log(n + 1.0) + 0.5 * n * tails
    return int(np.argmin(crit))


def _flat_losses(
    d: SequenceData, truth: CoeffArray, logw: np.ndarray, draws: int, rng: np.random.Generator
) -> np.ndarray:
    L = d.max_level
    t_flat = truth.pad_to(L).to_flat()
    level_max_truth = np.array(
        [np.max(np.abs(t_flat[1 << l : 1 << (l + 1)])) for l in range(L)]
    )
    scale = 2.0 ** (np.arange(L) / 2.0)
    tail_from = np.concatenate([np.cumsum((scale * level_max_truth)[::-1])[::-1], [0.0]])
    probs = np.exp(logw)
    ms = rng.choice(len(logw), size=draws, p=probs / probs.sum())
    n = d.n
    losses = np.empty(draws)
    for j, m in enumerate(ms):
        root_draw = n * d.flat[0] / (n + 1.0) + rng.standard_normal() / math.sqrt(n + 1.0)
        loss = abs(root_draw - t_flat[0])
        for l in range(m):
            seg = d.flat[1 << l : 1 << (l + 1)]
            drawn = n * seg / (n + 1.0) + rng.standard_normal(len(seg)) / math.sqrt(n + 1.0)
            loss += scale[l] * float(
                np.max(np.abs(drawn - t_flat[1 << l : 1 << (l + 1)]))
            )
        loss += tail_from[m]
        losses[j] = loss
    return losses


def flat_vs_cart(plan: ExperimentPlan) -> ExperimentReport:
    """Mean ell-infinity losses of the depth-only sieve against the CART posterior."""
    t0 = time.time()
    rows = []
    for i, n in enumerate(plan.n_grid):
        L = int(math.floor(math.log2(n)))
        truth = make_test_function("single_branch_decay", plan.holder(), L)
        prior = plan.prior_for(n)
        for rep in range(plan.replicates):
            rng = stream(plan.seed, "flat-vs-cart", i, rep)
            d = simulate(truth, n, rng)
            post = posterior_exact(d, prior, method="dp")
            groups = draw_sparse(post, d, plan.draws, rng)
            cart_loss = float(sparse_ell_inf_losses(groups, truth, L).mean())
            logw = _flat_depth_log_weights(d, L, plan.flat_prior)
            flat_loss = float(_flat_losses(d, truth, logw, plan.draws, rng).mean())
            mode_depth = int(np.argmax(logw))
            dstar = _flat_dstar(truth.pad_to(L).to_flat(), L, n)
            rows.append(
                {
                    "n": n,
                    "replicate": rep,
                    "cart_loss": cart_loss,
                    "flat_loss": flat_loss,
                    "flat_mode_depth": mode_depth,
                    "dstar": dstar,
                }
            )
    agg = _aggregate_flat(rows)
    return ExperimentReport("flat_vs_cart", asdict(plan), rows, agg, time.time() - t0)


def _aggregate_flat(rows: list[dict]) -> dict:
    ns = sorted({r["n"] for r in rows})
    ratio_curve, cart_curve, flat_curve, depth_curve = [], [], [], []
    for n in ns:
        sub = [r for r in rows if r["n"] == n]
        cm, cse = _mean_se([r["cart_loss"] for r in sub])
        fm, fse = _mean_se([r["flat_loss"] for r in sub])
        ratio = fm / cm
        # delta-method s.e. for the ratio of means
        rse = ratio * math.sqrt((cse / cm) ** 2 + (fse / fm) ** 2)
        ratio_curve.append((float(n), ratio, rse))
        cart_curve.append((float(n), cm, cse))
        flat_curve.append((float(n), fm, fse))
        dm, dse = _mean_se(
            [2.0 ** (r["flat_mode_depth"] - r["dstar"]) for r in sub]
        )
        depth_curve.append((float(n), dm, dse))
    first, last = ratio_curve[0], ratio_curve[-1]
    return {
        "final_ratio": last[1],
        "final_ratio_ci": (last[1] - 1.96 * last[2], last[1] + 1.96 * last[2]),
        "first_ratio_ci": (first[1] - 1.96 * first[2], first[1] + 1.96 * first[2]),
        "ratio_increasing": last[1] > first[1],
        "endpoint_cis_disjoint": first[1] + 1.96 * first[2] < last[1] - 1.96 * last[2],
        "depth_tracking_spread": (
            min(c[1] for c in depth_curve),
            max(c[1] for c in depth_curve),
        ),
        "curves": {
            "ratio": ratio_curve,
            "cart_loss": cart_curve,
            "flat_loss": flat_curve,
            "depth_ratio": depth_curve,
        },
    }


_RUNNERS: dict[str, Callable[[ExperimentPlan], ExperimentReport]] = {
    "rates": rate_experiment,
    "sharp": sharp_lower_probe,
    "coverage": coverage_experiment,
    "bvm": bvm_check,
    "flat_vs_cart": flat_vs_cart,
}

_AGGREGATORS = {
    "rates": lambda rows, plan: _aggregate_rates(rows, plan),
    "sharp": lambda rows, plan: _aggregate_sharp(rows),
    "coverage": lambda rows, plan: _aggregate_coverage(rows, plan),
    "bvm": lambda rows, plan: _aggregate_bvm(rows),
    "flat_vs_cart": lambda rows, plan: _aggregate_flat(rows),
}


def run_experiment(plan: ExperimentPlan) -> ExperimentReport:
    return _RUNNERS[plan.name](plan)


def recompute_aggregates(report: ExperimentReport) -> dict:
    """Re-derive the aggregates from the shipped raw rows (self-audit)."""
    plan = ExperimentPlan(**report.config)
    return _AGGREGATORS[report.name](report.rows, plan)
