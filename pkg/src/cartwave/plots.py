"""Matplotlib figure rendering for reports and bands.

Figures are written next to the delimited outputs; everything uses the Agg
backend so runs stay headless.
"""

from __future__ import annotations

import math
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .experiments import ExperimentReport
from .uq import CredibleBand


def _save(fig, path: str) -> str:
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def render_report_figure(report: ExperimentReport, outdir: str) -> str:
    """One headline figure per experiment; returns the written path."""
    curves = report.aggregates.get("curves", {})
    path = os.path.join(outdir, f"{report.name}.png")
    if report.name == "rates":
        fig, ax = plt.subplots(figsize=(5.2, 3.6))
        pts = curves["mean_loss"]
        x = np.array([p[0] for p in pts])
        y = np.array([p[1] for p in pts])
        e = np.array([p[2] for p in pts])
        ax.errorbar(x, y, yerr=e, fmt="o-", label="mean posterior loss")
        slope = report.aggregates["slope"]
        target = report.aggregates["target_slope"]
        anchor = y[0] * (x / x[0]) ** target
        ax.plot(x, anchor, "--", label=f"target slope {target:.3f}")
        ax.set_xscale("log", base=2)
        ax.set_yscale("log")
        ax.set_xlabel("n")
        ax.set_ylabel("mean loss")
        ax.set_title(f"fitted slope {slope:.3f}")
        ax.legend()
        return _save(fig, path)
    if report.name == "sharp":
        fig, ax = plt.subplots(figsize=(5.2, 3.6))
        for label in ("inclusion", "inclusion_inflated"):
            pts = curves[label]
            ax.errorbar(
                [p[0] for p in pts],
                [p[1] for p in pts],
                yerr=[p[2] for p in pts],
                fmt="o-",
                label=label,
            )
        ax.set_xscale("log", base=2)
        ax.set_xlabel("n")
        ax.set_ylabel("inclusion of the spike node")
        ax.legend()
        return _save(fig, path)
    if report.name == "coverage":
        fig, axes = plt.subplots(1, 2, figsize=(8.4, 3.4))
        for ax, key, ylab in (
            (axes[0], "coverage", "empirical coverage"),
            (axes[1], "diameter_ratio", "diameter / rate"),
        ):
            pts = curves[key]
            ax.errorbar(
                [p[0] for p in pts],
                [p[1] for p in pts],
                yerr=[p[2] for p in pts],
                fmt="o-",
            )
            ax.set_xscale("log", base=2)
            ax.set_xlabel("n")
            ax.set_ylabel(ylab)
        axes[0].axhline(1 - report.config["band_gamma"], ls="--", color="gray")
        return _save(fig, path)
    if report.name == "bvm":
        fig, ax = plt.subplots(figsize=(5.2, 3.6))
        pts = curves["ks"]
        ax.errorbar(
            [p[0] for p in pts],
            [p[1] for p in pts],
            yerr=[p[2] for p in pts],
            fmt="o-",
            label=report.config["cov_kind"],
        )
        ax.axhline(0.05, ls="--", color="gray")
        ax.set_xscale("log", base=2)
        ax.set_xlabel("n")
        ax.set_ylabel("KS distance to N(0,1)")
        ax.legend()
        return _save(fig, path)
    fig, axes = plt.subplots(1, 2, figsize=(8.4, 3.4))
    pts = curves["ratio"]
    axes[0].errorbar(
        [p[0] for p in pts], [p[1] for p in pts], yerr=[p[2] for p in pts], fmt="o-"
    )
    axes[0].axhline(1.0, ls="--", color="gray")
    axes[0].set_xscale("log", base=2)
    axes[0].set_xlabel("n")
    axes[0].set_ylabel("flat / CART mean loss")
    pts = curves["depth_ratio"]
    axes[1].errorbar(
        [p[0] for p in pts], [p[1] for p in pts], yerr=[p[2] for p in pts], fmt="o-"
    )
    axes[1].axhline(1.0, ls="--", color="gray")
    axes[1].set_xscale("log", base=2)
    axes[1].set_xlabel("n")
    axes[1].set_ylabel("2^(mode depth - D*)")
    return _save(fig, path)


def render_band_figure(
    band: CredibleBand, truth_values: np.ndarray | None, outdir: str
) -> str:
    """Band envelope (center +/- sigma_n) with the truth overlaid when known."""
    lo, hi = band.envelope()
    x = np.linspace(0.0, 1.0, len(lo) + 1)
    fig, ax = plt.subplots(figsize=(6.0, 3.4))
    ax.fill_between(x, np.append(lo, lo[-1]), np.append(hi, hi[-1]), step="post", alpha=0.3)
    center = (lo + hi) / 2.0
    ax.step(x, np.append(center, center[-1]), where="post", label="median-tree estimator")
    if truth_values is not None:
        ax.step(x, np.append(truth_values, truth_values[-1]), where="post", label="truth")
    ax.set_xlabel("x")
    ax.legend()
    path = os.path.join(outdir, "band.png")
    return _save(fig, path)
