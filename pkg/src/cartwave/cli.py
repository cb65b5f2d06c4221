"""Command-line interface.

Subcommands: transform, prior-sample, posterior, bands, uh, experiment,
verify.  Exit codes: 0 success, 1 computational or configuration error,
2 usage error.  CARTWAVE_OUT sets the default output directory; flags
override it.  Identical argv + config + seed give byte-identical CSVs.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import time
from dataclasses import asdict
from fractions import Fraction

import numpy as np

from . import __version__
from ._rng import stream
from .config import RunConfig, parse_config
from .errors import CartwaveError
from .experiments import ExperimentPlan, recompute_aggregates, run_experiment
from .haar import CoeffArray, GridFunction, make_test_function, HolderSpec, inverse_haar
from .pinball import CovarianceSpec
from .posterior import (
    chain_ess_proxy,
    posterior_exact,
    posterior_mcmc,
    simulate,
)
from .trees import PriorSpec, sample_tree
from .uq import BandSpec, compute_band, default_j0
from .unbalanced import (
    build_uh,
    check_weak_balance,
    dyadic_breakpoints,
    quantile_balance_constants,
    quantile_breakpoints,
    uh_coefficients,
    Breakpoints,
)


def _args_echo(args) -> dict:
    return {k: v for k, v in vars(args).items() if k != "func"}


def _out_dir(flag_value: str | None) -> str:
    out = flag_value or os.environ.get("CARTWAVE_OUT") or "."
    os.makedirs(out, exist_ok=True)
    return out


def _write(path: str, text: str) -> str:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
    return path


def _write_manifest(outdir: str, config_echo: dict, outputs: list[str], t0: float) -> str:
    checks = {}
    for p in outputs:
        with open(p, "rb") as fh:
            checks[os.path.basename(p)] = hashlib.sha256(fh.read()).hexdigest()
    manifest = {
        "version": __version__,
        "config": config_echo,
        "started_unix": t0,
        "finished_unix": time.time(),
        "outputs": checks,
    }
    tmp = os.path.join(outdir, ".manifest.json.tmp")
    final = os.path.join(outdir, "manifest.json")
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    os.replace(tmp, final)
    return final


def _prior_from_args(args) -> PriorSpec:
    L = args.lmax if args.lmax is not None else int(math.floor(math.log2(args.n)))
    return PriorSpec(
        args.prior,
        L_max=L,
        gamma=args.gamma if args.prior == "gw" else None,
        exponent=args.exponent,
        lam=args.lam if args.prior == "cond_uniform" else None,
        c=args.c if args.prior == "exponential" else None,
        j0=args.j0,
        n=args.n,
    )


def _cov_from_args(args) -> CovarianceSpec:
    if args.cov == "identity":
        return CovarianceSpec("identity")
    if args.cov == "g_prior":
        g = args.g_n if args.g_n is not None else float(args.n)
        return CovarianceSpec("g_prior", g_n=g)
    return CovarianceSpec("ar1_external", rho=args.rho, c_n=args.c_n, n=args.n)


def _truth_from_args(args) -> CoeffArray:
    L = int(math.floor(math.log2(args.n)))
    h = HolderSpec(args.alpha, args.M)
    if args.truth == "zero":
        return CoeffArray.zeros(L)
    spike = args.spike_level if args.spike_level is not None else max(0, L - 2)
    return make_test_function(
        args.truth, h, L, spike_level=spike if args.truth == "spike" else None
    )


def _add_model_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--n", type=int, default=1024)
    p.add_argument("--truth", default="cusp",
                   choices=["cusp", "full_decay", "single_branch_decay", "spike", "zero"])
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--M", type=float, default=1.0)
    p.add_argument("--spike-level", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)


def _add_prior_args(p: argparse.ArgumentParser, gamma_flag: str = "--gamma") -> None:
    p.add_argument("--prior", default="gw", choices=["gw", "cond_uniform", "exponential"])
    p.add_argument(gamma_flag, dest="gamma", type=float, default=8.0)
    p.add_argument("--exponent", type=float, default=1.0)
    p.add_argument("--lam", type=float, default=1.0)
    p.add_argument("--c", type=float, default=1.0)
    p.add_argument("--j0", type=int, default=0)
    p.add_argument("--lmax", type=int, default=None)


def _add_cov_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--cov", default="identity", choices=["identity", "g_prior", "ar1"])
    p.add_argument("--g-n", dest="g_n", type=float, default=None)
    p.add_argument("--rho", type=float, default=0.5)
    p.add_argument("--c-n", dest="c_n", type=float, default=None)


def _cmd_transform(args) -> int:
    with open(args.input, "r", encoding="utf-8") as fh:
        text = fh.read()
    is_json = args.format == "json"
    if args.direction == "forward":
        g = GridFunction.from_json(text) if is_json else GridFunction.from_csv(text)
        from .haar import forward_haar

        c = forward_haar(g)
        out = c.to_json() if is_json else c.to_csv()
    else:
        c = CoeffArray.from_json(text) if is_json else CoeffArray.from_csv(text)
        g = inverse_haar(c)
        out = g.to_json() if is_json else g.to_csv()
    if args.output:
        _write(args.output, out)
    else:
        sys.stdout.write(out)
    return 0


def _cmd_prior_sample(args) -> int:
    args.n = args.n if args.n else 1 << (args.lmax or 8)
    spec = _prior_from_args(args)
    rng = stream(args.seed, "prior-sample")
    lines = [sample_tree(spec, rng).to_json() for _ in range(args.count)]
    text = "\n".join(lines) + "\n"
    if args.out:
        _write(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


def _cmd_posterior(args) -> int:
    rng = stream(args.seed, "posterior")
    truth = _truth_from_args(args)
    d = simulate(truth, args.n, rng)
    prior = _prior_from_args(args)
    cov = _cov_from_args(args)
    if args.method == "dp" and args.prior == "cond_uniform" and not args.stratified:
        raise CartwaveError(
            "the conditionally uniform prior has no per-node factorization; "
            "pass --stratified to run the leaf-count-stratified DP"
        )
    if args.method == "mcmc":
        post = posterior_mcmc(d, prior, cov, args.iters, rng)
    else:
        post = posterior_exact(d, prior, cov, method=args.method)
    incl = post.marginal_inclusion()
    top = post.top_trees(20, rng)
    doc = {
        "n": args.n,
        "method": args.method,
        "inclusion": {f"{l},{k}": p for (l, k), p in sorted(incl.items()) if p > 1e-9},
        "top_trees": [
            {"internal": [list(nd) for nd in t.internal_sorted], "prob": p}
            for t, p in top
        ],
    }
    if args.method == "mcmc":
        doc["chain"] = {
            "acceptance_rate": post.acceptance_rate,
            "ess_proxy": chain_ess_proxy(post),
            "stored": len(post.chain),
        }
    text = json.dumps(doc, indent=2, sort_keys=True)
    if args.out:
        _write(args.out, text)
    else:
        sys.stdout.write(text + "\n")
    return 0


def _cmd_bands(args) -> int:
    t0 = time.time()
    outdir = _out_dir(args.out)
    rng = stream(args.seed, "bands")
    truth = _truth_from_args(args)
    d = simulate(truth, args.n, rng)
    j0 = args.j0 if args.j0 > 0 else default_j0(args.n)
    args.j0 = j0
    prior = _prior_from_args(args)
    post = posterior_exact(d, prior, method="dp")
    v_n = None if args.vn == "auto" else float(args.vn)
    spec = BandSpec(gamma=args.band_gamma, v_n=v_n, j0=j0)
    band, diag = compute_band(post, d, spec, rng, draws=args.draws)
    center_path = _write(os.path.join(outdir, "center.csv"), band.center.to_csv())
    lo, hi = band.envelope()
    import csv as _csv
    import io as _io

    buf = _io.StringIO()
    w = _csv.writer(buf, lineterminator="\n")
    w.writerow(["cell", "lower", "upper"])
    for i, (a, b) in enumerate(zip(lo, hi)):
        w.writerow([i, "%.17g" % a, "%.17g" % b])
    env_path = _write(os.path.join(outdir, "band_envelope.csv"), buf.getvalue())
    doc = {
        "sigma_n": band.sigma_n,
        "R_n": band.R_n,
        "center_file": os.path.basename(center_path),
        "credibility_estimate": diag["credibility"],
        "draws": diag["draws"],
    }
    json_path = _write(
        os.path.join(outdir, "band.json"), json.dumps(doc, indent=2, sort_keys=True)
    )
    from .plots import render_band_figure
    from .haar import inverse_haar_flat

    fig_path = render_band_figure(
        band, inverse_haar_flat(truth.pad_to(d.max_level).to_flat()), outdir
    )
    _write_manifest(outdir, {"argv": _args_echo(args)}, [center_path, env_path, json_path, fig_path], t0)
    sys.stdout.write(json.dumps(doc, sort_keys=True) + "\n")
    return 0


def _parse_density(text: str):
    if text == "uniform":
        return lambda u: u
    if text.startswith("beta:"):
        a, b = (float(x) for x in text[5:].split(","))
        from scipy.stats import beta as beta_dist

        return lambda u: float(beta_dist.ppf(u, a, b))
    raise CartwaveError(f"unknown density {text!r}; use 'uniform' or 'beta:a,b'")


def _uh_system_from_args(args):
    if args.breakpoints:
        with open(args.breakpoints, "r", encoding="utf-8") as fh:
            bp = Breakpoints.from_json(fh.read())
    elif args.density == "dyadic":
        L = int(math.floor(math.log2(args.n)))
        bp = dyadic_breakpoints(min(args.max_level or L - 1, L - 1), L)
    else:
        ginv = _parse_density(args.density)
        bp = quantile_breakpoints(ginv, args.D, args.n, args.max_level)
    return build_uh(bp)


def _cmd_uh(args) -> int:
    outdir = _out_dir(args.out)
    t0 = time.time()
    if args.uh_action == "build":
        s = _uh_system_from_args(args)
        path = _write(os.path.join(outdir, "breakpoints.json"), s.breakpoints.to_json())
        _write_manifest(outdir, {"argv": _args_echo(args)}, [path], t0)
        sys.stdout.write(f"{len(s.nodes)} nodes -> {path}\n")
        return 0
    if args.uh_action == "check":
        s = _uh_system_from_args(args)
        if args.E is not None:
            E = args.E
        elif args.density not in (None, "dyadic") and not args.breakpoints:
            E = quantile_balance_constants(
                _parse_density(args.density), args.D, args.n, args.max_level
            )["E"]
        else:
            E = 2 ** (args.D - 1)
        rep = check_weak_balance(s, E, args.D)
        path = _write(os.path.join(outdir, "balance_check.csv"), rep.to_csv())
        _write_manifest(outdir, {"argv": _args_echo(args)}, [path], t0)
        sys.stdout.write(
            f"E={E} D={args.D}: {'all pass' if rep.all_pass else f'{len(rep.failures())} failures'} -> {path}\n"
        )
        return 0 if rep.all_pass else 1
    # transform
    s = _uh_system_from_args(args)
    with open(args.input, "r", encoding="utf-8") as fh:
        g = GridFunction.from_csv(fh.read())
    co = uh_coefficients(g, s)
    import csv as _csv
    import io as _io

    buf = _io.StringIO()
    w = _csv.writer(buf, lineterminator="\n")
    w.writerow(["l", "k", "value"])
    for (l, k), v in sorted(co.items()):
        w.writerow([l, k, "%.17g" % v])
    path = _write(os.path.join(outdir, "uh_coefficients.csv"), buf.getvalue())
    _write_manifest(outdir, {"argv": _args_echo(args)}, [path], t0)
    sys.stdout.write(f"{len(co)} coefficients -> {path}\n")
    return 0


def _plan_from_config(cfg: RunConfig, name: str) -> ExperimentPlan:
    e = cfg.experiment
    return ExperimentPlan(
        name=name,
        truth_kind=e["truth"],
        alpha=e["alpha"],
        M=e["M"],
        n_grid=tuple(e["n_grid"]),
        replicates=e["replicates"],
        draws=e["draws"],
        prior_kind=cfg.prior["kind"],
        gw_gamma=cfg.prior["gamma"],
        gw_exponent=cfg.prior["exponent"],
        prior_c=cfg.prior["c"],
        prior_lam=cfg.prior["lam"],
        j0=cfg.prior["j0"],
        cov_kind=cfg.covariance["kind"],
        band_gamma=cfg.band["gamma"],
        v_n=cfg.band["v_n"],
        signal_A=e["signal_A"],
        mcmc_iters=e["mcmc_iters"],
        flat_prior=e["flat_prior"],
        probe_multiple=e["probe_multiple"],
        seed=cfg.seed,
    )


def _cmd_experiment(args) -> int:
    t0 = time.time()
    cfg = parse_config(args.config)
    outdir = _out_dir(args.out or cfg.output)
    name = args.experiment_name.replace("-", "_")
    plan = _plan_from_config(cfg, name)
    report = run_experiment(plan)
    paths = [
        _write(os.path.join(outdir, f"{name}_raw.csv"), report.raw_csv()),
        _write(os.path.join(outdir, f"{name}_aggregates.json"), report.aggregate_json()),
        _write(os.path.join(outdir, f"{name}_plot.csv"), report.plot_csv()),
        _write(
            os.path.join(outdir, "config_resolved.json"), cfg.to_json()
        ),
    ]
    from .plots import render_report_figure

    paths.append(render_report_figure(report, outdir))
    _write_manifest(outdir, json.loads(cfg.to_json()), paths, t0)
    sys.stdout.write(
        f"{name}: {len(report.rows)} rows in {report.runtime_s:.1f}s -> {outdir}\n"
    )
    return 0


def _cmd_verify(args) -> int:
    from .verify import run_all

    failures = run_all(verbose=True)
    if failures:
        sys.stderr.write(f"{len(failures)} invariant check(s) failed\n")
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cartwave", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("transform", help="Haar analysis/synthesis of CSV/JSON files")
    p.add_argument("--direction", choices=["forward", "inverse"], required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", default=None)
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    p.set_defaults(func=_cmd_transform)

    p = sub.add_parser("prior-sample", help="draw trees from a prior, one JSON per line")
    p.add_argument("--kind", dest="prior", default="gw",
                   choices=["gw", "cond_uniform", "exponential"])
    p.add_argument("--gamma", type=float, default=8.0)
    p.add_argument("--exponent", type=float, default=1.0)
    p.add_argument("--lam", type=float, default=1.0)
    p.add_argument("--c", type=float, default=1.0)
    p.add_argument("--lmax", type=int, default=8)
    p.add_argument("--j0", type=int, default=0)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_prior_sample)

    p = sub.add_parser("posterior", help="tree posterior on simulated data")
    p.add_argument("--method", choices=["enumerate", "dp", "mcmc"], default="dp")
    p.add_argument("--iters", type=int, default=30000)
    p.add_argument("--stratified", action="store_true",
                   help="allow the leaf-count-stratified DP (cond_uniform prior)")
    _add_model_args(p)
    _add_prior_args(p)
    _add_cov_args(p)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_posterior)

    p = sub.add_parser("bands", help="credible band around the median-tree estimator")
    p.add_argument("--gamma", dest="band_gamma", type=float, default=0.05)
    p.add_argument("--vn", default="auto")
    p.add_argument("--draws", type=int, default=2000)
    _add_model_args(p)
    _add_prior_args(p, gamma_flag="--gw-gamma")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_bands)

    p = sub.add_parser("uh", help="unbalanced Haar systems")
    p.add_argument("uh_action", choices=["build", "check", "transform"])
    p.add_argument("--density", default="uniform",
                   help="'uniform', 'beta:a,b' or 'dyadic'")
    p.add_argument("--D", type=int, default=2)
    p.add_argument("--n", type=int, default=1024)
    p.add_argument("--max-level", dest="max_level", type=int, default=None)
    p.add_argument("--E", type=int, default=None)
    p.add_argument("--breakpoints", default=None)
    p.add_argument("--input", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_uh)

    p = sub.add_parser("experiment", help="run a replicated study")
    p.add_argument("experiment_name",
                   choices=["rates", "sharp", "coverage", "bvm", "flat-vs-cart"])
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_experiment)

    p = sub.add_parser("verify", help="run the full invariant suite")
    p.set_defaults(func=_cmd_verify)
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except CartwaveError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1
    except FileNotFoundError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
