"""Run configuration: a validated JSON document with logged defaults.

Unknown keys are rejected everywhere; every default that fills in is logged
so a resolved config echoes back the complete run description.  Reparsing
the emitted document reproduces it exactly.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Any

from .errors import InvalidInputError

log = logging.getLogger("cartwave")

_SCHEMA: dict[str, dict[str, Any]] = {
    "model": {"n": 16384, "L_max": None},
    "prior": {
        "kind": "gw",
        "gamma": 8.0,
        "exponent": 1.0,
        "lam": 1.0,
        "c": 1.0,
        "j0": 0,
    },
    "covariance": {"kind": "identity", "g_n": None, "rho": None, "c_n": None},
    "band": {"gamma": 0.05, "v_n": None, "weights": "max1l", "j0": None},
    "experiment": {
        "name": "rates",
        "truth": "cusp",
        "alpha": 1.0,
        "M": 1.0,
        "n_grid": [256, 1024, 4096, 16384],
        "replicates": 10,
        "draws": 500,
        "mcmc_iters": 30000,
        "flat_prior": "exp_d",
        "signal_A": 8.0,
        "probe_multiple": 0.5,
    },
    "seed": 0,
    "output": None,
}


@dataclass(frozen=True)
class RunConfig:
    """Resolved configuration document."""

    model: dict
    prior: dict
    covariance: dict
    band: dict
    experiment: dict
    seed: int
    output: str | None

    def to_json(self) -> str:
        return json.dumps(
            {
                "model": self.model,
                "prior": self.prior,
                "covariance": self.covariance,
                "band": self.band,
                "experiment": self.experiment,
                "seed": self.seed,
                "output": self.output,
            },
            indent=2,
            sort_keys=True,
        )


def _resolve_section(name: str, given: dict, defaults: dict) -> dict:
    unknown = set(given) - set(defaults)
    if unknown:
        raise InvalidInputError(
            f"unknown key(s) {sorted(unknown)} in section {name!r}"
        )
    out = dict(defaults)
    for key, val in given.items():
        out[key] = val
    for key in defaults:
        if key not in given:
            log.info("config: %s.%s defaulted to %r", name, key, out[key])
    return out


def _validate(cfg: RunConfig) -> None:
    n = cfg.model["n"]
    if not isinstance(n, int) or n < 2:
        raise InvalidInputError("model.n must be an integer >= 2")
    if cfg.model["L_max"] is not None:
        L = cfg.model["L_max"]
        if not isinstance(L, int) or not (0 <= L <= math.floor(math.log2(n))):
            raise InvalidInputError("model.L_max must lie in [0, floor(log2 n)]")
    if cfg.prior["kind"] not in ("gw", "cond_uniform", "exponential"):
        raise InvalidInputError("prior.kind must be gw, cond_uniform or exponential")
    if cfg.prior["kind"] == "gw" and cfg.prior["gamma"] <= 1:
        raise InvalidInputError("prior.gamma must exceed 1")
    if cfg.covariance["kind"] not in ("identity", "g_prior", "ar1_external"):
        raise InvalidInputError(
            "covariance.kind must be identity, g_prior or ar1_external"
        )
    g = cfg.band["gamma"]
    if not (isinstance(g, (int, float)) and 0.0 < g < 1.0):
        raise InvalidInputError("gamma must lie in (0,1)")
    if cfg.band["v_n"] is not None and cfg.band["v_n"] <= 0:
        raise InvalidInputError("band.v_n must be positive")
    if cfg.experiment["name"] not in ("rates", "sharp", "coverage", "bvm", "flat_vs_cart"):
        raise InvalidInputError(
            "experiment.name must be one of rates, sharp, coverage, bvm, flat_vs_cart"
        )
    grid = cfg.experiment["n_grid"]
    if list(grid) != sorted(set(grid)) or any(
        not isinstance(x, int) or x < 4 for x in grid
    ):
        raise InvalidInputError("experiment.n_grid must be strictly increasing integers")
    if not isinstance(cfg.seed, int):
        raise InvalidInputError("seed must be an integer")


def parse_config_text(text: str) -> RunConfig:
    doc = json.loads(text)
    if not isinstance(doc, dict):
        raise InvalidInputError("config must be a JSON object")
    unknown = set(doc) - set(_SCHEMA)
    if unknown:
        raise InvalidInputError(f"unknown top-level key(s) {sorted(unknown)}")
    sections = {}
    for name, defaults in _SCHEMA.items():
        if not isinstance(defaults, dict):
            continue
        given = doc.get(name, {})
        if not isinstance(given, dict):
            raise InvalidInputError(f"section {name!r} must be an object")
        sections[name] = _resolve_section(name, given, defaults)
    seed = doc.get("seed", _SCHEMA["seed"])
    if "seed" not in doc:
        log.info("config: seed defaulted to %r", seed)
    output = doc.get("output", _SCHEMA["output"])
    cfg = RunConfig(
        model=sections["model"],
        prior=sections["prior"],
        covariance=sections["covariance"],
        band=sections["band"],
        experiment=sections["experiment"],
        seed=seed,
        output=output,
    )
    _validate(cfg)
    return cfg


def parse_config(path: str) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())
