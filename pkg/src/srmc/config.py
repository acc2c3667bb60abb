"""JSON configuration: target specs, run configs and experiment configs.

Every validation failure raises :class:`ConfigError` naming the offending
field path, e.g. ``run.kernel.eta``.
"""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np

from . import targets as T
from .history import CAPPED_WARMUP, FIXED, GUARDRAIL
from .kernels import DGI_FAMILIES, KINDS

SCHEMA_VERSION = 1

EXPERIMENT_KINDS = ("run", "mse-benchmark", "metastability-vignette", "mode-coverage", "theory-verify", "sweep")
COST_MODELS = ("baseline-d", "srmc-3d", "measured")
INIT_KINDS = ("fixed", "target_draw", "uniform_box")
TARGET_KINDS = (
    "gaussian",
    "correlated-gaussian",
    "mixture",
    "two-mode-mixture",
    "grid-mixture",
    "logistic",
    "synthetic-logistic",
    "discrete-quadratic",
    "random-quadratic",
    "table",
)

RUN_DEFAULTS: Dict[str, Any] = {
    "kernel": {"kind": "mala", "eta": 0.01},
    "alpha": {"kind": "fixed", "alpha": 0.0},
    "history": {"rho": 0.6, "scale": 1.0, "offset": 1, "theta0": None, "mu0": None},
    "hvp": {"mode": None, "eps": None, "tilt_score": "exact"},
    "test_function": "identity",
    "init": {"kind": "target_draw"},
    "n_iter": 1000,
    "burn_in": 0.0,
    "stride": 1,
    "n_chains": 1,
    "seed": 0,
    "cost_model": "measured",
}


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


def _require(cond, path, message):
    if not cond:
        raise ConfigError(path, message)


def _number(obj, key, path, positive=False, nonneg=False, integer=False):
    _require(key in obj, f"{path}.{key}", "missing required field")
    v = obj[key]
    _require(
        isinstance(v, (int, float)) and not isinstance(v, bool),
        f"{path}.{key}",
        f"expected a number, got {type(v).__name__}",
    )
    if integer:
        _require(float(v).is_integer(), f"{path}.{key}", "expected an integer")
    if positive:
        _require(v > 0, f"{path}.{key}", "must be positive")
    if nonneg:
        _require(v >= 0, f"{path}.{key}", "must be non-negative")
    return v


def _matrix(v, path, shape=None):
    try:
        arr = np.asarray(v, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(path, "expected a numeric (nested) array")
    if shape is not None and arr.shape != shape:
        raise ConfigError(path, f"expected shape {shape}, got {arr.shape}")
    return arr


def _merge(defaults, given):
    out = copy.deepcopy(defaults)
    for k, v in given.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


# ---------------------------------------------------------------------------
# Targets
# ---------------------------------------------------------------------------


def _gaussian_spec(obj, path):
    _require("mean" in obj, f"{path}.mean", "missing required field")
    _require("covariance" in obj, f"{path}.covariance", "missing required field")
    mean = _matrix(obj["mean"], f"{path}.mean")
    cov = _matrix(obj["covariance"], f"{path}.covariance")
    try:
        return T.GaussianSpec(mean, cov)
    except T.TargetError as e:
        raise ConfigError(path, str(e))


def build_target(spec: Dict[str, Any], path: str = "target") -> T.TargetModel:
    """TargetModel from a ``{"kind": ..., ...}`` spec."""
    _require(isinstance(spec, dict), path, "expected an object")
    kind = spec.get("kind")
    _require(kind in TARGET_KINDS, f"{path}.kind", f"expected one of {list(TARGET_KINDS)}, got {kind!r}")
    try:
        target = _build_target(kind, spec, path)
    except T.TargetError as e:
        raise ConfigError(path, str(e))
    if "ground_truth_mean" in spec:
        gtm = _matrix(spec["ground_truth_mean"], f"{path}.ground_truth_mean", (target.dim,))
        target = _replace_mean(target, gtm)
    return target


def _replace_mean(target, mean):
    from dataclasses import replace

    return replace(target, ground_truth_mean=mean)


def _build_target(kind, spec, path):
    if kind == "gaussian":
        return T.gaussian_target(_gaussian_spec(spec, path))
    if kind == "correlated-gaussian":
        dim = int(_number(spec, "dim", path, positive=True, integer=True))
        rho = _number(spec, "rho", path)
        _require(-1 < rho < 1, f"{path}.rho", "must lie in (-1, 1)")
        return T.gaussian_target(T.correlated_gaussian_spec(dim, rho))
    if kind == "mixture":
        comps = spec.get("components")
        _require(isinstance(comps, list) and comps, f"{path}.components", "expected a non-empty list")
        specs = [_gaussian_spec(c, f"{path}.components[{i}]") for i, c in enumerate(comps)]
        _require("weights" in spec, f"{path}.weights", "missing required field")
        return T.mixture_target(T.MixtureSpec(_matrix(spec["weights"], f"{path}.weights"), specs))
    if kind == "two-mode-mixture":
        return T.mixture_target(T.two_mode_mixture_spec())
    if kind == "grid-mixture":
        side = int(_number(spec, "side", path, positive=True, integer=True))
        spacing = _number(spec, "spacing", path, positive=True)
        sigma = _number(spec, "sigma", path, positive=True)
        return T.mixture_target(T.grid_mixture_spec(side, spacing, sigma))
    if kind == "logistic":
        for key in ("design", "labels"):
            _require(key in spec, f"{path}.{key}", "missing required field")
        return T.logistic_posterior_target(
            T.LogisticPosteriorSpec(
                _matrix(spec["design"], f"{path}.design"),
                _matrix(spec["labels"], f"{path}.labels"),
                spec.get("prior_variance", 1.0),
            )
        )
    if kind == "synthetic-logistic":
        return T.logistic_posterior_target(
            T.synthetic_logistic_spec(
                n_obs=int(spec.get("n_obs", 100)),
                dim=int(spec.get("dim", 10)),
                correlation=float(spec.get("correlation", 0.5)),
                prior_variance=float(spec.get("prior_variance", 1.0)),
                seed=int(spec.get("data_seed", 0)),
            )
        )
    if kind == "discrete-quadratic":
        for key in ("W", "b"):
            _require(key in spec, f"{path}.{key}", "missing required field")
        b = _matrix(spec["b"], f"{path}.b")
        W = _matrix(spec["W"], f"{path}.W", (b.size, b.size))
        return T.quadratic_discrete_target(W, b, int(spec.get("max_value", 1)))
    if kind == "random-quadratic":
        dim = int(_number(spec, "dim", path, positive=True, integer=True))
        rng = np.random.default_rng(int(spec.get("data_seed", 0)))
        return T.random_quadratic_target(dim, rng, float(spec.get("scale", 0.5)), int(spec.get("max_value", 1)))
    dim = int(_number(spec, "dim", path, positive=True, integer=True))
    return T.table_target(_matrix(spec.get("log_table"), f"{path}.log_table"), dim, int(spec.get("max_value", 1)))


# ---------------------------------------------------------------------------
# Run configs
# ---------------------------------------------------------------------------


def _validate_kernel(k, path):
    _require(isinstance(k, dict), path, "expected an object")
    _require(k.get("kind") in KINDS, f"{path}.kind", f"expected one of {list(KINDS)}, got {k.get('kind')!r}")
    if "eta" in k:
        _number(k, "eta", path, positive=True)
    if "leapfrog_steps" in k:
        _number(k, "leapfrog_steps", path, positive=True, integer=True)
    if "proposal_scale" in k:
        _number(k, "proposal_scale", path, positive=True)
    if "temperature" in k:
        _number(k, "temperature", path, positive=True)
    if k.get("family") is not None:
        _require(k["family"] in DGI_FAMILIES, f"{path}.family", f"expected one of {list(DGI_FAMILIES)}")


def _validate_alpha(a, path):
    _require(isinstance(a, dict), path, "expected an object")
    kind = a.get("kind")
    _require(kind in (FIXED, CAPPED_WARMUP, GUARDRAIL), f"{path}.kind", f"unknown schedule {kind!r}")
    if kind == FIXED:
        _number(a, "alpha", path, nonneg=True)
    else:
        _number(a, "alpha_ref", path, positive=True)
        if "rho_cap" in a:
            rc = _number(a, "rho_cap", path, positive=True)
            _require(rc <= 1, f"{path}.rho_cap", "must be at most 1")


def _validate_history(h, path):
    rho = _number(h, "rho", path)
    _require(0.5 < rho <= 1, f"{path}.rho", "must lie in (0.5, 1]")
    _number(h, "scale", path, positive=True)
    _number(h, "offset", path, positive=True, integer=True)


def _validate_init(init, path):
    _require(isinstance(init, dict), path, "expected an object")
    kind = init.get("kind")
    _require(kind in INIT_KINDS, f"{path}.kind", f"expected one of {list(INIT_KINDS)}, got {kind!r}")
    if kind == "fixed":
        _require("point" in init, f"{path}.point", "missing required field")
    if kind == "uniform_box":
        for key in ("low", "high"):
            _require(key in init, f"{path}.{key}", "missing required field")


def resolve_run(raw: Dict[str, Any], path: str = "run") -> Dict[str, Any]:
    """Fill defaults into a run config and validate it; returns a plain dict."""
    _require(isinstance(raw, dict), path, "expected an object")
    _require("target" in raw, f"{path}.target", "missing required field")
    cfg = _merge(RUN_DEFAULTS, raw)
    build_target(cfg["target"], f"{path}.target")
    _validate_kernel(cfg["kernel"], f"{path}.kernel")
    _validate_alpha(cfg["alpha"], f"{path}.alpha")
    _validate_history(cfg["history"], f"{path}.history")
    _validate_init(cfg["init"], f"{path}.init")
    _number(cfg, "n_iter", path, positive=True, integer=True)
    b = _number(cfg, "burn_in", path, nonneg=True)
    _require(b < 1, f"{path}.burn_in", "must lie in [0, 1)")
    _number(cfg, "stride", path, positive=True, integer=True)
    _number(cfg, "n_chains", path, positive=True, integer=True)
    _number(cfg, "seed", path, nonneg=True, integer=True)
    _require(cfg["cost_model"] in COST_MODELS, f"{path}.cost_model", f"expected one of {list(COST_MODELS)}")
    _require(cfg["hvp"].get("mode") in (None, "analytic", "forward", "central"), f"{path}.hvp.mode", "unknown hvp mode")
    _require(cfg["hvp"].get("tilt_score") in ("exact", "proxy"), f"{path}.hvp.tilt_score", "expected 'exact' or 'proxy'")
    from .driver import TEST_FUNCTIONS

    _require(cfg["test_function"] in TEST_FUNCTIONS, f"{path}.test_function", f"expected one of {sorted(TEST_FUNCTIONS)}")
    return cfg


def resolve_experiment(raw: Dict[str, Any]) -> Dict[str, Any]:
    """Validate a whole experiment config (schema_version, kind, run, sweep grid)."""
    _require(isinstance(raw, dict), "$", "config must be a JSON object")
    _require(raw.get("schema_version") == SCHEMA_VERSION, "schema_version", f"expected {SCHEMA_VERSION}")
    kind = raw.get("experiment", "run")
    _require(kind in EXPERIMENT_KINDS, "experiment", f"expected one of {list(EXPERIMENT_KINDS)}, got {kind!r}")
    cfg = copy.deepcopy(raw)
    cfg["experiment"] = kind
    cfg.setdefault("replicas", 1)
    _number(cfg, "replicas", "$", positive=True, integer=True)
    if kind == "theory-verify":
        cfg.setdefault("filter", None)
        return cfg
    _require("run" in cfg, "run", "missing required field")
    cfg["run"] = resolve_run(cfg["run"], "run")
    if kind == "sweep":
        grid = cfg.get("grid")
        _require(isinstance(grid, dict) and grid, "grid", "sweep needs a non-empty grid object")
        for axis, values in grid.items():
            _require(isinstance(values, list) and values, f"grid.{axis}", "grid axes must be non-empty lists")
            for v in values:
                resolve_run(apply_override(cfg["run"], axis, v), f"grid.{axis}")
    for key in ("comparison", "mode_coverage"):
        if key in cfg:
            _require(isinstance(cfg[key], dict), key, "expected an object")
    return cfg


def apply_override(run: Dict[str, Any], dotted: str, value) -> Dict[str, Any]:
    """Copy of ``run`` with the dotted field (e.g. ``alpha.alpha``) set to value."""
    out = copy.deepcopy(run)
    node = out
    keys = dotted.split(".")
    for k in keys[:-1]:
        node = node.setdefault(k, {})
    node[keys[-1]] = value
    return out


def load_config(path) -> Dict[str, Any]:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError("$", f"invalid JSON: {e}")
    return resolve_experiment(raw)


def config_hash(cfg: Dict[str, Any]) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:16]


def bundled_config_path(name: str) -> Path:
    return Path(__file__).parent / "configs" / name


def bundled_configs() -> Dict[str, Path]:
    return {p.name: p for p in sorted((Path(__file__).parent / "configs").glob("*.json"))}
