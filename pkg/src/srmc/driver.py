"""The outer loop: kernel step on the current surrogate, then the history update.

Chains are independent. Continuous kernels with a deterministic repellence
schedule run all chains of a config in lockstep as one batch (one generator
per chain); discrete kernels and the guardrail schedule run chain by chain.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np

from . import __version__
from .history import AlphaSchedule, GUARDRAIL, HistoryState, alpha_step, gamma, update_history
from .kernels import ChainStreams, KernelConfig, step
from .surrogate import TiltedSurrogate
from .targets import GaussianSpec, TargetModel

TEST_FUNCTIONS = {
    "identity": lambda x: np.asarray(x, dtype=float),
    "second-moment": lambda x: np.asarray(x, dtype=float) ** 2,
}

MONITOR_POINT = "pre-update theta, score at the post-step state"


@dataclass
class RunConfig:
    """Everything one run needs; ``target`` is a spec dict or a built TargetModel."""

    target: Union[Dict[str, Any], TargetModel]
    kernel: KernelConfig
    alpha: Dict[str, Any] = field(default_factory=lambda: {"kind": "fixed", "alpha": 0.0})
    rho: float = 0.6
    gamma_scale: float = 1.0
    gamma_offset: int = 1
    theta0: Optional[Sequence[float]] = None
    mu0: Optional[Sequence[float]] = None
    test_function: str = "identity"
    init: Dict[str, Any] = field(default_factory=lambda: {"kind": "target_draw"})
    n_iter: int = 1000
    burn_in: float = 0.0
    stride: int = 1
    n_chains: int = 1
    seed: int = 0
    cost_model: str = "measured"
    hvp_mode: Optional[str] = None
    eps: Optional[float] = None
    tilt_score: str = "exact"

    def __post_init__(self):
        if self.n_iter < 1:
            raise ValueError("n_iter must be at least 1")
        if not 0 <= self.burn_in < 1:
            raise ValueError("burn_in must lie in [0, 1)")
        if self.n_chains < 1:
            raise ValueError("n_chains must be at least 1")
        if self.stride < 1:
            raise ValueError("stride must be at least 1")

    @classmethod
    def from_dict(cls, cfg: Dict[str, Any]) -> "RunConfig":
        """From a resolved run dict (see :func:`srmc.config.resolve_run`)."""
        k = dict(cfg["kernel"])
        kernel = KernelConfig(
            kind=k.pop("kind"),
            **{key: (np.asarray(v) if key == "mass" else v) for key, v in k.items()},
        )
        h = cfg["history"]
        return cls(
            target=cfg["target"],
            kernel=kernel,
            alpha=dict(cfg["alpha"]),
            rho=h["rho"],
            gamma_scale=h["scale"],
            gamma_offset=int(h["offset"]),
            theta0=h.get("theta0"),
            mu0=h.get("mu0"),
            test_function=cfg["test_function"],
            init=dict(cfg["init"]),
            n_iter=int(cfg["n_iter"]),
            burn_in=float(cfg["burn_in"]),
            stride=int(cfg["stride"]),
            n_chains=int(cfg["n_chains"]),
            seed=int(cfg["seed"]),
            cost_model=cfg["cost_model"],
            hvp_mode=cfg["hvp"].get("mode"),
            eps=cfg["hvp"].get("eps"),
            tilt_score=cfg["hvp"].get("tilt_score", "exact"),
        )

    def build_target(self) -> TargetModel:
        if isinstance(self.target, TargetModel):
            return self.target
        from .config import build_target

        return build_target(self.target)

    def make_schedule(self) -> AlphaSchedule:
        a = dict(self.alpha)
        kind = a.pop("kind", "fixed")
        if kind != "fixed":
            a.setdefault("total_budget", self.n_iter * (self.kernel.leapfrog_steps if self.kernel.kind == "hmc" else 1))
            a.setdefault("leapfrog_steps", self.kernel.leapfrog_steps if self.kernel.kind == "hmc" else 1)
        return AlphaSchedule(kind=kind, **a)

    @property
    def repellent(self) -> bool:
        a = self.alpha
        return a.get("kind", "fixed") != "fixed" or a.get("alpha", 0.0) > 0


@dataclass
class RunRecord:
    """Strided per-step rows plus terminal summary for one chain."""

    chain: int
    seed: Any
    n: np.ndarray
    state: np.ndarray
    theta: np.ndarray
    mu: np.ndarray
    accepted: np.ndarray
    grad_evals: np.ndarray
    alpha: np.ndarray
    xbar: np.ndarray
    fault: Optional[str] = None
    summary: Dict[str, Any] = field(default_factory=dict)
    metadata: Dict[str, Any] = field(default_factory=dict)

    def rows(self):
        """JSONL-ready rows."""
        for i in range(self.n.size):
            yield {
                "n": int(self.n[i]),
                "state": self.state[i].tolist(),
                "theta": self.theta[i].tolist(),
                "mu": self.mu[i].tolist(),
                "accepted": bool(self.accepted[i]),
                "grad_evals": int(self.grad_evals[i]),
                "alpha": float(self.alpha[i]),
                "xbar": self.xbar[i].tolist() if np.all(np.isfinite(self.xbar[i])) else None,
            }


def chain_seed(base_seed: int, chain: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(base_seed, spawn_key=(chain,))


def initial_state(cfg: RunConfig, target: TargetModel, rng: np.random.Generator) -> np.ndarray:
    kind = cfg.init.get("kind", "target_draw")
    if kind == "fixed":
        x0 = np.asarray(cfg.init["point"], dtype=float)
        if x0.shape != (target.dim,):
            raise ValueError(f"init.point has shape {x0.shape}, expected ({target.dim},)")
    elif kind == "target_draw":
        if target.sample is None and target.is_discrete and (target.max_value + 1) ** target.dim <= 2**20:
            from .targets import enumerate_states, normalized_table

            p = normalized_table(target)
            x0 = enumerate_states(target.dim, target.max_value)[rng.choice(p.size, p=p)]
        elif target.sample is None:
            raise ValueError("init kind 'target_draw' needs an exactly samplable target")
        else:
            x0 = target.sample(rng, 1)[0]
    elif kind == "uniform_box":
        low = np.broadcast_to(np.asarray(cfg.init["low"], dtype=float), (target.dim,))
        high = np.broadcast_to(np.asarray(cfg.init["high"], dtype=float), (target.dim,))
        x0 = low + (high - low) * rng.random(target.dim)
    else:
        raise ValueError(f"unknown init kind {kind!r}")
    if target.is_discrete:
        x0 = np.clip(np.rint(x0), 0, target.max_value).astype(int)
    return x0


def run_chain(cfg: RunConfig, chain: int = 0, seed=None) -> RunRecord:
    """Run one chain; ``seed`` overrides the derived per-chain seed."""
    if not 0 <= chain < cfg.n_chains:
        raise ValueError(f"chain index {chain} outside [0, {cfg.n_chains})")
    return _run(cfg, [chain], [seed if seed is not None else chain_seed(cfg.seed, chain)])[0]


def run_chains(cfg: RunConfig, seeds: Optional[Sequence] = None) -> List[RunRecord]:
    """Run all chains of ``cfg``; ``seeds`` (test hook) replaces the derived seeds."""
    chains = list(range(cfg.n_chains))
    if seeds is None:
        seeds = [chain_seed(cfg.seed, k) for k in chains]
    if len(seeds) != len(chains):
        raise ValueError("one seed per chain required")
    target = cfg.build_target()
    if target.is_discrete or cfg.alpha.get("kind") == GUARDRAIL:
        return [_run(cfg, [k], [s], target)[0] for k, s in zip(chains, seeds)]
    return _run(cfg, chains, seeds, target)


def _run(cfg: RunConfig, chains, seeds, target=None) -> List[RunRecord]:
    target = target or cfg.build_target()
    M = len(chains)
    d = target.dim
    gens = [np.random.default_rng(s) for s in seeds]
    x = np.stack([initial_state(cfg, target, g) for g in gens])
    f = TEST_FUNCTIONS[cfg.test_function]
    m = f(x[0]).size
    theta = np.broadcast_to(np.zeros(d) if cfg.theta0 is None else np.asarray(cfg.theta0, float), (M, d)).copy()
    mu = np.broadcast_to(np.zeros(m) if cfg.mu0 is None else np.asarray(cfg.mu0, float), (M, m)).copy()
    hist = HistoryState(theta, mu, 0, cfg.rho, cfg.gamma_scale, cfg.gamma_offset)
    sched = cfg.make_schedule()

    single = M == 1 and (target.is_discrete or sched.kind == GUARDRAIL)
    rng = gens[0] if single else ChainStreams(gens)
    if single:
        x = x[0]

    N, stride = cfg.n_iter, cfg.stride
    rows = [n for n in range(stride, N + 1, stride)]
    if rows[-1] != N:
        rows.append(N)
    R = len(rows)
    rec_state = np.zeros((R, M, d), dtype=x.dtype)
    rec_theta = np.zeros((R, M, d))
    rec_mu = np.zeros((R, M, m))
    rec_acc = np.zeros((R, M), dtype=bool)
    rec_grad = np.zeros((R, M), dtype=np.int64)
    rec_alpha = np.zeros(R)
    rec_xbar = np.full((R, M, d), np.nan)
    n_accept = np.zeros(M)
    fault = [None] * M
    alive = np.ones(M, dtype=bool)
    valid_rows = np.full(M, R)

    burn = int(np.floor(cfg.burn_in * N))
    xsum = np.zeros((M, d))
    cum_grad = 0
    cache = None
    monitor = None
    r = 0
    t0 = time.perf_counter()
    for k in range(N):
        a = alpha_step(sched, k, monitor)
        sur = TiltedSurrogate(target, hist.theta[0] if single else hist.theta, a, cfg.hvp_mode, cfg.eps, cfg.tilt_score)
        try:
            out = step(cfg.kernel, sur, x, rng, cache)
        except FloatingPointError as e:
            out = None
            err = str(e)
        s_next = None if out is None else np.atleast_2d(out.score_at_next)
        bad = np.ones(M, dtype=bool) if out is None else (
            np.atleast_1d(out.fault) | ~np.all(np.isfinite(s_next), axis=-1)
            | ~np.all(np.isfinite(np.atleast_2d(out.next_state)), axis=-1)
        )
        newly = bad & alive
        for j in np.flatnonzero(newly):
            fault[j] = f"non-finite state or score at iteration {k + 1}" if out is not None else err
            valid_rows[j] = r
        alive &= ~bad
        if not alive.any():
            break
        x_new = np.atleast_2d(out.next_state)
        x_prev = np.atleast_2d(x)
        x_new = np.where(alive[:, None], x_new, x_prev)
        s_next = np.where(alive[:, None], s_next, hist.theta)
        if sched.kind == GUARDRAIL:
            monitor = float(a * abs(np.sum(s_next[0] * hist.theta[0])))
        f_next = np.where(alive[:, None], f(x_new), hist.mu)
        hist = update_history(hist, s_next, f_next)
        cum_grad += out.grad_evals
        acc = np.atleast_1d(out.accepted) & alive
        n_accept += acc
        x = x_new[0] if single else x_new
        cache = out.next_eval
        if cache is not None and not alive.all():
            cache = None
        if k + 1 > burn:
            xsum += x_new
        if k + 1 == rows[r]:
            rec_state[r] = x_new
            rec_theta[r] = hist.theta
            rec_mu[r] = hist.mu
            rec_acc[r] = acc
            rec_grad[r] = cum_grad
            rec_alpha[r] = a
            if k + 1 > burn:
                rec_xbar[r] = xsum / (k + 1 - burn)
            r += 1
    wall = time.perf_counter() - t0

    meta = {
        "version": __version__,
        "hvp_mode": sur.hvp_mode,
        "eps": sur.eps,
        "tilt_score": cfg.tilt_score if target.is_discrete else None,
        "kernel": cfg.kernel.kind,
        "dim": d,
        "repellent": cfg.repellent,
        "leapfrog_steps": cfg.kernel.leapfrog_steps if cfg.kernel.kind == "hmc" else 1,
        "cost_model": cfg.cost_model,
        "monitor_point": MONITOR_POINT if sched.kind == GUARDRAIL else None,
        "alpha_schedule": sched.kind,
        "frozen_at": sched.frozen_at,
    }
    out_records = []
    for j, ch in enumerate(chains):
        v = int(valid_rows[j])
        summ = {
            "final_mu": rec_mu[v - 1, j].tolist() if v else None,
            "final_theta": rec_theta[v - 1, j].tolist() if v else None,
            "final_xbar": rec_xbar[v - 1, j].tolist() if v and np.all(np.isfinite(rec_xbar[v - 1, j])) else None,
            "acceptance_rate": float(n_accept[j] / max(1, rows[v - 1] if v else 1)),
            "total_grad_evals": int(rec_grad[v - 1, j]) if v else 0,
            "wall_clock": wall,
            "iterations": int(rows[v - 1]) if v else 0,
        }
        seed_repr = seeds[j]
        if isinstance(seed_repr, np.random.SeedSequence):
            seed_repr = {"entropy": seed_repr.entropy, "spawn_key": list(seed_repr.spawn_key)}
        out_records.append(
            RunRecord(
                chain=ch,
                seed=seed_repr,
                n=np.asarray(rows[:v]),
                state=rec_state[:v, j],
                theta=rec_theta[:v, j],
                mu=rec_mu[:v, j],
                accepted=rec_acc[:v, j],
                grad_evals=rec_grad[:v, j],
                alpha=rec_alpha[:v],
                xbar=rec_xbar[:v, j],
                fault=fault[j],
                summary=summ,
                metadata=dict(meta),
            )
        )
    return out_records


# ---------------------------------------------------------------------------
# Independent surrogate sampling (Gaussian base)
# ---------------------------------------------------------------------------


def _gaussian_spec_of(sur_or_target) -> GaussianSpec:
    base = sur_or_target.base if isinstance(sur_or_target, TiltedSurrogate) else sur_or_target
    if not isinstance(base.spec, GaussianSpec):
        raise TypeError("independent surrogate sampling needs a Gaussian base target")
    return base.spec


def independent_surrogate_step(sur: TiltedSurrogate, rng: np.random.Generator) -> np.ndarray:
    """Exact draw from the tilted Gaussian N(mean + alpha theta, V)."""
    spec = _gaussian_spec_of(sur)
    chol = np.linalg.cholesky(spec.covariance)
    return spec.mean + sur.alpha * sur.theta + chol @ rng.standard_normal(spec.dim)


def independent_surrogate_replicas(
    spec: GaussianSpec,
    alpha: float,
    n_iter: int,
    replicas: int,
    rng: np.random.Generator,
    rho: float = 1.0,
    scale: float = 1.0,
    offset: int = 1,
):
    """R independent histories driven by exact surrogate draws, vectorized over replicas.

    Returns ``(theta_n, mu_n)`` with shapes (R, d); mu is the running estimate
    of E[X] under the same step sizes (the sample mean when rho=1, offset=1).
    """
    d = spec.dim
    chol = np.linalg.cholesky(spec.covariance)
    precision = np.linalg.inv(spec.covariance)
    theta = np.zeros((replicas, d))
    mu = np.zeros((replicas, d))
    for n in range(n_iter):
        x = spec.mean + alpha * theta + rng.standard_normal((replicas, d)) @ chol.T
        s = -(x - spec.mean) @ precision
        g = gamma(n, rho, scale, offset)
        theta += g * (s - theta)
        mu += g * (x - mu)
    return theta, mu


# ---------------------------------------------------------------------------
# Output files
# ---------------------------------------------------------------------------


def write_records(out_dir, records: Sequence[RunRecord], resolved: Optional[Dict[str, Any]] = None, extra=None):
    """Write ``chain-<k>.jsonl`` files and ``summary.json`` under out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for rec in records:
        with open(out / f"chain-{rec.chain}.jsonl", "w") as fh:
            for row in rec.rows():
                fh.write(json.dumps(row) + "\n")
    summary = {
        "chains": [
            {"chain": rec.chain, "seed": rec.seed, "fault": rec.fault, **rec.summary} for rec in records
        ],
        "metadata": records[0].metadata if records else {},
    }
    if resolved is not None:
        from .config import config_hash

        summary["metadata"] = dict(summary["metadata"], config_hash=config_hash(resolved))
    if extra:
        summary.update(extra)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return out


def read_jsonl(path) -> List[Dict[str, Any]]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]
