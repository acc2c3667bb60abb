"""Transition kernels targeting the tilted surrogate for a fixed history vector.

Continuous kernels (MH, ULA, MALA, HMC) accept one state of shape ``(d,)``
with a ``numpy.random.Generator`` or a batch ``(M, d)`` with a
:class:`ChainStreams`, which draws from one generator per chain in lockstep.
Discrete kernels work on a single state.

All kernels consume randomness in the same order as their counterparts in
:mod:`srmc.baselines`, which is what makes alpha=0 runs reproduce the
baselines bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional, Sequence, Union

import numpy as np
from scipy.special import logsumexp, log_expit

from .surrogate import SurrogateEval, TiltedSurrogate, tilted_log_density
from .targets import enumerate_states

KINDS = ("mh", "ula", "mala", "hmc", "discrete-gi")
DGI_FAMILIES = ("barker", "sqrt", "max", "gwg", "dlp")


class KernelConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Randomness
# ---------------------------------------------------------------------------


class ChainStreams:
    """One generator per chain, drawn in lockstep; the batch axis comes first.

    Each chain consumes exactly what it would consume running alone, so a
    chain's trajectory does not depend on which other chains share its batch.
    """

    def __init__(self, generators: Sequence[np.random.Generator]):
        self.generators = list(generators)

    def __len__(self):
        return len(self.generators)

    def standard_normal(self, size):
        return np.stack([g.standard_normal(size) for g in self.generators])

    def random(self, size=None):
        return np.array([g.random(size) for g in self.generators])


class ZeroNoise:
    """Test hook: Gaussian draws are exactly zero, uniforms are 0.5."""

    def standard_normal(self, size):
        return np.zeros(size)

    def random(self, size=None):
        return 0.5 if size is None else np.full(size, 0.5)

    def integers(self, high, size=None):
        return 0 if size is None else np.zeros(size, dtype=int)


RandomSource = Union[np.random.Generator, ChainStreams, ZeroNoise]


def _normal(rng, batch_shape, d):
    if isinstance(rng, ChainStreams):
        return rng.standard_normal(d)
    return rng.standard_normal(batch_shape + (d,))


def _uniform(rng, batch_shape):
    if isinstance(rng, ChainStreams):
        return rng.random()
    return rng.random(batch_shape) if batch_shape else rng.random()


def _categorical(u: float, log_probs: np.ndarray) -> int:
    """Inverse-CDF draw from normalized log-probabilities with one uniform."""
    cdf = np.cumsum(np.exp(log_probs - log_probs.max()))
    return int(min(np.searchsorted(cdf, u * cdf[-1], side="right"), cdf.size - 1))


# ---------------------------------------------------------------------------
# Configuration and results
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KernelConfig:
    """Kernel kind and parameters.

    ``proposal_scale`` is the random-walk standard deviation for continuous MH.
    ``family`` selects the discrete gradient-informed proposal; ``balancing``
    may override the named balancing function with a callable g(t).
    """

    kind: str
    eta: float = 0.01
    leapfrog_steps: int = 10
    mass: Optional[np.ndarray] = None
    proposal_scale: float = 1.0
    family: str = "barker"
    temperature: float = 2.0
    balancing: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise KernelConfigError(f"unknown kernel kind {self.kind!r}")
        if not self.eta > 0:
            raise KernelConfigError("eta must be positive")
        if int(self.leapfrog_steps) < 1:
            raise KernelConfigError("leapfrog_steps must be at least 1")
        if not self.proposal_scale > 0:
            raise KernelConfigError("proposal_scale must be positive")
        if not self.temperature > 0:
            raise KernelConfigError("temperature must be positive")
        if self.family not in DGI_FAMILIES:
            raise KernelConfigError(f"unknown discrete proposal family {self.family!r}")
        if self.mass is not None:
            mass = np.atleast_2d(np.asarray(self.mass, dtype=float))
            if mass.shape[0] != mass.shape[1] or not np.allclose(mass, mass.T):
                raise KernelConfigError("mass matrix must be square and symmetric")
            if np.linalg.eigvalsh(mass).min() <= 0:
                raise KernelConfigError("mass matrix must be positive definite")
            object.__setattr__(self, "mass", mass)
        if self.kind == "discrete-gi" and self.family in ("barker", "sqrt", "max"):
            # Fails early on an invalid custom balancing function.
            log_balancing(self.balancing or self.family)


class PointEval(NamedTuple):
    """Cached quantities at a state: log-density and base (or exponent) score."""

    log_density: np.ndarray
    score: np.ndarray


class KernelOutcome(NamedTuple):
    next_state: np.ndarray
    accepted: np.ndarray
    proposal: np.ndarray
    log_accept_ratio: np.ndarray
    grad_evals: int
    score_at_next: np.ndarray
    next_eval: Optional[PointEval] = None
    fault: np.ndarray = np.False_


def evaluate_point(sur: TiltedSurrogate, x) -> PointEval:
    return PointEval(sur.base.log_density(x), sur.exponent_score(x))


def _accept(log_r, u):
    # NaN log-ratios never accept.
    return np.log(u) < log_r


def _sanitize(log_r):
    log_r = np.asarray(log_r, dtype=float)
    bad = np.isnan(log_r)
    return np.where(bad, -np.inf, log_r), bad


def _select(mask, a, b):
    mask = np.asarray(mask)
    if mask.ndim == 0:
        return a if mask else b
    return np.where(mask[..., None], a, b)


def _tilt_delta(sur: TiltedSurrogate, s_new, s_old):
    """alpha theta.(s_new - s_old); the log of the inverse repellence factor."""
    return sur.alpha * np.sum(sur.theta * (s_new - s_old), axis=-1)


# ---------------------------------------------------------------------------
# Continuous kernels
# ---------------------------------------------------------------------------


def mh_step(sur: TiltedSurrogate, x, rng, proposal_scale: float = 1.0, cache=None) -> KernelOutcome:
    """Metropolis-Hastings on the surrogate; Gaussian random walk or uniform single-site."""
    if sur.base.is_discrete:
        return _discrete_mh_step(sur, x, rng, cache)
    x = np.asarray(x, dtype=float)
    batch = x.shape[:-1]
    evals = 0
    if cache is None:
        cache = evaluate_point(sur, x)
        evals += 1
    y = x + proposal_scale * _normal(rng, batch, x.shape[-1])
    lp_y = sur.base.log_density(y)
    s_y = sur.base.score(y)
    evals += 1
    log_r = lp_y - cache.log_density
    if sur.active:
        log_r = log_r - _tilt_delta(sur, s_y, cache.score)
    log_r, bad = _sanitize(log_r)
    acc = _accept(log_r, _uniform(rng, batch))
    nxt = _select(acc, y, x)
    s_next = _select(acc, s_y, cache.score)
    lp_next = np.where(acc, lp_y, cache.log_density)
    return KernelOutcome(nxt, acc, y, log_r, evals, s_next, PointEval(lp_next, s_next), bad)


def ula_step(sur: TiltedSurrogate, x, eta: float, rng, cache=None) -> KernelOutcome:
    """One Euler-Maruyama step driven by the surrogate score."""
    x = np.asarray(x, dtype=float)
    batch = x.shape[:-1]
    evals = 0
    if cache is None:
        ev = sur.evaluate(x)
        evals += ev.grad_evals
    else:
        ev = _evaluate_with_cached_score(sur, x, cache.score)
        evals += ev.grad_evals - 1
    y = x + eta * ev.score + np.sqrt(2.0 * eta) * _normal(rng, batch, x.shape[-1])
    fault = ~np.all(np.isfinite(y), axis=-1)
    s_y = sur.base.score(y)
    evals += 1
    acc = np.ones(batch, dtype=bool) if batch else np.True_
    return KernelOutcome(y, acc, y, np.zeros(batch), evals, s_y, PointEval(np.nan, s_y), fault)


def _evaluate_with_cached_score(sur: TiltedSurrogate, x, s) -> SurrogateEval:
    if not sur.active:
        return SurrogateEval(s, s, 1)
    return SurrogateEval(s + sur.alpha * sur.hvp_theta(x, s), s, 1 + sur.hvp_cost)


def mala_step(sur: TiltedSurrogate, x, eta: float, rng, cache=None) -> KernelOutcome:
    """Langevin proposal with the surrogate score and a Metropolis correction on the surrogate."""
    x = np.asarray(x, dtype=float)
    batch = x.shape[:-1]
    evals = 0
    if cache is None:
        lp_x = sur.base.log_density(x)
        ev_x = sur.evaluate(x)
        evals += ev_x.grad_evals
    else:
        lp_x = cache.log_density
        ev_x = _evaluate_with_cached_score(sur, x, cache.score)
        evals += ev_x.grad_evals - 1
    y = x + eta * ev_x.score + np.sqrt(2.0 * eta) * _normal(rng, batch, x.shape[-1])
    lp_y = sur.base.log_density(y)
    ev_y = sur.evaluate(y)
    evals += ev_y.grad_evals
    fwd = y - x - eta * ev_x.score
    bwd = x - y - eta * ev_y.score
    log_r = lp_y - lp_x
    if sur.active:
        log_r = log_r - _tilt_delta(sur, ev_y.base_score, ev_x.base_score)
    log_r = log_r - (np.sum(bwd * bwd, axis=-1) - np.sum(fwd * fwd, axis=-1)) / (4.0 * eta)
    log_r, bad = _sanitize(log_r)
    acc = _accept(log_r, _uniform(rng, batch))
    nxt = _select(acc, y, x)
    s_next = _select(acc, ev_y.base_score, ev_x.base_score)
    lp_next = np.where(acc, lp_y, lp_x)
    return KernelOutcome(nxt, acc, y, log_r, evals, s_next, PointEval(lp_next, s_next), bad)


def leapfrog(score_fn, x, v, eta: float, n_steps: int, inv_mass=None):
    """Leapfrog integration with two score evaluations per step.

    ``score_fn`` returns a :class:`SurrogateEval`. Returns the final position,
    final momentum (not flipped), the evaluations at the start and at the end,
    and the number of score-function calls.
    """
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    first = last = None
    for _ in range(n_steps):
        ev = score_fn(x)
        if first is None:
            first = ev
        v = v + 0.5 * eta * ev.score
        x = x + eta * (v if inv_mass is None else v @ inv_mass)
        last = score_fn(x)
        v = v + 0.5 * eta * last.score
    return x, v, first, last, 2 * n_steps


def kinetic_energy(v, inv_mass=None):
    v = np.asarray(v, dtype=float)
    mv = v if inv_mass is None else v @ inv_mass
    return 0.5 * np.sum(v * mv, axis=-1)


def surrogate_potential(sur: TiltedSurrogate, x, lp=None, s=None):
    """U(x) + alpha theta.s(x), whose negative gradient is the surrogate score."""
    u = -(sur.base.log_density(x) if lp is None else lp)
    if not sur.active:
        return u
    s = sur.base.score(x) if s is None else s
    return u + sur.alpha * np.sum(sur.theta * s, axis=-1)


def hmc_step(
    sur: TiltedSurrogate, x, eta: float, n_steps: int, rng, mass=None, cache=None
) -> KernelOutcome:
    """HMC on the surrogate Hamiltonian; theta is fixed for the whole trajectory."""
    x = np.asarray(x, dtype=float)
    batch = x.shape[:-1]
    d = x.shape[-1]
    inv_mass = None
    if mass is None:
        v0 = _normal(rng, batch, d)
    else:
        chol = np.linalg.cholesky(mass)
        inv_mass = np.linalg.inv(mass)
        v0 = _normal(rng, batch, d) @ chol.T
    lp_x = sur.base.log_density(x) if cache is None else cache.log_density
    y, v, first, last, calls = leapfrog(sur.evaluate, x, v0, eta, n_steps, inv_mass)
    evals = calls * (1 + sur.hvp_cost)
    v_flip = -v
    lp_y = sur.base.log_density(y)
    h_x = surrogate_potential(sur, x, lp_x, first.base_score) + kinetic_energy(v0, inv_mass)
    h_y = surrogate_potential(sur, y, lp_y, last.base_score) + kinetic_energy(v_flip, inv_mass)
    log_r = h_x - h_y
    bad = ~np.isfinite(log_r)
    log_r = np.where(bad, -np.inf, log_r)
    acc = _accept(log_r, _uniform(rng, batch))
    nxt = _select(acc, y, x)
    s_next = _select(acc, last.base_score, first.base_score)
    lp_next = np.where(acc, lp_y, lp_x)
    return KernelOutcome(nxt, acc, y, log_r, evals, s_next, PointEval(lp_next, s_next), bad)


# ---------------------------------------------------------------------------
# Discrete kernels
# ---------------------------------------------------------------------------


def _log_barker(log_t):
    return log_expit(log_t)


def _log_sqrt(log_t):
    return 0.5 * log_t


def _log_max(log_t):
    return np.maximum(0.0, log_t)


_NAMED_BALANCING = {"barker": _log_barker, "sqrt": _log_sqrt, "max": _log_max}
_BALANCING_PROBES = np.logspace(-3, 3, 25)


def log_balancing(g) -> Callable[[np.ndarray], np.ndarray]:
    """Log of a balancing function, given by name or as a callable g(t).

    A callable is checked against g(t) = t g(1/t) on probe points.
    """
    if isinstance(g, str):
        if g not in _NAMED_BALANCING:
            raise KernelConfigError(f"unknown balancing function {g!r}")
        return _NAMED_BALANCING[g]
    t = _BALANCING_PROBES
    lhs = np.asarray(g(t), dtype=float)
    rhs = t * np.asarray(g(1.0 / t), dtype=float)
    if not (np.all(lhs > 0) and np.allclose(lhs, rhs, rtol=1e-9, atol=0)):
        raise KernelConfigError("balancing function violates g(t) = t g(1/t)")
    return lambda log_t: np.log(g(np.exp(log_t)))


def single_site_neighbors(x, max_value: int):
    """All states differing from x in one coordinate, coordinate-major, shape (d*K, d)."""
    x = np.asarray(x, dtype=int)
    d = x.size
    offsets = np.arange(1, max_value + 1)
    nbrs = np.repeat(x[None, :], d * max_value, axis=0)
    coord = np.repeat(np.arange(d), max_value)
    nbrs[np.arange(d * max_value), coord] = (x[coord] + np.tile(offsets, d)) % (max_value + 1)
    return nbrs


def _neighbor_index(x, y, max_value: int) -> int:
    """Position of y in single_site_neighbors(x)."""
    i = int(np.flatnonzero(x != y)[0])
    offset = (int(y[i]) - int(x[i])) % (max_value + 1)
    return i * max_value + offset - 1


def proposal_distribution(sur: TiltedSurrogate, x, config: KernelConfig):
    """Support and normalized log-probabilities of the discrete proposal at x.

    For DLP the support is the full product space, so this is only meant for
    enumerable oracles; :func:`discrete_gi_step` samples coordinate-wise.
    """
    x = np.asarray(x, dtype=int)
    K = sur.base.max_value
    if config.kind == "mh":
        nbrs = single_site_neighbors(x, K)
        return nbrs, np.full(len(nbrs), -np.log(len(nbrs)))
    fam = config.family
    if fam in _NAMED_BALANCING:
        nbrs = single_site_neighbors(x, K)
        log_t = tilted_log_density(sur, nbrs) - tilted_log_density(sur, x)
        lw = log_balancing(config.balancing or fam)(log_t)
        return nbrs, lw - logsumexp(lw)
    st = sur.evaluate(x).score
    if fam == "gwg":
        nbrs = single_site_neighbors(x, K)
        lw = _gwg_logits(x, nbrs, st, config.temperature)
        return nbrs, lw - logsumexp(lw)
    states = enumerate_states(x.size, K)
    lq = _dlp_coordinate_logprobs(x, st, config.eta, K)
    return states, lq[np.arange(x.size), states].sum(axis=1)


def _gwg_logits(x, nbrs, s_tilde, temperature):
    delta = (nbrs - x).sum(axis=1)
    coord = np.argmax(nbrs != x, axis=1)
    return temperature * s_tilde[coord] * delta


def _dlp_coordinate_logprobs(x, s_tilde, eta, max_value):
    """Per-coordinate log-probabilities over {0..K}, shape (d, K+1)."""
    vals = np.arange(max_value + 1)
    centre = x + eta * s_tilde
    lw = -((vals[None, :] - centre[:, None]) ** 2) / (4.0 * eta)
    return lw - logsumexp(lw, axis=1, keepdims=True)


def _discrete_mh_step(sur, x, rng, cache=None) -> KernelOutcome:
    x = np.asarray(x, dtype=int)
    K = sur.base.max_value
    n_nbrs = x.size * K
    j = int(rng.integers(n_nbrs))
    i, off = divmod(j, K)
    y = x.copy()
    y[i] = (x[i] + off + 1) % (K + 1)
    lp_x = tilted_log_density(sur, x)
    lp_y = tilted_log_density(sur, y)
    log_r, bad = _sanitize(lp_y - lp_x)
    acc = bool(_accept(log_r, rng.random()))
    nxt = y if acc else x
    s_next = sur.exponent_score(nxt)
    return KernelOutcome(nxt, acc, y, log_r, 2, s_next, None, bad)


def discrete_gi_step(sur: TiltedSurrogate, x, config: KernelConfig, rng) -> KernelOutcome:
    """Gradient-informed discrete proposal with a Metropolis correction on the surrogate."""
    x = np.asarray(x, dtype=int)
    K = sur.base.max_value
    fam = config.family
    evals = 0
    if fam == "dlp":
        ev_x = sur.evaluate(x)
        lq_x = _dlp_coordinate_logprobs(x, ev_x.score, config.eta, K)
        u = rng.random(x.size)
        y = np.array([_categorical(u[i], lq_x[i]) for i in range(x.size)], dtype=int)
        ev_y = sur.evaluate(y)
        lq_y = _dlp_coordinate_logprobs(y, ev_y.score, config.eta, K)
        idx = np.arange(x.size)
        log_fwd = lq_x[idx, y].sum()
        log_bwd = lq_y[idx, x].sum()
        evals = ev_x.grad_evals + ev_y.grad_evals
    else:
        nbrs_x, lq_x = proposal_distribution(sur, x, config)
        j = _categorical(rng.random(), lq_x)
        y = nbrs_x[j].copy()
        _, lq_y = proposal_distribution(sur, y, config)
        log_fwd = lq_x[j]
        log_bwd = lq_y[_neighbor_index(y, x, K)]
        if fam == "gwg":
            evals = 2 * (1 + sur.hvp_cost)
    log_r = tilted_log_density(sur, y) - tilted_log_density(sur, x) + log_bwd - log_fwd
    log_r, bad = _sanitize(log_r)
    acc = bool(_accept(log_r, rng.random()))
    nxt = y if acc else x
    s_next = sur.exponent_score(nxt)
    return KernelOutcome(nxt, acc, y, log_r, evals, s_next, None, bad)


def discrete_transition_matrix(sur: TiltedSurrogate, config: KernelConfig) -> np.ndarray:
    """Exact transition matrix of a discrete kernel at fixed theta, over enumerate_states order."""
    from .targets import state_index

    base = sur.base
    states = enumerate_states(base.dim, base.max_value)
    n = len(states)
    log_pt = tilted_log_density(sur, states)
    P = np.zeros((n, n))
    for a, x in enumerate(states):
        ys, lq = proposal_distribution(sur, x, config)
        for y, lq_xy in zip(ys, lq):
            b = int(state_index(y, base.max_value))
            if b == a:
                P[a, a] += np.exp(lq_xy)
                continue
            _, lq_rev = proposal_distribution(sur, y, config)
            if config.kind == "discrete-gi" and config.family == "dlp":
                lq_yx = lq_rev[a]
            else:
                lq_yx = lq_rev[_neighbor_index(y, x, base.max_value)]
            log_r = log_pt[b] - log_pt[a] + lq_yx - lq_xy
            P[a, b] += np.exp(lq_xy) * min(1.0, np.exp(log_r))
        # exact row sums matter for the stationary solve; clamp rounding below zero
        P[a, a] += max(1.0 - P[a].sum(), 0.0)
    return P


def stationary_distribution(P: np.ndarray) -> np.ndarray:
    """Left eigenvector of P for eigenvalue 1, normalized to a probability vector.

    Solved as the linear system p (P - I) = 0 with one equation swapped for
    sum(p) = 1; this is more accurate than a dense eigensolver when P has
    eigenvalues clustered near 1.
    """
    n = P.shape[0]
    A = P.T - np.eye(n)
    A[-1] = 1.0
    rhs = np.zeros(n)
    rhs[-1] = 1.0
    p = np.linalg.solve(A, rhs)
    return p / p.sum()


def step(config: KernelConfig, sur: TiltedSurrogate, x, rng, cache=None) -> KernelOutcome:
    """Dispatch one transition for the configured kernel."""
    kind = config.kind
    if kind == "mh":
        return mh_step(sur, x, rng, config.proposal_scale, cache)
    if kind == "ula":
        return ula_step(sur, x, config.eta, rng, cache)
    if kind == "mala":
        return mala_step(sur, x, config.eta, rng, cache)
    if kind == "hmc":
        return hmc_step(sur, x, config.eta, config.leapfrog_steps, rng, config.mass, cache)
    return discrete_gi_step(sur, x, config, rng)
