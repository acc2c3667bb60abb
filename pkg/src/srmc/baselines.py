"""Plain (history-free) kernels written directly against a TargetModel.

These are the reference implementations for the alpha=0 equivalence checks,
so they deliberately share no code with :mod:`srmc.kernels` beyond the random
draw order: normals first, then the accept uniform.
"""

from __future__ import annotations

import numpy as np
from scipy.special import logsumexp

from .kernels import ChainStreams
from .targets import TargetModel


def _draw_normal(rng, x):
    if isinstance(rng, ChainStreams):
        return rng.standard_normal(x.shape[-1])
    return rng.standard_normal(x.shape)


def _draw_uniform(rng, x):
    if isinstance(rng, ChainStreams):
        return rng.random()
    return rng.random(x.shape[:-1]) if x.ndim > 1 else rng.random()


def _where(mask, a, b):
    mask = np.asarray(mask)
    return np.where(mask[..., None], a, b) if mask.ndim else (a if mask else b)


def rw_mh(target: TargetModel, x, rng, scale=1.0):
    x = np.asarray(x, dtype=float)
    y = x + scale * _draw_normal(rng, x)
    log_r = target.log_density(y) - target.log_density(x)
    log_r = np.where(np.isnan(log_r), -np.inf, log_r)
    acc = np.log(_draw_uniform(rng, x)) < log_r
    return _where(acc, y, x), acc


def ula(target: TargetModel, x, rng, eta):
    x = np.asarray(x, dtype=float)
    return x + eta * target.score(x) + np.sqrt(2.0 * eta) * _draw_normal(rng, x)


def mala(target: TargetModel, x, rng, eta):
    x = np.asarray(x, dtype=float)
    gx = target.score(x)
    y = x + eta * gx + np.sqrt(2.0 * eta) * _draw_normal(rng, x)
    gy = target.score(y)
    a = y - x - eta * gx
    b = x - y - eta * gy
    log_r = target.log_density(y) - target.log_density(x)
    log_r = log_r - (np.sum(b * b, axis=-1) - np.sum(a * a, axis=-1)) / (4.0 * eta)
    log_r = np.where(np.isnan(log_r), -np.inf, log_r)
    acc = np.log(_draw_uniform(rng, x)) < log_r
    return _where(acc, y, x), acc


def hmc(target: TargetModel, x, rng, eta, n_steps, mass=None):
    x0 = np.asarray(x, dtype=float)
    if mass is None:
        p0 = _draw_normal(rng, x0)
        minv = None
    else:
        p0 = _draw_normal(rng, x0) @ np.linalg.cholesky(mass).T
        minv = np.linalg.inv(mass)
    q, p = x0, p0
    for _ in range(n_steps):
        p = p + 0.5 * eta * target.score(q)
        q = q + eta * (p if minv is None else p @ minv)
        p = p + 0.5 * eta * target.score(q)
    p = -p

    def kin(m):
        return 0.5 * np.sum(m * (m if minv is None else m @ minv), axis=-1)

    log_r = (-target.log_density(x0) + kin(p0)) - (-target.log_density(q) + kin(p))
    log_r = np.where(np.isfinite(log_r), log_r, -np.inf)
    acc = np.log(_draw_uniform(rng, x0)) < log_r
    return _where(acc, q, x0), acc


# ---------------------------------------------------------------------------
# Discrete
# ---------------------------------------------------------------------------


def _flip_neighbors(x, K):
    out = []
    for i in range(x.size):
        for off in range(1, K + 1):
            y = x.copy()
            y[i] = (x[i] + off) % (K + 1)
            out.append(y)
    return np.array(out)


def _inverse_cdf(u, log_p):
    c = np.cumsum(np.exp(log_p - log_p.max()))
    return int(min(np.searchsorted(c, u * c[-1], side="right"), c.size - 1))


def uniform_site_mh(target: TargetModel, x, rng):
    x = np.asarray(x, dtype=int)
    K = target.max_value
    j = int(rng.integers(x.size * K))
    i, off = divmod(j, K)
    y = x.copy()
    y[i] = (x[i] + off + 1) % (K + 1)
    log_r = target.log_density(y) - target.log_density(x)
    acc = bool(np.log(rng.random()) < log_r)
    return (y if acc else x), acc


_LOG_G = {
    "barker": lambda lt: -np.logaddexp(0.0, -lt),
    "sqrt": lambda lt: 0.5 * lt,
    "max": lambda lt: np.maximum(0.0, lt),
}


def locally_balanced(target: TargetModel, x, rng, g="barker"):
    x = np.asarray(x, dtype=int)
    K = target.max_value
    log_g = _LOG_G[g]

    def proposal(z):
        nb = _flip_neighbors(z, K)
        lw = log_g(target.log_density(nb) - target.log_density(z))
        return nb, lw - logsumexp(lw)

    nb_x, lq_x = proposal(x)
    j = _inverse_cdf(rng.random(), lq_x)
    y = nb_x[j]
    nb_y, lq_y = proposal(y)
    back = int(np.flatnonzero(np.all(nb_y == x, axis=1))[0])
    log_r = target.log_density(y) - target.log_density(x) + lq_y[back] - lq_x[j]
    acc = bool(np.log(rng.random()) < log_r)
    return (y if acc else x), acc


def gibbs_with_gradients(target: TargetModel, x, rng, temperature=2.0):
    x = np.asarray(x, dtype=int)
    K = target.max_value

    def proposal(z):
        nb = _flip_neighbors(z, K)
        g = target.score(z)
        i = np.repeat(np.arange(z.size), K)
        lw = temperature * g[i] * (nb[np.arange(len(nb)), i] - z[i])
        return nb, lw - logsumexp(lw)

    nb_x, lq_x = proposal(x)
    j = _inverse_cdf(rng.random(), lq_x)
    y = nb_x[j]
    nb_y, lq_y = proposal(y)
    back = int(np.flatnonzero(np.all(nb_y == x, axis=1))[0])
    log_r = target.log_density(y) - target.log_density(x) + lq_y[back] - lq_x[j]
    acc = bool(np.log(rng.random()) < log_r)
    return (y if acc else x), acc


def discrete_langevin(target: TargetModel, x, rng, eta):
    x = np.asarray(x, dtype=int)
    vals = np.arange(target.max_value + 1)

    def coord_logp(z):
        c = z + eta * target.score(z)
        lw = -((vals[None, :] - c[:, None]) ** 2) / (4.0 * eta)
        return lw - logsumexp(lw, axis=1, keepdims=True)

    lq_x = coord_logp(x)
    u = rng.random(x.size)
    y = np.array([_inverse_cdf(u[i], lq_x[i]) for i in range(x.size)], dtype=int)
    lq_y = coord_logp(y)
    idx = np.arange(x.size)
    log_r = (
        target.log_density(y) - target.log_density(x) + lq_y[idx, x].sum() - lq_x[idx, y].sum()
    )
    acc = bool(np.log(rng.random()) < log_r)
    return (y if acc else x), acc
