"""Target distributions: the abstraction shared by every kernel, plus the
analytic targets used in the experiments.

All log-densities are unnormalized. Every callable accepts a single state of
shape ``(d,)`` or a batch of shape ``(..., d)`` and broadcasts accordingly.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np
from scipy.special import expit, logsumexp, softmax

CONTINUOUS = "continuous"
DISCRETE = "discrete"

# Discrete targets carry a full log-density table up to this many states.
MAX_TABLE_STATES = 2**16


class TargetError(ValueError):
    """Raised when a target specification is invalid."""


@dataclass(frozen=True)
class TargetModel:
    """A (possibly unnormalized) distribution pi(x) proportional to exp(-U(x)).

    Attributes:
        dim: State dimension d.
        log_density: x -> -U(x) up to an additive constant.
        score: x -> -grad U(x). For discrete targets this is the relaxed
            gradient when one exists, otherwise the exact discrete score.
        hvp: (x, v) -> Hessian(U)(x) @ v, or None when no analytic form is
            available (downstream code then switches to finite differences).
        domain: ``"continuous"`` or ``"discrete"``.
        max_value: K for discrete targets on {0, ..., K}^d.
        ground_truth_mean: E_pi[X] when known.
        sample: (rng, n) -> n exact draws, when pi is exactly samplable.
        log_table: full unnormalized log-density table for small discrete
            spaces, indexed in :func:`enumerate_states` order.
        spec: the spec object the target was built from, if any.
    """

    dim: int
    log_density: Callable[[np.ndarray], np.ndarray]
    score: Callable[[np.ndarray], np.ndarray]
    hvp: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    domain: str = CONTINUOUS
    max_value: Optional[int] = None
    ground_truth_mean: Optional[np.ndarray] = None
    sample: Optional[Callable[[np.random.Generator, int], np.ndarray]] = None
    log_table: Optional[np.ndarray] = None
    spec: object = None
    name: str = ""
    metadata: Mapping[str, object] = field(default_factory=dict)

    @property
    def is_discrete(self) -> bool:
        return self.domain == DISCRETE

    @property
    def has_analytic_hvp(self) -> bool:
        return self.hvp is not None


# ---------------------------------------------------------------------------
# Specs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GaussianSpec:
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        if mean.ndim != 1:
            raise TargetError("mean must be a vector")
        if cov.shape != (mean.size, mean.size):
            raise TargetError(
                f"covariance shape {cov.shape} does not match mean length {mean.size}"
            )
        if not np.allclose(cov, cov.T, rtol=0, atol=1e-12 * max(1.0, np.abs(cov).max())):
            raise TargetError("covariance must be symmetric")
        eig = np.linalg.eigvalsh(cov)
        if eig.min() <= 0:
            raise TargetError(
                f"covariance must be positive definite (min eigenvalue {eig.min():.3g})"
            )
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)

    @property
    def dim(self) -> int:
        return self.mean.size


@dataclass(frozen=True)
class MixtureSpec:
    weights: np.ndarray
    components: Sequence[GaussianSpec]

    def __post_init__(self):
        if len(self.components) == 0:
            raise TargetError("mixture needs at least one component")
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (len(self.components),):
            raise TargetError("one weight per component required")
        if np.any(w <= 0):
            raise TargetError("mixture weights must be positive")
        if abs(w.sum() - 1.0) > 1e-12:
            raise TargetError(f"mixture weights sum to {w.sum()!r}, not 1")
        dims = {c.dim for c in self.components}
        if len(dims) != 1:
            raise TargetError("all components must share one dimension")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "components", tuple(self.components))

    @property
    def dim(self) -> int:
        return self.components[0].dim

    @property
    def means(self) -> np.ndarray:
        return np.stack([c.mean for c in self.components])

    @property
    def mean(self) -> np.ndarray:
        return self.weights @ self.means


@dataclass(frozen=True)
class LogisticPosteriorSpec:
    """Bayesian logistic regression with an isotropic N(0, prior_variance I) prior."""

    design: np.ndarray
    labels: np.ndarray
    prior_variance: float = 1.0

    def __post_init__(self):
        Z = np.atleast_2d(np.asarray(self.design, dtype=float))
        y = np.asarray(self.labels, dtype=float).ravel()
        if Z.shape[0] < 1:
            raise TargetError("logistic posterior needs at least one observation")
        if Z.shape[0] != y.size:
            raise TargetError(
                f"design has {Z.shape[0]} rows but {y.size} labels were given"
            )
        if not np.all((y == 0) | (y == 1)):
            raise TargetError("labels must be binary (0/1)")
        if not self.prior_variance > 0:
            raise TargetError("prior_variance must be positive")
        object.__setattr__(self, "design", Z)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "prior_variance", float(self.prior_variance))

    @property
    def dim(self) -> int:
        return self.design.shape[1]


# ---------------------------------------------------------------------------
# Continuous targets
# ---------------------------------------------------------------------------


def gaussian_target(spec: GaussianSpec) -> TargetModel:
    """N(mean, covariance) with analytic score and Hessian-vector product."""
    mu = spec.mean
    precision = np.linalg.inv(spec.covariance)
    precision = 0.5 * (precision + precision.T)
    chol = np.linalg.cholesky(spec.covariance)

    def log_density(x):
        diff = np.asarray(x, dtype=float) - mu
        return -0.5 * np.sum((diff @ precision) * diff, axis=-1)

    def score(x):
        return -(np.asarray(x, dtype=float) - mu) @ precision

    def hvp(x, v):
        return np.asarray(v, dtype=float) @ precision

    def sample(rng, n):
        return mu + rng.standard_normal((n, mu.size)) @ chol.T

    return TargetModel(
        dim=mu.size,
        log_density=log_density,
        score=score,
        hvp=hvp,
        ground_truth_mean=mu.copy(),
        sample=sample,
        spec=spec,
        name="gaussian",
    )


def _mixture_pieces(spec: MixtureSpec):
    means = spec.means
    covs = np.stack([c.covariance for c in spec.components])
    precisions = np.linalg.inv(covs)
    _, logdets = np.linalg.slogdet(2.0 * np.pi * covs)
    log_consts = np.log(spec.weights) - 0.5 * logdets
    return means, covs, precisions, log_consts


def mixture_responsibilities(spec: MixtureSpec, x: np.ndarray) -> np.ndarray:
    """Posterior component probabilities, shape ``(..., K)``."""
    means, _, precisions, log_consts = _mixture_pieces(spec)
    diff = np.asarray(x, dtype=float)[..., None, :] - means
    pdiff = np.einsum("kij,...kj->...ki", precisions, diff)
    logc = log_consts - 0.5 * np.sum(diff * pdiff, axis=-1)
    return softmax(logc, axis=-1)


def mixture_target(spec: MixtureSpec) -> TargetModel:
    """Gaussian mixture with softmax-weighted score and analytic Hessian-vector product."""
    means, covs, precisions, log_consts = _mixture_pieces(spec)
    isotropic = all(
        np.allclose(c.covariance, c.covariance[0, 0] * np.eye(spec.dim), rtol=0, atol=0)
        for c in spec.components
    )
    inv_var = precisions[:, 0, 0].copy()
    chols = np.linalg.cholesky(covs)

    # Isotropic components avoid the einsum over full precision matrices.
    if isotropic:

        def _parts(x):
            diff = np.asarray(x, dtype=float)[..., None, :] - means
            pdiff = diff * inv_var[:, None]
            logc = log_consts - 0.5 * np.sum(diff * pdiff, axis=-1)
            return pdiff, logc

        def _apply_precision(v):
            return inv_var[:, None] * v[..., None, :]

    else:

        def _parts(x):
            diff = np.asarray(x, dtype=float)[..., None, :] - means
            pdiff = np.einsum("kij,...kj->...ki", precisions, diff)
            logc = log_consts - 0.5 * np.sum(diff * pdiff, axis=-1)
            return pdiff, logc

        def _apply_precision(v):
            return np.einsum("kij,...j->...ki", precisions, v)

    def log_density(x):
        _, logc = _parts(x)
        return logsumexp(logc, axis=-1)

    def score(x):
        pdiff, logc = _parts(x)
        r = softmax(logc, axis=-1)
        return -np.sum(r[..., None] * pdiff, axis=-2)

    def hvp(x, v):
        # Hess U = sum_k r_k P_k - sum_k r_k g_k g_k^T + s s^T with g_k = -P_k (x - m_k).
        v = np.asarray(v, dtype=float)
        pdiff, logc = _parts(x)
        r = softmax(logc, axis=-1)
        g = -pdiff
        s = np.sum(r[..., None] * g, axis=-2)
        pv = _apply_precision(v)
        term1 = np.sum(r[..., None] * pv, axis=-2)
        gv = np.sum(g * v[..., None, :], axis=-1)
        term2 = np.sum((r * gv)[..., None] * g, axis=-2)
        sv = np.sum(s * v, axis=-1)
        return term1 - term2 + s * sv[..., None]

    def sample(rng, n):
        ks = rng.choice(len(spec.weights), size=n, p=spec.weights)
        z = rng.standard_normal((n, spec.dim))
        return means[ks] + np.einsum("nij,nj->ni", chols[ks], z)

    return TargetModel(
        dim=spec.dim,
        log_density=log_density,
        score=score,
        hvp=hvp,
        ground_truth_mean=spec.mean,
        sample=sample,
        spec=spec,
        name="mixture",
    )


def logistic_posterior_target(spec: LogisticPosteriorSpec) -> TargetModel:
    """Logistic-regression posterior; the ground-truth mean must come from a reference run."""
    Z, y = spec.design, spec.labels
    prec = 1.0 / spec.prior_variance

    def log_density(x):
        x = np.asarray(x, dtype=float)
        t = x @ Z.T
        return -0.5 * prec * np.sum(x * x, axis=-1) + np.sum(y * t - np.logaddexp(0.0, t), axis=-1)

    def score(x):
        x = np.asarray(x, dtype=float)
        return -prec * x + (y - expit(x @ Z.T)) @ Z

    def hvp(x, v):
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        p = expit(x @ Z.T)
        w = p * (1.0 - p)
        return prec * v + (w * (v @ Z.T)) @ Z

    return TargetModel(
        dim=spec.dim,
        log_density=log_density,
        score=score,
        hvp=hvp,
        spec=spec,
        name="logistic",
    )


# ---------------------------------------------------------------------------
# Named constructions used by the experiments
# ---------------------------------------------------------------------------


def correlated_gaussian_spec(dim: int = 10, rho: float = 0.9) -> GaussianSpec:
    """Zero-mean Gaussian with Toeplitz covariance rho^|i-j|."""
    idx = np.arange(dim)
    cov = rho ** np.abs(np.subtract.outer(idx, idx)).astype(float)
    return GaussianSpec(np.zeros(dim), cov)


def two_mode_mixture_spec() -> MixtureSpec:
    """Narrow trap at (-2, 0) with weight 0.8, broad mode at (2, 0) with weight 0.2."""
    return MixtureSpec(
        weights=np.array([0.8, 0.2]),
        components=[
            GaussianSpec(np.array([-2.0, 0.0]), 0.18**2 * np.eye(2)),
            GaussianSpec(np.array([2.0, 0.0]), np.eye(2)),
        ],
    )


def grid_mixture_spec(side: int = 10, spacing: float = 1.0, sigma: float = 0.1) -> MixtureSpec:
    """Equal-weight isotropic components on a side x side square grid in R^2."""
    coords = spacing * np.arange(side, dtype=float)
    gx, gy = np.meshgrid(coords, coords, indexing="ij")
    centers = np.stack([gx.ravel(), gy.ravel()], axis=-1)
    centers -= centers.mean(axis=0)
    k = centers.shape[0]
    weights = np.full(k, 1.0 / k)
    weights[-1] = 1.0 - weights[:-1].sum()
    cov = sigma**2 * np.eye(2)
    return MixtureSpec(weights, [GaussianSpec(c, cov) for c in centers])


def synthetic_logistic_spec(
    n_obs: int = 100,
    dim: int = 10,
    correlation: float = 0.5,
    prior_variance: float = 1.0,
    seed: int = 0,
) -> LogisticPosteriorSpec:
    """Synthetic data: correlated design rows, coefficients drawn from the prior."""
    rng = np.random.default_rng(seed)
    idx = np.arange(dim)
    design_cov = correlation ** np.abs(np.subtract.outer(idx, idx)).astype(float)
    Z = rng.multivariate_normal(np.zeros(dim), design_cov, size=n_obs)
    coef = rng.standard_normal(dim) * np.sqrt(prior_variance)
    y = (rng.random(n_obs) < expit(Z @ coef)).astype(float)
    return LogisticPosteriorSpec(Z, y, prior_variance)


# ---------------------------------------------------------------------------
# Discrete configuration spaces {0, ..., K}^d
# ---------------------------------------------------------------------------


def enumerate_states(dim: int, max_value: int = 1) -> np.ndarray:
    """All states of {0..K}^d in lexicographic order, shape ((K+1)^d, d)."""
    return np.array(list(itertools.product(range(max_value + 1), repeat=dim)), dtype=int).reshape(
        -1, dim
    )


def state_index(x: np.ndarray, max_value: int = 1) -> np.ndarray:
    """Lexicographic index of each state in :func:`enumerate_states` order."""
    x = np.asarray(x, dtype=int)
    d = x.shape[-1]
    radix = (max_value + 1) ** np.arange(d - 1, -1, -1)
    return x @ radix


def _mirror_states(x: np.ndarray, max_value: int) -> np.ndarray:
    """x^{(i, K - x_i)} for every i, shape (..., d, d)."""
    x = np.asarray(x, dtype=int)
    d = x.shape[-1]
    mirrored = np.repeat(x[..., None, :], d, axis=-2)
    eye = np.eye(d, dtype=bool)
    mirrored[..., eye] = max_value - x
    return mirrored


def _exact_discrete_score(log_density, max_value):
    def score(x):
        x = np.asarray(x, dtype=int)
        logp = np.asarray(log_density(x), dtype=float)
        if np.any(np.isneginf(logp)):
            raise TargetError("discrete score undefined where pi(x) = 0")
        logp_mirror = log_density(_mirror_states(x, max_value))
        return np.expm1(logp_mirror - logp[..., None])

    return score


def discrete_score(target: TargetModel, x: np.ndarray) -> np.ndarray:
    """Zero-mean discrete score: s_i(x) = pi(x with x_i -> K - x_i) / pi(x) - 1."""
    if not target.is_discrete:
        raise TargetError("discrete_score requires a discrete-configuration target")
    return _exact_discrete_score(target.log_density, target.max_value)(x)


def discrete_target(
    log_density: Callable[[np.ndarray], np.ndarray],
    dim: int,
    max_value: int = 1,
    relaxed_score: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    relaxed_hvp: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None,
    name: str = "discrete",
    spec: object = None,
) -> TargetModel:
    """Wrap an unnormalized log-density on {0..K}^d.

    Without a relaxed gradient, ``score`` is the exact discrete score.
    """
    table = None
    if (max_value + 1) ** dim <= MAX_TABLE_STATES:
        table = np.asarray(log_density(enumerate_states(dim, max_value)), dtype=float)
    score = relaxed_score or _exact_discrete_score(log_density, max_value)
    return TargetModel(
        dim=dim,
        log_density=log_density,
        score=score,
        hvp=relaxed_hvp if relaxed_score is not None else None,
        domain=DISCRETE,
        max_value=max_value,
        log_table=table,
        spec=spec,
        name=name,
        metadata={"score": "relaxed" if relaxed_score is not None else "exact"},
    )


def table_target(log_table: np.ndarray, dim: int, max_value: int = 1) -> TargetModel:
    """Discrete target defined by an explicit log-density table."""
    log_table = np.asarray(log_table, dtype=float)
    if log_table.shape != ((max_value + 1) ** dim,):
        raise TargetError("table length must equal (K+1)^d")

    def log_density(x):
        return log_table[state_index(x, max_value)]

    return discrete_target(log_density, dim, max_value, name="table")


def quadratic_discrete_target(W: np.ndarray, b: np.ndarray, max_value: int = 1) -> TargetModel:
    """log pi(x) = x^T W x / 2 + b^T x on {0..K}^d, with its continuous relaxation."""
    W = np.asarray(W, dtype=float)
    W = 0.5 * (W + W.T)
    b = np.asarray(b, dtype=float)
    if W.shape != (b.size, b.size):
        raise TargetError("W must be d x d with d = len(b)")

    def log_density(x):
        x = np.asarray(x, dtype=float)
        return 0.5 * np.sum((x @ W) * x, axis=-1) + x @ b

    def relaxed_score(x):
        return np.asarray(x, dtype=float) @ W + b

    def relaxed_hvp(x, v):
        out = -(np.asarray(v, dtype=float) @ W)
        return np.broadcast_to(out, np.broadcast_shapes(np.shape(x), out.shape)).copy()

    return discrete_target(
        log_density,
        b.size,
        max_value,
        relaxed_score=relaxed_score,
        relaxed_hvp=relaxed_hvp,
        name="quadratic",
        spec={"W": W, "b": b},
    )


def random_quadratic_target(
    dim: int, rng: np.random.Generator, scale: float = 0.5, max_value: int = 1
) -> TargetModel:
    """Random Boltzmann-machine style target (symmetric W, zero diagonal)."""
    W = rng.normal(scale=scale, size=(dim, dim))
    W = 0.5 * (W + W.T)
    np.fill_diagonal(W, 0.0)
    b = rng.normal(scale=scale, size=dim)
    return quadratic_discrete_target(W, b, max_value)


def normalized_table(target: TargetModel) -> np.ndarray:
    """pi over :func:`enumerate_states`, normalized to sum to 1."""
    if target.log_table is None:
        raise TargetError("target is not enumerable")
    return np.exp(target.log_table - logsumexp(target.log_table))
