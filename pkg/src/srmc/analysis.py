"""Asymptotic covariance of the coupled (theta, mu) recursion and related checks.

The joint iterate satisfies a CLT whose covariance solves a continuous
Lyapunov equation built from the mean-field Jacobian at the equilibrium and
the noise covariance of the update. Closed forms exist for independent
sampling and for the diagonal case; everything here works with dense
matrices of modest size.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
from scipy.integrate import trapezoid
from scipy.linalg import solve_continuous_lyapunov

from .surrogate import TiltedSurrogate, tilted_log_density
from .targets import TargetModel, discrete_score, enumerate_states, normalized_table


class LyapunovError(np.linalg.LinAlgError):
    pass


def _sym(a):
    return 0.5 * (a + a.T)


def _check_psd(name, a, tol=1e-10):
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.shape[0] != a.shape[1]:
        raise ValueError(f"{name} must be square")
    scale = max(1.0, np.abs(a).max())
    if not np.allclose(a, a.T, rtol=0, atol=1e-12 * scale):
        raise ValueError(f"{name} must be symmetric")
    lo = np.linalg.eigvalsh(a).min()
    if lo < -tol * scale:
        raise ValueError(f"{name} is not positive semidefinite (min eigenvalue {lo:.3g})")
    return a


@dataclass(frozen=True)
class MomentInputs:
    """Stationary moments entering the Jacobian and the i.i.d. noise covariance.

    S = Cov(s, s) (d x d), C = Cov(f, s) (m x d), Vf = Cov(f, f) (m x m).
    ``rho_indicator`` is 1 for the rho=1 schedule, else 0.
    """

    S: np.ndarray
    C: np.ndarray
    Vf: np.ndarray
    alpha: float
    rho_indicator: int = 0

    def __post_init__(self):
        S = _check_psd("S", self.S)
        Vf = _check_psd("Vf", self.Vf)
        C = np.atleast_2d(np.asarray(self.C, dtype=float))
        if C.shape != (Vf.shape[0], S.shape[0]):
            raise ValueError(f"C must be {Vf.shape[0]} x {S.shape[0]}, got {C.shape}")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if self.rho_indicator not in (0, 1):
            raise ValueError("rho_indicator must be 0 or 1")
        object.__setattr__(self, "S", S)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "Vf", Vf)

    @property
    def d(self) -> int:
        return self.S.shape[0]

    @property
    def m(self) -> int:
        return self.Vf.shape[0]

    @property
    def beta(self) -> float:
        return 1.0 - 0.5 * self.rho_indicator

    def iid_noise_covariance(self) -> np.ndarray:
        """[[S, C^T], [C, Vf]]: the noise covariance when X is drawn i.i.d. from pi."""
        return np.block([[self.S, self.C.T], [self.C, self.Vf]])


@dataclass(frozen=True)
class CovarianceBlocks:
    theta_theta: np.ndarray
    theta_mu: np.ndarray
    mu_mu: np.ndarray
    residual: Optional[float] = None

    def full(self) -> np.ndarray:
        return np.block([[self.theta_theta, self.theta_mu], [self.theta_mu.T, self.mu_mu]])

    @classmethod
    def from_full(cls, sigma, d, residual=None) -> "CovarianceBlocks":
        return cls(sigma[:d, :d], sigma[:d, d:], sigma[d:, d:], residual)


def jacobian_at_star(inp: MomentInputs) -> np.ndarray:
    """Mean-field Jacobian [[-I - alpha S, 0], [-alpha C, -I]]."""
    d, m = inp.d, inp.m
    top = np.hstack([-np.eye(d) - inp.alpha * inp.S, np.zeros((d, m))])
    bottom = np.hstack([-inp.alpha * inp.C, -np.eye(m)])
    return np.vstack([top, bottom])


def lyapunov_residual(B, sigma, sigma_delta) -> float:
    return float(np.linalg.norm(B @ sigma + sigma @ B.T + sigma_delta))


def solve_lyapunov_matrix(A_star, sigma_delta, rho_indicator: int = 0, refine: int = 2):
    """Solve (c I + A) X + X (c I + A)^T + sigma_delta = 0 with c = rho_indicator / 2.

    Returns ``(X, residual)``. Raises :class:`LyapunovError` when the drift
    matrix is not Hurwitz.
    """
    A_star = np.atleast_2d(np.asarray(A_star, dtype=float))
    Q = np.atleast_2d(np.asarray(sigma_delta, dtype=float))
    if A_star.shape != Q.shape or A_star.shape[0] != A_star.shape[1]:
        raise ValueError("A_star and sigma_delta must be square matrices of the same size")
    B = 0.5 * rho_indicator * np.eye(A_star.shape[0]) + A_star
    eig = np.linalg.eigvals(B)
    worst = eig[np.argmax(eig.real)]
    if worst.real >= 0:
        raise LyapunovError(
            f"drift matrix is not Hurwitz: eigenvalue {worst:.6g} has non-negative real part"
        )
    X = solve_continuous_lyapunov(B, -Q)
    # A couple of refinement sweeps push the residual to rounding level.
    for _ in range(refine):
        R = B @ X + X @ B.T + Q
        X = X + solve_continuous_lyapunov(B, -R)
    X = _sym(X)
    return X, lyapunov_residual(B, X, Q)


def solve_lyapunov(A_star, sigma_delta, rho_indicator: int = 0, dim_theta: Optional[int] = None) -> CovarianceBlocks:
    """Covariance blocks of the CLT Lyapunov equation; theta block has size dim_theta."""
    X, res = solve_lyapunov_matrix(A_star, sigma_delta, rho_indicator)
    d = X.shape[0] if dim_theta is None else dim_theta
    return CovarianceBlocks.from_full(X, d, res)


def diagonal_closed_form(eigenvalues, U_tilde, alpha: float, beta: float) -> np.ndarray:
    """Entrywise solution U_ij / (2 beta + alpha (lambda_i + lambda_j)) in the eigenbasis of S."""
    lam = np.asarray(eigenvalues, dtype=float)
    return np.asarray(U_tilde, dtype=float) / (2.0 * beta + alpha * (lam[:, None] + lam[None, :]))


def closed_form_blocks_independent(inp: MomentInputs) -> CovarianceBlocks:
    """Closed-form covariance blocks when each X is drawn independently from the surrogate."""
    S, C, Vf = inp.S, inp.C, inp.Vf
    d = inp.d
    beta, alpha = inp.beta, inp.alpha
    if np.linalg.cond(S) > 1e12:
        raise np.linalg.LinAlgError("S is singular; the closed form needs S invertible")
    M = beta * np.eye(d) + alpha * S
    M_inv = np.linalg.inv(M)
    tt = _sym(0.5 * S @ M_inv)
    tm = 0.5 * M_inv @ C.T
    R = (Vf - C @ np.linalg.solve(S, C.T)) / (2.0 * beta)
    mm = _sym(R + C @ np.linalg.solve(S @ (2.0 * alpha * S + 2.0 * beta * np.eye(d)), C.T))
    return CovarianceBlocks(tt, tm, mm)


def gaussian_mean_covariance(V, theta_block) -> np.ndarray:
    """Limiting covariance V Sigma_theta_theta V^T of the sample mean for a Gaussian target."""
    V = np.atleast_2d(np.asarray(V, dtype=float))
    T = np.atleast_2d(np.asarray(theta_block, dtype=float))
    if V.shape[1] != T.shape[0]:
        raise ValueError("dimension mismatch between V and the theta block")
    return V @ T @ V.T


class NoiseEstimate(NamedTuple):
    covariance: np.ndarray
    clipped: float
    batch_size: int


def estimate_noise_covariance(series, batch_size: Optional[int] = None, full_output: bool = False):
    """Batch-means estimate of the long-run covariance of a vector series.

    ``batch_size`` defaults to floor(n^(1/3)), the MSE-optimal growth rate;
    pass a larger value for slowly mixing chains. The trailing remainder is
    dropped. Negative eigenvalues are clipped to zero; with ``full_output``
    the largest clipped magnitude is reported alongside.
    """
    x = np.asarray(series, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    b = int(np.floor(n ** (1 / 3))) if batch_size is None else int(batch_size)
    if b < 1:
        raise ValueError("batch_size must be at least 1")
    batch_count = n // b
    if batch_count < 10:
        raise ValueError(f"series of length {n} gives only {batch_count} batches of size {b}")
    means = x[: b * batch_count].reshape(batch_count, b, -1).mean(axis=1)
    centred = means - means.mean(axis=0)
    cov = _sym(b * centred.T @ centred / (batch_count - 1))
    w, v = np.linalg.eigh(cov)
    clipped = float(max(0.0, -w.min()))
    if clipped > 0:
        cov = _sym((v * np.maximum(w, 0.0)) @ v.T)
    if full_output:
        return NoiseEstimate(cov, clipped, b)
    return cov


class SteinResult(NamedTuple):
    sup_norm: float
    mean: np.ndarray
    stderr: Optional[np.ndarray]
    exact: bool


def stein_check(target: TargetModel, n_samples: Optional[int] = None, rng=None, enumerate_space: bool = True) -> SteinResult:
    """Estimate E_pi[s(X)]: exactly by enumeration for small discrete targets, else by exact sampling."""
    if target.is_discrete and target.log_table is not None and enumerate_space:
        p = normalized_table(target)
        states = enumerate_states(target.dim, target.max_value)
        mean = p @ discrete_score(target, states)
        return SteinResult(float(np.abs(mean).max()), mean, None, True)
    if target.sample is None or n_samples is None:
        raise ValueError("stein_check needs an enumerable or exactly samplable target (and n_samples)")
    rng = np.random.default_rng() if rng is None else rng
    x = target.sample(rng, n_samples)
    s = discrete_score(target, x) if target.is_discrete else target.score(x)
    mean = s.mean(axis=0)
    se = s.std(axis=0, ddof=1) / np.sqrt(n_samples)
    return SteinResult(float(np.abs(mean).max()), mean, se, False)


def log_partition_quadrature(
    sur: TiltedSurrogate,
    n_points: Optional[int] = None,
    centre=None,
    half_width: float = 4.0,
    rel_tol: float = 1e-12,
    max_doublings: int = 20,
) -> float:
    """Trapezoid estimate of log Z_theta on a tensor grid (d <= 2).

    The box starts at ``centre +/- half_width`` and doubles until the
    integrand on its boundary is below ``rel_tol`` of the peak.
    """
    d = sur.base.dim
    if d > 2:
        raise ValueError("quadrature is only supported for d <= 2")
    if n_points is None:
        n_points = 4001 if d == 1 else 801
    if centre is None:
        gm = sur.base.ground_truth_mean
        centre = np.zeros(d) if gm is None else np.asarray(gm, dtype=float)
    centre = np.broadcast_to(np.asarray(centre, dtype=float), (d,))
    log_tol = np.log(rel_tol)
    w = float(half_width)
    for _ in range(max_doublings):
        axes = [np.linspace(c - w, c + w, n_points) for c in centre]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        logf = tilted_log_density(sur, grid)
        peak = logf.max()
        boundary = np.concatenate([np.ravel(logf[idx]) for idx in _boundary_slices(d)])
        if boundary.max() - peak < log_tol:
            f = np.exp(logf - peak)
            for ax in reversed(axes):
                f = trapezoid(f, ax, axis=-1)
            return float(np.log(f) + peak)
        w *= 2.0
    raise RuntimeError("integrand does not decay within the maximum truncation box")


def _boundary_slices(d):
    if d == 1:
        return [(0,), (-1,)]
    return [(0, slice(None)), (-1, slice(None)), (slice(None), 0), (slice(None), -1)]
