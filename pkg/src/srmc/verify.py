"""Self-checks behind ``srmc verify``.

Each check computes a residual against an independent route (enumeration,
closed form, reversed integration) and compares it to a tolerance. Checks
are fast and deterministic.
"""

from __future__ import annotations

from typing import Callable, Dict, List, NamedTuple, Optional

import numpy as np

from . import analysis as A
from .kernels import KernelConfig, discrete_transition_matrix, leapfrog, stationary_distribution
from .surrogate import TiltedSurrogate
from .targets import (
    GaussianSpec,
    discrete_score,
    enumerate_states,
    gaussian_target,
    random_quadratic_target,
    table_target,
)


class CheckResult(NamedTuple):
    name: str
    passed: bool
    residual: float
    tolerance: float
    detail: str = ""


def random_hurwitz_inputs(rng, d, m, alpha, rho_indicator):
    """Random PSD moment inputs with S positive definite."""
    G = rng.standard_normal((d + m, d + m))
    full = G @ G.T / (d + m) + 0.1 * np.eye(d + m)
    return A.MomentInputs(full[:d, :d], full[d:, :d], full[d:, d:], alpha, rho_indicator)


def _check_stein_discrete():
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(20):
        d = int(rng.integers(2, 11))
        t = random_quadratic_target(d, rng)
        worst = max(worst, A.stein_check(t).sup_norm)
    return worst, 1e-10, "20 random binary targets"


def _check_lyapunov_random():
    rng = np.random.default_rng(12)
    worst = 0.0
    for k in range(50):
        d = int(rng.integers(1, 7))
        m = int(rng.integers(1, 13 - d))
        inp = random_hurwitz_inputs(rng, d, m, float(rng.uniform(0, 5)), k % 2)
        B = A.jacobian_at_star(inp)
        X, res = A.solve_lyapunov_matrix(B, inp.iid_noise_covariance(), inp.rho_indicator)
        worst = max(worst, res)
    return worst, 1e-10, "50 random instances"


def _check_lyapunov_diagonal():
    rng = np.random.default_rng(13)
    worst = 0.0
    for k in range(20):
        d = int(rng.integers(1, 9))
        lam = rng.uniform(0.2, 3.0, d)
        alpha = float(rng.uniform(0, 4))
        rho_ind = k % 2
        beta = 1.0 - 0.5 * rho_ind
        G = rng.standard_normal((d, d))
        U = G @ G.T
        B = -np.eye(d) - alpha * np.diag(lam)
        X, _ = A.solve_lyapunov_matrix(B, U, rho_ind)
        worst = max(worst, float(np.abs(X - A.diagonal_closed_form(lam, U, alpha, beta)).max()))
    return worst, 1e-10, "diagonal closed form vs solver"


def _check_closed_form():
    rng = np.random.default_rng(14)
    worst = 0.0
    for k in range(50):
        d = int(rng.integers(1, 6))
        m = int(rng.integers(1, 6))
        inp = random_hurwitz_inputs(rng, d, m, float(rng.uniform(0, 5)), k % 2)
        ref = A.solve_lyapunov(A.jacobian_at_star(inp), inp.iid_noise_covariance(), inp.rho_indicator, d)
        got = A.closed_form_blocks_independent(inp)
        worst = max(worst, float(np.linalg.norm(got.full() - ref.full())))
    scalar = A.closed_form_blocks_independent(A.MomentInputs([[1.0]], [[1.0]], [[2.0]], 1.0, 0))
    expected = np.array([[0.25, 0.25], [0.25, 0.75]])
    worst = max(worst, float(np.abs(scalar.full() - expected).max()))
    return worst, 1e-8, "50 random instances + scalar example"


def _binary_table_target(rng, d):
    return table_target(rng.normal(size=2**d), d, 1)


def _tilted_reference(base, theta, alpha):
    """Normalized exp(log pi - alpha theta.s) computed directly from the base target."""
    states = enumerate_states(base.dim, base.max_value)
    lp = base.log_density(states) - alpha * discrete_score(base, states) @ theta
    p = np.exp(lp - lp.max())
    return p / p.sum()


def _stationarity_residual(sur, config):
    P = discrete_transition_matrix(sur, config)
    ref = _tilted_reference(sur.base, np.asarray(sur.theta), sur.alpha)
    flux = ref[:, None] * P
    return max(float(np.abs(stationary_distribution(P) - ref).max()), float(np.abs(flux - flux.T).max()))


def _check_detailed_balance_mh():
    rng = np.random.default_rng(15)
    base = table_target(rng.normal(size=5), 1, 4)
    sur = TiltedSurrogate(base, np.array([0.7]), alpha=1.3)
    return _stationarity_residual(sur, KernelConfig("mh")), 1e-10, "5-state single-site MH"


def _check_detailed_balance_dgi():
    rng = np.random.default_rng(16)
    worst = 0.0
    base = _binary_table_target(rng, 6)
    theta = rng.normal(scale=0.3, size=6)
    for fam in ("barker", "sqrt", "max"):
        sur = TiltedSurrogate(base, theta, alpha=0.8)
        worst = max(worst, _stationarity_residual(sur, KernelConfig("discrete-gi", family=fam)))
    quad = random_quadratic_target(6, rng)
    for fam, kw in (("gwg", {}), ("dlp", {"eta": 0.5})):
        sur = TiltedSurrogate(quad, theta, alpha=0.8, tilt_score="exact")
        worst = max(worst, _stationarity_residual(sur, KernelConfig("discrete-gi", family=fam, **kw)))
    return worst, 1e-10, "2^6 binary, all proposal families"


def _check_leapfrog_reversibility():
    rng = np.random.default_rng(17)
    spec = GaussianSpec(np.zeros(3), np.array([[2.0, 0.3, 0.0], [0.3, 1.0, 0.2], [0.0, 0.2, 0.5]]))
    sur = TiltedSurrogate(gaussian_target(spec), rng.normal(size=3), alpha=0.5)
    x0, v0 = rng.normal(size=3), rng.normal(size=3)
    x1, v1, *_ = leapfrog(sur.evaluate, x0, v0, 0.1, 25)
    x2, v2, *_ = leapfrog(sur.evaluate, x1, -v1, 0.1, 25)
    return float(max(np.abs(x2 - x0).max(), np.abs(v2 + v0).max())), 1e-8, "25 steps forward and back"


def _check_surrogate_gradient():
    rng = np.random.default_rng(18)
    spec = GaussianSpec(np.array([0.5, -1.0]), np.array([[1.0, 0.4], [0.4, 0.8]]))
    sur = TiltedSurrogate(gaussian_target(spec), np.array([0.3, -0.2]), alpha=2.0)
    x = rng.normal(size=2)
    h = 1e-6
    from .surrogate import tilted_log_density

    fd = np.array([(tilted_log_density(sur, x + h * e) - tilted_log_density(sur, x - h * e)) / (2 * h) for e in np.eye(2)])
    return float(np.abs(fd - sur.evaluate(x).score).max()), 1e-6, "central differences of the tilted log-density"


CHECKS: Dict[str, Callable] = {
    "stein-discrete": _check_stein_discrete,
    "lyapunov-random": _check_lyapunov_random,
    "lyapunov-diagonal": _check_lyapunov_diagonal,
    "closed-form-independent": _check_closed_form,
    "detailed-balance-mh": _check_detailed_balance_mh,
    "detailed-balance-dgi": _check_detailed_balance_dgi,
    "leapfrog-reversibility": _check_leapfrog_reversibility,
    "surrogate-gradient": _check_surrogate_gradient,
}


def run_checks(name_filter: Optional[str] = None) -> List[CheckResult]:
    """Run every check whose name contains ``name_filter``."""
    out = []
    for name, fn in CHECKS.items():
        if name_filter and name_filter not in name:
            continue
        try:
            residual, tol, detail = fn()
            passed = bool(np.isfinite(residual) and residual < tol)
        except Exception as e:  # a crashing check is a failing check
            residual, tol, detail, passed = float("nan"), float("nan"), f"error: {e}", False
        out.append(CheckResult(name, passed, float(residual), float(tol), detail))
    return out


def format_table(results: List[CheckResult]) -> str:
    width = max([len(r.name) for r in results] + [5])
    lines = [f"{'check':<{width}}  status  residual    tolerance  detail"]
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        lines.append(f"{r.name:<{width}}  {status:<6}  {r.residual:<10.3e}  {r.tolerance:<9.1e}  {r.detail}")
    return "\n".join(lines)
