"""Score-tilted surrogate pi_theta(x) proportional to pi(x) exp(-alpha theta.s(x)) and its score."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .targets import TargetModel, TargetError, discrete_score

HVP_MODES = ("analytic", "forward", "central")
TILT_SCORE_MODES = ("exact", "proxy")

# Gradient evaluations charged for one Hessian-vector product.
HVP_COST = {"analytic": 1, "forward": 1, "central": 2}


class SurrogateConfigError(ValueError):
    pass


class SurrogateEval(NamedTuple):
    """Surrogate score at one point together with the base score it was built from."""

    score: np.ndarray
    base_score: np.ndarray
    grad_evals: int


def default_hvp_mode(target: TargetModel) -> str:
    return "analytic" if target.hvp is not None else "forward"


def default_eps(alpha: float) -> float:
    return max(float(alpha), 1e-3)


def hvp_finite_difference(target: TargetModel, x, v, eps: float, scheme: str = "forward"):
    """Hessian-vector product of U from differences of gradients (grad U = -score)."""
    if eps <= 0:
        raise SurrogateConfigError("eps must be positive")
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    if scheme == "forward":
        return (target.score(x) - target.score(x + eps * v)) / eps
    if scheme == "central":
        return (target.score(x - 0.5 * eps * v) - target.score(x + 0.5 * eps * v)) / eps
    raise SurrogateConfigError(f"unknown finite-difference scheme {scheme!r}")


@dataclass(frozen=True)
class TiltedSurrogate:
    """Immutable view (base, theta, alpha) realizing the tilted surrogate.

    ``hvp_mode`` defaults to analytic when the base provides one, else forward
    differences with ``eps = max(alpha, 1e-3)``. For discrete targets
    ``tilt_score`` picks the exponent's score: the exact discrete score or the
    relaxed gradient (``proxy``).
    """

    base: TargetModel
    theta: np.ndarray
    alpha: float = 0.0
    hvp_mode: Optional[str] = None
    eps: Optional[float] = None
    tilt_score: str = "exact"

    def __post_init__(self):
        # A leading batch axis (one theta per chain) is allowed.
        theta = np.asarray(self.theta, dtype=float)
        if theta.ndim == 0 or theta.shape[-1] != self.base.dim:
            raise SurrogateConfigError(
                f"theta has shape {theta.shape}, expected (..., {self.base.dim})"
            )
        alpha = float(self.alpha)
        if not alpha >= 0:
            raise SurrogateConfigError("alpha must be non-negative")
        mode = self.hvp_mode or default_hvp_mode(self.base)
        if mode not in HVP_MODES:
            raise SurrogateConfigError(f"unknown hvp_mode {mode!r}")
        if mode == "analytic" and self.base.hvp is None:
            raise SurrogateConfigError("hvp_mode 'analytic' but the target has no analytic hvp")
        eps = default_eps(alpha) if self.eps is None else float(self.eps)
        if eps <= 0:
            raise SurrogateConfigError("eps must be positive")
        if self.tilt_score not in TILT_SCORE_MODES:
            raise SurrogateConfigError(f"unknown tilt_score mode {self.tilt_score!r}")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "hvp_mode", mode)
        object.__setattr__(self, "eps", eps)

    @property
    def active(self) -> bool:
        """False when the tilt is the identity (alpha = 0 or theta = 0)."""
        return self.alpha != 0.0 and bool(np.any(self.theta != 0.0))

    @property
    def hvp_cost(self) -> int:
        return HVP_COST[self.hvp_mode] if self.active else 0

    def with_theta(self, theta, alpha=None) -> "TiltedSurrogate":
        return TiltedSurrogate(
            self.base,
            theta,
            self.alpha if alpha is None else alpha,
            self.hvp_mode,
            self.eps,
            self.tilt_score,
        )

    def exponent_score(self, x):
        """Score used inside the tilt exponent."""
        if self.base.is_discrete and self.tilt_score == "exact":
            return discrete_score(self.base, x)
        return self.base.score(x)

    def log_density(self, x):
        return tilted_log_density(self, x)

    def hvp_theta(self, x, base_score=None):
        """Hessian(U)(x) @ theta under the configured mode."""
        if self.hvp_mode == "analytic":
            return self.base.hvp(x, self.theta)
        x = np.asarray(x, dtype=float)
        if self.hvp_mode == "forward":
            s0 = self.base.score(x) if base_score is None else base_score
            return (s0 - self.base.score(x + self.eps * self.theta)) / self.eps
        return hvp_finite_difference(self.base, x, self.theta, self.eps, "central")

    def evaluate(self, x) -> SurrogateEval:
        """Surrogate score, base score and the gradient evaluations spent."""
        s = self.base.score(x)
        if not self.active:
            return SurrogateEval(s, s, 1)
        if self.base.is_discrete and self.base.hvp is None:
            # Discrete targets only have a surrogate score through a relaxed gradient.
            raise TargetError("surrogate score on a discrete target needs a relaxed gradient")
        return SurrogateEval(s + self.alpha * self.hvp_theta(x, s), s, 1 + self.hvp_cost)


def tilted_log_density(sur: TiltedSurrogate, x):
    """log pi(x) - alpha theta.s(x), unnormalized."""
    logp = sur.base.log_density(x)
    if not sur.active:
        return logp
    return logp - sur.alpha * np.sum(sur.exponent_score(x) * sur.theta, axis=-1)


def surrogate_score(sur: TiltedSurrogate, x):
    """s(x) + alpha Hessian(U)(x) theta, the gradient of the tilted log-density."""
    return sur.evaluate(x).score
