"""Score-history recursion, step-size schedules and adaptive repellence schedules."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np


class HistoryFault(FloatingPointError):
    """A non-finite score or test-function value reached the history update."""


def gamma(n: int, rho: float = 0.6, scale: float = 1.0, offset: int = 1) -> float:
    """Step size scale * (n + offset)^(-rho)."""
    return scale * (n + offset) ** (-rho)


@dataclass(frozen=True)
class HistoryState:
    """Coupled iterate (theta_n, mu_n, n) with its step schedule.

    The update taking the counter from n to n+1 uses ``gamma(n)``, so with
    rho=1, scale=1, offset=1 and theta_0=0 the history is the plain average of
    the observed scores.
    """

    theta: np.ndarray
    mu: np.ndarray
    n: int = 0
    rho: float = 0.6
    gamma_scale: float = 1.0
    gamma_offset: int = 1

    def __post_init__(self):
        if not 0.5 < self.rho <= 1.0:
            raise ValueError(f"rho must lie in (0.5, 1], got {self.rho}")
        if not self.gamma_scale > 0:
            raise ValueError("gamma_scale must be positive")
        if self.gamma_offset < 1:
            raise ValueError("gamma_offset must be a positive integer")
        object.__setattr__(self, "theta", np.asarray(self.theta, dtype=float))
        object.__setattr__(self, "mu", np.asarray(self.mu, dtype=float))

    @classmethod
    def zeros(cls, d: int, m: Optional[int] = None, **schedule) -> "HistoryState":
        return cls(np.zeros(d), np.zeros(d if m is None else m), **schedule)

    @property
    def step_size(self) -> float:
        return gamma(self.n, self.rho, self.gamma_scale, self.gamma_offset)


def update_history(state: HistoryState, s_new, f_new) -> HistoryState:
    """Move theta toward s_new and mu toward f_new with the same step size."""
    s_new = np.asarray(s_new, dtype=float)
    f_new = np.asarray(f_new, dtype=float)
    if s_new.shape != state.theta.shape or f_new.shape != state.mu.shape:
        raise ValueError(
            f"shape mismatch: score {s_new.shape} vs theta {state.theta.shape}, "
            f"f {f_new.shape} vs mu {state.mu.shape}"
        )
    if not (np.all(np.isfinite(s_new)) and np.all(np.isfinite(f_new))):
        raise HistoryFault(f"non-finite input to history update at n={state.n}")
    g = state.step_size
    return replace(
        state,
        theta=state.theta + g * (s_new - state.theta),
        mu=state.mu + g * (f_new - state.mu),
        n=state.n + 1,
    )


# ---------------------------------------------------------------------------
# Repellence-strength schedules
# ---------------------------------------------------------------------------

FIXED = "fixed"
CAPPED_WARMUP = "capped-warmup"
GUARDRAIL = "guardrail"


def warmup_length(total_budget: int, leapfrog_steps: int = 1) -> int:
    """Warmup outer iterations: floor(min(3000, 0.1 N) / L), at least 1."""
    n_w = min(3000.0, 0.1 * total_budget)
    return max(1, int(math.floor(n_w / leapfrog_steps)))


@dataclass
class AlphaSchedule:
    """Repellence strength per outer iteration.

    ``fixed`` emits ``alpha``. ``capped-warmup`` rises as k / (C + k/alpha_ref)
    over the warmup and freezes at exactly ``rho_cap * alpha_ref``.
    ``guardrail`` follows the same curve but freezes early at the last safe
    value once the windowed quantile of the monitor exceeds ``tau`` in two
    consecutive windows.

    The guardrail is stateful: call :func:`alpha_step` with increasing k.
    """

    kind: str = FIXED
    alpha: float = 0.0
    alpha_ref: float = 1.0
    rho_cap: float = 0.8
    total_budget: int = 1
    leapfrog_steps: int = 1
    tau: float = 1.0
    quantile: float = 0.95
    frozen: bool = field(default=False, init=False)
    frozen_at: Optional[int] = field(default=None, init=False)
    realized: float = field(default=0.0, init=False)
    _window: List[float] = field(default_factory=list, init=False, repr=False)
    _exceed_run: int = field(default=0, init=False, repr=False)
    _last_safe: float = field(default=0.0, init=False, repr=False)

    def __post_init__(self):
        if self.kind not in (FIXED, CAPPED_WARMUP, GUARDRAIL):
            raise ValueError(f"unknown alpha schedule kind {self.kind!r}")
        if self.kind == FIXED:
            if not self.alpha >= 0:
                raise ValueError("alpha must be non-negative")
            self.realized = float(self.alpha)
            return
        if not self.alpha_ref > 0:
            raise ValueError("alpha_ref must be positive")
        if not 0 < self.rho_cap <= 1:
            raise ValueError("rho_cap must lie in (0, 1]")
        if self.leapfrog_steps < 1 or self.total_budget < 1:
            raise ValueError("total_budget and leapfrog_steps must be positive")

    @property
    def warmup_iterations(self) -> int:
        return warmup_length(self.total_budget, self.leapfrog_steps)

    @property
    def window_size(self) -> int:
        return max(10, self.warmup_iterations // 20)

    @property
    def curve_constant(self) -> float:
        """C such that the warmup curve ends at rho_cap * alpha_ref."""
        return self.warmup_iterations * (1.0 - self.rho_cap) / (self.rho_cap * self.alpha_ref)

    def capped_value(self, k: int) -> float:
        if self.kind == FIXED:
            return float(self.alpha)
        k_w = self.warmup_iterations
        if k >= k_w:
            return self.rho_cap * self.alpha_ref
        return k / (self.curve_constant + k / self.alpha_ref)

    def _observe(self, k: int, monitor: float):
        # Windows only run while alpha is still increasing.
        if self.frozen or k > self.warmup_iterations:
            return
        self._window.append(float(monitor))
        if len(self._window) < self.window_size:
            return
        q = float(np.quantile(self._window, self.quantile))
        self._window = []
        if q > self.tau:
            self._exceed_run += 1
            if self._exceed_run >= 2:
                self.frozen = True
                self.frozen_at = k
        else:
            self._exceed_run = 0
            self._last_safe = self.capped_value(k - 1)


def alpha_step(sched: AlphaSchedule, k: int, monitor: Optional[float] = None) -> float:
    """Alpha for outer iteration k.

    For the guardrail, ``monitor`` is the latest observation of
    alpha * |s(X) . theta| (from the step before k); it may be omitted at k=0.
    """
    if k < 0:
        raise ValueError("k must be non-negative")
    if sched.kind == GUARDRAIL:
        if monitor is None:
            if k > 0:
                raise ValueError("guardrail schedule requires a monitor value for k > 0")
        else:
            sched._observe(k, monitor)
        value = sched._last_safe if sched.frozen else sched.capped_value(k)
    else:
        value = sched.capped_value(k)
    sched.realized = value
    return value
