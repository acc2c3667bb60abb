"""Experiment diagnostics: running MSE, uniformity of class histograms, Vendi
score, cumulative mode coverage and cost-indexed series."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .targets import MixtureSpec, mixture_responsibilities

COST_MODELS = ("baseline-d", "srmc-3d", "measured")


@dataclass(frozen=True)
class ClassHistogram:
    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 1 or c.size < 1:
            raise ValueError("counts must be a non-empty vector")
        if np.any(c < 0):
            raise ValueError("counts must be non-negative")
        object.__setattr__(self, "counts", c)

    @classmethod
    def from_labels(cls, labels, n_classes: int) -> "ClassHistogram":
        return cls(np.bincount(np.asarray(labels, dtype=int), minlength=n_classes))

    @property
    def n_classes(self) -> int:
        return self.counts.size

    def probabilities(self) -> np.ndarray:
        total = self.counts.sum()
        if total <= 0:
            raise ValueError("histogram is empty")
        return self.counts / total


def running_mse(mu_series, mu_star) -> np.ndarray:
    """Squared Euclidean error of each running estimate against the truth."""
    if mu_star is None:
        raise ValueError("running MSE needs a ground-truth mean")
    mu_series = np.asarray(mu_series, dtype=float)
    mu_star = np.asarray(mu_star, dtype=float)
    if mu_series.shape[-1] != mu_star.shape[-1]:
        raise ValueError("dimension mismatch between series and ground truth")
    diff = mu_series - mu_star
    return np.sum(diff * diff, axis=-1)


def kl_to_uniform(h: ClassHistogram) -> float:
    p = h.probabilities()
    nz = p > 0
    return float(np.sum(p[nz] * np.log(h.n_classes * p[nz])))


def tv_to_uniform(h: ClassHistogram) -> float:
    p = h.probabilities()
    return float(0.5 * np.sum(np.abs(p - 1.0 / h.n_classes)))


def normalized_entropy(h: ClassHistogram) -> float:
    if h.n_classes < 2:
        raise ValueError("normalized entropy needs at least two classes")
    p = h.probabilities()
    nz = p > 0
    return float(-np.sum(p[nz] * np.log(p[nz])) / np.log(h.n_classes))


def vendi_score(similarity) -> float:
    """exp of the Shannon entropy of the eigenvalues of K / n."""
    K = np.asarray(similarity, dtype=float)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise ValueError("similarity must be a square matrix")
    if not np.allclose(K, K.T, atol=1e-10):
        raise ValueError("similarity must be symmetric")
    if not np.allclose(np.diag(K), 1.0, atol=1e-8):
        raise ValueError("similarity must have a unit diagonal")
    lam = np.linalg.eigvalsh(K / K.shape[0])
    if lam.min() < -1e-6:
        raise ValueError(f"similarity is not positive semidefinite (min eigenvalue {lam.min():.3g})")
    lam = lam[lam > 1e-12]
    return float(np.exp(-np.sum(lam * np.log(lam))))


def cosine_similarity(vectors) -> np.ndarray:
    v = np.asarray(vectors, dtype=float)
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ValueError("zero vector has no direction")
    u = v / norms
    K = u @ u.T
    np.fill_diagonal(K, 1.0)
    return K


def responsibility_similarity(spec: MixtureSpec, samples) -> np.ndarray:
    """Cosine similarity of mixture-component posterior vectors (a classifier stand-in)."""
    return cosine_similarity(mixture_responsibilities(spec, samples))


def nearest_center(states, centers) -> np.ndarray:
    """Index of the nearest center per state; ties go to the lowest index."""
    states = np.asarray(states, dtype=float)
    centers = np.asarray(centers, dtype=float)
    d2 = np.sum((states[..., None, :] - centers) ** 2, axis=-1)
    return np.argmin(d2, axis=-1)


def mode_coverage(chains: Sequence[np.ndarray], centers) -> np.ndarray:
    """Cumulative number of distinct centers visited by any chain up to each step.

    ``chains`` holds one (T_k, d) array per chain; the output has length max T_k.
    """
    centers = np.asarray(centers, dtype=float)
    if centers.size == 0:
        raise ValueError("need at least one center")
    T = max(len(c) for c in chains)
    first = np.full(len(centers), T, dtype=np.int64)
    for states in chains:
        states = np.asarray(states, dtype=float)
        if len(states) == 0:
            continue
        labels = nearest_center(states, centers)
        np.minimum.at(first, labels, np.arange(len(states)))
    visits = np.bincount(first, minlength=T + 1)[:T]
    return np.cumsum(visits)


def cost_per_iteration(cost_model: str, dim: int, repellent: bool, leapfrog_steps: int = 1) -> int:
    if cost_model == "baseline-d":
        return dim * leapfrog_steps
    if cost_model == "srmc-3d":
        return (3 if repellent else 1) * dim * leapfrog_steps
    raise ValueError(f"cost model {cost_model!r} has no fixed per-iteration cost")


def budget_indexed_series(record, cost_model: str, metric: Optional[np.ndarray] = None):
    """(budget, metric) pairs for a run record under a cost model.

    ``metric`` is aligned with the record rows; it defaults to the iteration
    counter itself.
    """
    if cost_model not in COST_MODELS:
        raise ValueError(f"unknown cost model {cost_model!r}")
    n = np.asarray(record.n)
    if cost_model == "measured":
        budget = np.asarray(record.grad_evals)
    else:
        meta = record.metadata
        budget = n * cost_per_iteration(
            cost_model, int(meta["dim"]), bool(meta["repellent"]), int(meta.get("leapfrog_steps", 1))
        )
    return budget, (n if metric is None else np.asarray(metric))
