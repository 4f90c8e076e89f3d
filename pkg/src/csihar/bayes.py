"""Dirichlet-multinomial Bayes factor for whether two classifiers differ.

Each classifier is summarised by a count vector ``[c_1..c_K, e_1..e_K]`` of
per-class correct and error counts.  Under "different" each classifier has its
own Dirichlet-multinomial rate vector; under "same" both share one.  With
``Z(u) = prod Gamma(u_i) / Gamma(sum u)``::

    BF = Z(u + cA) Z(u + cB) / (Z(u) Z(u + cA + cB))

All arithmetic is in log space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from csihar.errors import ContractError


@dataclass(frozen=True)
class DirichletPrior:
    u_correct: float = 1.0
    u_error: float = 0.01

    def __post_init__(self):
        if not (self.u_correct > 0 and self.u_error > 0):
            raise ContractError("prior concentrations must be > 0")
        if self.u_error > self.u_correct:
            raise ContractError(f"u_error {self.u_error} must not exceed u_correct {self.u_correct}")

    def vector(self, k: int) -> np.ndarray:
        return np.concatenate([np.full(k, self.u_correct), np.full(k, self.u_error)])


def counts_from_confusion(matrix) -> np.ndarray:
    """Diagonal counts followed by per-row off-diagonal sums."""
    m = np.asarray(matrix)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ContractError(f"confusion matrix must be square, got shape {m.shape}")
    if not np.issubdtype(m.dtype, np.integer):
        if not np.all(m == np.round(m)):
            raise ContractError("confusion counts must be integers")
        m = m.astype(np.int64)
    if (m < 0).any():
        raise ContractError("confusion counts must be non-negative")
    diag = np.diag(m)
    return np.concatenate([diag, m.sum(axis=1) - diag]).astype(np.int64)


def log_dirichlet_norm(u) -> float:
    """``sum(lgamma(u_i)) - lgamma(sum(u))``."""
    vals = [float(v) for v in np.asarray(u, dtype=np.float64).ravel()]
    if not vals or any(not (v > 0) or not math.isfinite(v) for v in vals):
        raise ContractError("Dirichlet parameters must be finite and > 0")
    return math.fsum(math.lgamma(v) for v in vals) - math.lgamma(math.fsum(vals))


def log_bayes_factor(c_a, c_b, prior: DirichletPrior = DirichletPrior()) -> float:
    """``log BF``; positive favours "the classifiers differ"."""
    a = np.asarray(c_a, dtype=np.float64)
    b = np.asarray(c_b, dtype=np.float64)
    if a.ndim != 1 or a.shape != b.shape or a.size % 2:
        raise ContractError(f"count vectors must have equal even length, got {a.shape} and {b.shape}")
    if (a < 0).any() or (b < 0).any():
        raise ContractError("counts must be non-negative")
    u = prior.vector(a.size // 2)
    # sum the two "different" terms and the two "same" terms separately so swapping a and b is exact
    different = math.fsum([log_dirichlet_norm(u + a), log_dirichlet_norm(u + b)])
    same = math.fsum([log_dirichlet_norm(u), log_dirichlet_norm(u + (a + b))])
    return different - same


def verdict(log_bf: float) -> str:
    return "different" if log_bf > 0 else "same"


# Jeffreys-style bands on |log BF|, for reporting only
_BANDS = ((math.log(3), "barely worth mentioning"), (math.log(10), "substantial"),
          (math.log(30), "strong"), (math.log(100), "very strong"))  # fmt: skip


def evidence_strength(log_bf: float) -> str:
    for bound, label in _BANDS:
        if abs(log_bf) < bound:
            return label
    return "decisive"
