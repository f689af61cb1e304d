"""Sandwich variance, confidence intervals and related diagnostics.

The asymptotic variance of ``sqrt(n) v' beta_hat`` is
``tau (1 - tau) v' D^{-1} Sigma D^{-1} v`` with ``D = E[X X' f(0 | X)]``
and ``Sigma = E[X X']``. ``D`` is estimated by the aggregated ``V / n`` of
the last round and ``Sigma`` by the average outer product of the design.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .core import quantile_level
from .errors import CountMismatch, DimensionMismatch, NotConverged, NotSymmetric, SingularSystem
from .leqr import LocalStats, adaptive_bandwidth, score_norm
from .linsolve import cg_solve

__all__ = [
    "VarianceEstimate",
    "build_variance_estimate",
    "sandwich_form",
    "half_width",
    "confidence_interval",
    "variance_ratio",
    "score_norm",
    "adaptive_bandwidth",
]


@dataclass
class VarianceEstimate:
    d_hat: np.ndarray
    sigma_hat: np.ndarray
    n: int

    def __post_init__(self):
        self.d_hat = 0.5 * (np.asarray(self.d_hat, float) + np.asarray(self.d_hat, float).T)
        self.sigma_hat = 0.5 * (np.asarray(self.sigma_hat, float)
                                + np.asarray(self.sigma_hat, float).T)
        if self.d_hat.shape != self.sigma_hat.shape:
            raise DimensionMismatch("d_hat and sigma_hat differ in shape")
        if self.n < 1:
            raise CountMismatch("variance estimate needs at least one observation")


def build_variance_estimate(agg: LocalStats, xx_sum, n: int) -> VarianceEstimate:
    """``d_hat = agg.v / n`` and ``sigma_hat = xx_sum / n``."""
    if agg.count != n:
        raise CountMismatch(f"statistics cover {agg.count} observations, expected {n}")
    xx_sum = np.asarray(xx_sum, dtype=np.float64)
    if xx_sum.shape != agg.v.shape:
        raise DimensionMismatch(f"xx_sum shape {xx_sum.shape} vs {agg.v.shape}")
    return VarianceEstimate(agg.v / n, xx_sum / n, n)


def sandwich_form(ve: VarianceEstimate, v) -> float:
    """``v' d_hat^{-1} sigma_hat d_hat^{-1} v``.

    ``d_hat`` is symmetric, so with ``a = d_hat^{-1} v`` the form is
    ``a' sigma_hat a`` and one CG solve suffices.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (ve.d_hat.shape[0],):
        raise DimensionMismatch(f"direction has length {v.shape[0]}, expected {ve.d_hat.shape[0]}")
    if not np.any(v):
        raise ValueError("direction must be nonzero")
    try:
        a = cg_solve(ve.d_hat, v, tol=1e-12, max_iter=50 * v.shape[0])
    except (NotConverged, NotSymmetric) as exc:
        raise SingularSystem(f"cannot apply inverse of d_hat: {exc}") from exc
    return float(a @ ve.sigma_hat @ a)


def half_width(ve: VarianceEstimate, v, tau, alpha: float = 0.05) -> float:
    tau = quantile_level(tau)
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    z = float(norm.ppf(1.0 - alpha / 2.0))
    form = max(sandwich_form(ve, v), 0.0)
    return z * math.sqrt(tau * (1.0 - tau) * form / ve.n)


def confidence_interval(beta, v, ve: VarianceEstimate, tau, alpha: float = 0.05):
    """Normal-theory interval ``v' beta +/- n^{-1/2} sqrt(tau (1-tau) v' D^-1 S D^-1 v) z``."""
    center = float(np.asarray(v, dtype=np.float64) @ np.asarray(beta, dtype=np.float64))
    w = half_width(ve, v, tau, alpha)
    return center - w, center + w


def variance_ratio(ve: VarianceEstimate, v, true_variance: float, tau) -> float:
    """Square root of estimated over true limiting variance of ``sqrt(n) v' beta_hat``.

    ``true_variance`` must include the ``tau (1 - tau)`` factor.
    """
    tau = quantile_level(tau)
    if not true_variance > 0:
        raise ValueError("true variance must be positive")
    est = tau * (1.0 - tau) * sandwich_form(ve, v)
    return math.sqrt(max(est, 0.0) / true_variance)
