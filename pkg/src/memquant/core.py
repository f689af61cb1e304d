"""Shared domain types, the biweight smoothing function and the check loss.

Users hand the library ``p`` covariates per observation; the intercept column
is prepended internally, so every estimator-facing vector has length
``p + 1`` with index 0 the intercept.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionMismatch, InvalidQuantile

__all__ = [
    "Observation",
    "Batch",
    "quantile_level",
    "add_intercept",
    "smooth_h",
    "smooth_h_prime",
    "smooth_h_integral",
    "check_loss",
    "qr_objective",
    "v0_direction",
]


def quantile_level(tau) -> float:
    """Validate a quantile level and return it as a float in (0, 1)."""
    t = float(tau)
    if not (0.0 < t < 1.0):
        raise InvalidQuantile(f"quantile level must lie in (0, 1), got {tau!r}")
    return t


@dataclass(frozen=True)
class Observation:
    """One response with its covariates (no intercept entry)."""

    y: float
    x: tuple = ()

    def __post_init__(self):
        x = tuple(float(v) for v in self.x)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", float(self.y))
        if not np.isfinite(self.y) or not all(np.isfinite(x)):
            raise ValueError("observation entries must be finite")

    @property
    def p(self) -> int:
        return len(self.x)


class Batch:
    """A block of observations held as arrays.

    ``x`` has shape ``(n, p)`` without the intercept; ``design`` is the
    ``(n, p + 1)`` matrix with a leading column of ones. The design matrix is
    built once and cached because every pass over a batch needs it.
    """

    __slots__ = ("x", "y", "_design")

    def __init__(self, x, y):
        y = np.ascontiguousarray(y, dtype=np.float64).reshape(-1)
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x.reshape(len(y), -1) if len(y) else x.reshape(0, 0)
        if x.shape[0] != y.shape[0]:
            raise DimensionMismatch(
                f"x has {x.shape[0]} rows but y has {y.shape[0]} entries"
            )
        self.x = np.ascontiguousarray(x)
        self.y = y
        self._design = None

    @classmethod
    def from_observations(cls, obs: Iterable[Observation], p: int | None = None):
        obs = list(obs)
        if not obs:
            return cls(np.zeros((0, p or 0)), np.zeros(0))
        ps = {o.p for o in obs}
        if len(ps) != 1:
            raise DimensionMismatch(f"mixed covariate lengths {sorted(ps)}")
        x = np.array([o.x for o in obs], dtype=np.float64).reshape(len(obs), -1)
        return cls(x, [o.y for o in obs])

    @classmethod
    def from_design(cls, design, y):
        design = np.asarray(design, dtype=np.float64)
        b = cls(design[:, 1:], y)
        b._design = np.ascontiguousarray(design)
        return b

    def __len__(self):
        return self.y.shape[0]

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def design(self) -> np.ndarray:
        if self._design is None:
            self._design = add_intercept(self.x)
        return self._design

    def observations(self) -> list[Observation]:
        return [Observation(float(yi), tuple(xi)) for yi, xi in zip(self.y, self.x)]

    def take(self, idx) -> "Batch":
        return Batch(self.x[idx], self.y[idx])

    def split(self, size: int) -> list["Batch"]:
        """Consecutive blocks of ``size`` rows (the last may be short)."""
        if size < 1:
            raise ValueError("block size must be positive")
        return [
            Batch(self.x[i : i + size], self.y[i : i + size])
            for i in range(0, self.n, size)
        ]

    def __repr__(self):
        return f"Batch(n={self.n}, p={self.p})"


def as_batch(data) -> Batch:
    if isinstance(data, Batch):
        return data
    return Batch.from_observations(data)


def concat(batches: Sequence[Batch]) -> Batch:
    return Batch(
        np.concatenate([b.x for b in batches], axis=0),
        np.concatenate([b.y for b in batches]),
    )


def add_intercept(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    out = np.empty((x.shape[0], x.shape[1] + 1))
    out[:, 0] = 1.0
    out[:, 1:] = x
    return out


def smooth_h(u):
    """Integrated biweight kernel: 0 below -1, 1 above 1, quintic in between.

    The boundary clauses are applied explicitly; the polynomial is 0 and 1
    at the endpoints only up to rounding.
    """
    u = np.asarray(u, dtype=np.float64)
    c = np.clip(u, -1.0, 1.0)
    c2 = c * c
    poly = 0.5 + 0.9375 * c * (1.0 - c2 * (2.0 / 3.0 - 0.2 * c2))
    out = np.where(u <= -1.0, 0.0, np.where(u >= 1.0, 1.0, poly))
    return float(out) if np.ndim(out) == 0 else out


def smooth_h_prime(u):
    """Biweight kernel ``(15/16)(1 - u^2)^2`` on |u| < 1, zero elsewhere."""
    c = np.clip(u, -1.0, 1.0)
    w = 1.0 - c * c
    out = 0.9375 * w * w
    return float(out) if np.ndim(out) == 0 else out


def smooth_h_integral(u):
    """``G(u) = int_{-1}^{u} H(t) dt``, continued linearly past 1.

    With it the convolution-smoothed check loss is
    ``(tau - 1) r + h G(r / h)``.
    """
    u = np.asarray(u, dtype=np.float64)
    c = np.clip(u, -1.0, 1.0)
    c2 = c * c
    inner = (c + 1.0) / 2.0 + 0.9375 * (
        (c2 - 1.0) / 2.0 - (c2 * c2 - 1.0) / 6.0 + (c2 * c2 * c2 - 1.0) / 30.0
    )
    out = inner + np.maximum(u - 1.0, 0.0)
    return float(out) if out.ndim == 0 else out


def check_loss(x, tau):
    """Asymmetric absolute deviation ``x (tau - 1{x <= 0})``."""
    tau = quantile_level(tau)
    x = np.asarray(x, dtype=np.float64)
    out = x * (tau - (x <= 0))
    return float(out) if out.ndim == 0 else out


def qr_objective(batch: Batch, beta, tau) -> float:
    """Sum of check losses of the residuals ``y - X beta``."""
    r = batch.y - batch.design @ np.asarray(beta, dtype=np.float64)
    return float(np.sum(check_loss(r, tau)))


def v0_direction(p: int) -> np.ndarray:
    """The equal-weight unit direction ``(p+1)^{-1/2} 1`` used in experiments."""
    return np.full(p + 1, (p + 1) ** -0.5)
