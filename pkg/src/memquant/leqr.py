"""Local statistics, the linear estimator step and the divide-and-conquer driver.

Each batch reduces to a pair ``(u, v)``::

    u = sum_i x_i { H(r_i / h) + tau - 1 + (y_i / h) H'(r_i / h) }
    v = sum_i x_i x_i' H'(r_i / h) / h,        r_i = y_i - x_i' beta0

Sums over batches are exact, so any partition of the data (and any
reduction order) yields the same aggregate up to floating-point
reassociation. The refined estimate is the solution of ``v beta = u``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .batch_qr import solve_qr
from .core import Batch, as_batch, quantile_level
from .errors import (
    DimensionMismatch,
    InvalidDimensions,
    NotConverged,
    NotSymmetric,
    SingularSystem,
)
from .linsolve import cg_solve

__all__ = [
    "LocalStats",
    "DcConfig",
    "RoundRecord",
    "FitDiagnostics",
    "compute_local_stats",
    "merge",
    "solve_step",
    "bandwidth_schedule",
    "required_rounds",
    "score_norm",
    "adaptive_bandwidth",
    "dc_leqr",
]


@dataclass
class LocalStats:
    u: np.ndarray
    v: np.ndarray
    count: int = 0

    @classmethod
    def zeros(cls, dim: int) -> "LocalStats":
        return cls(np.zeros(dim), np.zeros((dim, dim)), 0)

    @property
    def dim(self) -> int:
        return self.u.shape[0]

    def __add__(self, other: "LocalStats") -> "LocalStats":
        return merge(self, other)

    def copy(self) -> "LocalStats":
        return LocalStats(self.u.copy(), self.v.copy(), self.count)

    def payload_scalars(self) -> int:
        """Scalars needed to ship this object: packed symmetric v, u, count."""
        d = self.dim
        return d * (d + 1) // 2 + d + 1


def compute_local_stats(batch, beta0, h: float, tau) -> LocalStats:
    batch = as_batch(batch)
    tau = quantile_level(tau)
    h = float(h)
    if not h > 0.0:
        raise ValueError(f"bandwidth must be positive, got {h}")
    beta0 = np.ascontiguousarray(beta0, dtype=np.float64)
    design = batch.design
    if beta0.shape != (design.shape[1],):
        raise DimensionMismatch(
            f"beta0 has length {beta0.shape[0]}, design has {design.shape[1]} columns"
        )
    u, v = kernels.local_stats(design, batch.y, beta0, h, tau)
    return LocalStats(u, v, batch.n)


def merge(a: LocalStats, b: LocalStats) -> LocalStats:
    if a.dim != b.dim:
        raise DimensionMismatch(f"cannot merge statistics of dimension {a.dim} and {b.dim}")
    return LocalStats(a.u + b.u, a.v + b.v, a.count + b.count)


def solve_step(agg: LocalStats, x0=None, tol: float = 1e-10,
               max_iter: Optional[int] = None, full_output: bool = False):
    """Solve ``agg.v beta = agg.u`` by conjugate gradients.

    Raises ``SingularSystem`` when CG cannot reach the tolerance, which in
    practice means ``v`` is (numerically) singular: too few residuals inside
    the smoothing window.
    """
    if max_iter is None:
        max_iter = 20 * agg.dim
    try:
        res = cg_solve(agg.v, agg.u, tol=tol, max_iter=max_iter, x0=x0, full_output=True)
    except (NotConverged, NotSymmetric) as exc:
        raise SingularSystem(f"aggregated system not solvable: {exc}") from exc
    return res if full_output else res.x


def _check_dims(p, m, n):
    if not (1 <= p < m <= n):
        raise InvalidDimensions(f"need 1 <= p < m <= n, got p={p}, m={m}, n={n}")


def bandwidth_schedule(g: int, p: int, m: int, n: int, c: float = 1.0) -> float:
    """``c * max(sqrt(p/n), (p/m)^(2^(g-2)))`` for round ``g >= 1``."""
    _check_dims(p, m, n)
    if g < 1:
        raise ValueError("round index starts at 1")
    if not c > 0:
        raise ValueError("scaling constant must be positive")
    return c * max(math.sqrt(p / n), (p / m) ** (2.0 ** (g - 2)))


def required_rounds(p: int, m: int, n: int) -> int:
    """Smallest ``q`` at which the schedule reaches its ``sqrt(p/n)`` floor.

    ``ceil(2 + log2(log sqrt(p/n) / log(p/m)))``, clamped to at least 1.
    """
    _check_dims(p, m, n)
    val = 2.0 + math.log(math.log(math.sqrt(p / n)) / math.log(p / m)) / math.log(2.0)
    return max(1, math.ceil(val - 1e-12))


def _bandwidth_p(p: int) -> int:
    # intercept-only models still need a positive bandwidth numerator
    return max(p, 1)


def score_norm(partitions, beta, tau) -> float:
    """``|| n^{-1} sum_i x_i (1{y_i - x_i' beta >= 0} + tau - 1) ||_2``.

    Accumulated as one ``p + 1`` vector per batch.
    """
    tau = quantile_level(tau)
    beta = np.asarray(beta, dtype=np.float64)
    total = np.zeros(beta.shape[0])
    n = 0
    for b in partitions:
        b = as_batch(b)
        if b.n == 0:
            continue
        r = b.y - b.design @ beta
        total += b.design.T @ ((r >= 0).astype(np.float64) + (tau - 1.0))
        n += b.n
    if n == 0:
        return 0.0
    return float(np.linalg.norm(total / n))


@dataclass
class DcConfig:
    """Settings for :func:`dc_leqr`.

    ``q=None`` uses :func:`required_rounds`. ``c`` is a constant or one value
    per round. ``bandwidths`` overrides the schedule entirely (length ``q``).
    ``m`` defaults to the size of the first partition. ``adaptive_grid``
    switches on score-norm selection of ``c`` in every round.
    """

    tau: float
    q: Optional[int] = None
    m: Optional[int] = None
    c: float | Sequence[float] = 1.0
    bandwidths: Optional[Sequence[float]] = None
    init_partition: int = 0
    adaptive_grid: Optional[Sequence[float]] = None
    cg_tol: float = 1e-12  # tight enough that partitioning changes only rounding

    def __post_init__(self):
        self.tau = quantile_level(self.tau)
        if self.q is not None and self.q < 1:
            raise ValueError("q must be at least 1")
        if self.bandwidths is not None:
            self.bandwidths = [float(h) for h in self.bandwidths]
            if self.q is None:
                self.q = len(self.bandwidths)
            if len(self.bandwidths) != self.q or any(not h > 0 for h in self.bandwidths):
                raise ValueError("explicit bandwidths must be q positive values")
        if np.ndim(self.c) == 0:
            if not float(self.c) > 0:
                raise ValueError("scaling constant must be positive")
        elif any(not float(ci) > 0 for ci in self.c):
            raise ValueError("scaling constants must be positive")
        if self.adaptive_grid is not None:
            self.adaptive_grid = [float(c) for c in self.adaptive_grid]
            if not self.adaptive_grid or any(not c > 0 for c in self.adaptive_grid):
                raise ValueError("adaptive grid must be a nonempty list of positive constants")

    def scale_for_round(self, g: int) -> float:
        if np.ndim(self.c) == 0:
            return float(self.c)
        return float(self.c[g - 1])


@dataclass
class RoundRecord:
    g: int
    h: float
    c: float
    score_norm: float
    cg_iterations: int
    cg_residual: float
    skipped_candidates: int = 0


@dataclass
class FitDiagnostics:
    n: int
    m: int
    p: int
    q: int
    beta_init: np.ndarray
    rounds: list = field(default_factory=list)
    agg: Optional[LocalStats] = None  # statistics of the final round
    xx_sum: Optional[np.ndarray] = None

    @property
    def bandwidths(self):
        return [r.h for r in self.rounds]

    @property
    def score_norms(self):
        return [r.score_norm for r in self.rounds]


def _aggregate(partitions, beta0, h, tau, dim, xx=None):
    agg = LocalStats.zeros(dim)
    for b in partitions:
        s = compute_local_stats(b, beta0, h, tau)
        agg.u += s.u
        agg.v += s.v
        agg.count += s.count
        if xx is not None and b.n:
            xx += b.design.T @ b.design
    return agg


def adaptive_bandwidth(partitions, beta0, base_h: float, tau, candidates, x0=None,
                       cg_tol: float = 1e-12):
    """Pick the scaling constant whose one-round estimate minimises the score norm.

    Returns ``(c, beta, agg, score, skipped)``. Ties keep the earliest
    candidate; candidates whose solve fails are skipped and counted.
    """
    partitions = [as_batch(b) for b in partitions]
    tau = quantile_level(tau)
    if not candidates:
        raise ValueError("candidate list is empty")
    dim = np.asarray(beta0).shape[0]
    best = None
    skipped = 0
    for c in candidates:
        agg = _aggregate(partitions, beta0, c * base_h, tau, dim)
        try:
            beta = solve_step(agg, x0=x0 if x0 is not None else beta0, tol=cg_tol)
        except SingularSystem:
            skipped += 1
            continue
        s = score_norm(partitions, beta, tau)
        if best is None or s < best[3]:
            best = (float(c), beta, agg, s)
    if best is None:
        raise SingularSystem("every bandwidth candidate produced a singular system")
    return best + (skipped,)


def dc_leqr(partitions, cfg: DcConfig, beta0=None):
    """Multi-round divide-and-conquer LEQR.

    Round 1 starts from classical QR on ``partitions[cfg.init_partition]``
    (or the supplied ``beta0``); every later round starts from the previous
    estimate. Each round streams over all partitions once to accumulate
    ``(u, v)`` at bandwidth ``h_g`` and then solves the merged system.

    Returns ``(beta, FitDiagnostics)``.
    """
    partitions = [as_batch(b) for b in partitions]
    if not partitions or any(b.n == 0 for b in partitions):
        raise ValueError("every partition must be nonempty")
    tau = cfg.tau
    p = partitions[0].p
    dim = p + 1
    n = sum(b.n for b in partitions)
    m = cfg.m if cfg.m is not None else partitions[0].n
    pb = _bandwidth_p(p)
    if cfg.bandwidths is None:
        _check_dims(pb, m, n)
    q = cfg.q if cfg.q is not None else required_rounds(pb, m, n)

    if beta0 is None:
        beta = solve_qr(partitions[cfg.init_partition], tau)
    else:
        beta = np.array(beta0, dtype=np.float64).reshape(dim)
    diag = FitDiagnostics(n=n, m=m, p=p, q=q, beta_init=beta.copy())
    xx = np.zeros((dim, dim))

    for g in range(1, q + 1):
        if cfg.bandwidths is not None:
            base_h, c = cfg.bandwidths[g - 1], 1.0
        else:
            base_h, c = bandwidth_schedule(g, pb, m, n, 1.0), cfg.scale_for_round(g)
        skipped = 0
        try:
            if cfg.adaptive_grid is not None:
                c, new_beta, agg, s, skipped = adaptive_bandwidth(
                    partitions, beta, base_h, tau, cfg.adaptive_grid, cg_tol=cfg.cg_tol
                )
                res = solve_step(agg, x0=beta, tol=cfg.cg_tol, full_output=True)
                if g == 1:
                    for b in partitions:
                        xx += b.design.T @ b.design
            else:
                agg = _aggregate(partitions, beta, c * base_h, tau, dim, xx if g == 1 else None)
                res = solve_step(agg, x0=beta, tol=cfg.cg_tol, full_output=True)
                new_beta = res.x
                s = score_norm(partitions, new_beta, tau)
        except SingularSystem as exc:
            exc.round_index = g
            raise SingularSystem(f"round {g}: {exc}", round_index=g) from exc
        beta = new_beta
        diag.rounds.append(RoundRecord(g, c * base_h, c, s, res.iterations, res.residual, skipped))
        diag.agg = agg
    diag.xx_sum = 0.5 * (xx + xx.T)
    return beta, diag
