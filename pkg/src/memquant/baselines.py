"""Comparators: naive averaging of per-batch fits, pooled QR, and the
sample-quantile version of naive averaging with its first-order bias."""
from __future__ import annotations

import numpy as np

from .batch_qr import quantile_index, sample_quantile, solve_qr
from .core import as_batch, concat, quantile_level
from .errors import NoConvergence, RankDeficient

__all__ = ["naive_dc", "qr_all", "naive_dc_quantile", "quantile_average_bias"]


def naive_dc(partitions, tau) -> np.ndarray:
    """Unweighted mean of per-batch QR estimates.

    Solver errors are re-raised with the offending batch index in the message.
    """
    tau = quantile_level(tau)
    total = None
    count = 0
    for k, b in enumerate(partitions):
        try:
            est = solve_qr(b, tau)
        except (RankDeficient, NoConvergence) as exc:
            raise type(exc)(f"batch {k}: {exc}") from exc
        total = est if total is None else total + est
        count += 1
    if count == 0:
        raise ValueError("no partitions supplied")
    return total / count


def qr_all(all_data, tau) -> np.ndarray:
    """Pooled QR on all observations at once (ignores the memory limit)."""
    if isinstance(all_data, (list, tuple)) and all_data and hasattr(all_data[0], "design"):
        all_data = concat(list(all_data))
    return solve_qr(as_batch(all_data), tau)


def naive_dc_quantile(batches, tau) -> float:
    """Average of the per-batch interpolated sample quantiles.

    ``batches`` is a sequence of value lists, or a 2-D array with one batch
    per row (handled in one vectorised pass).
    """
    if isinstance(batches, np.ndarray) and batches.ndim == 2:
        return _naive_quantile_rows(batches, tau)
    vals = [sample_quantile(b, tau) for b in batches]
    if not vals:
        raise ValueError("no batches supplied")
    return float(np.mean(vals))


def _naive_quantile_rows(arr, tau) -> float:
    if arr.shape[0] == 0:
        raise ValueError("no batches supplied")
    j, gamma = quantile_index(arr.shape[1], tau)
    ys = np.sort(arr, axis=1)
    vals = ys[:, j - 1] if gamma == 0.0 else (1.0 - gamma) * ys[:, j - 1] + gamma * ys[:, j]
    return float(np.mean(vals))


def quantile_average_bias(f_at_beta: float, f_prime_at_beta: float, tau, m: int) -> float:
    """Leading bias ``b / m`` of the averaged sample quantile.

    ``b = -tau (1 - tau) f'(q) / (2 f(q)^3)`` with ``f`` the density at the
    true quantile ``q``. It does not shrink as more batches are averaged.
    """
    tau = quantile_level(tau)
    if not f_at_beta > 0:
        raise ValueError("density at the quantile must be positive")
    if m < 1:
        raise ValueError("batch size must be at least 1")
    b = -tau * (1.0 - tau) * f_prime_at_beta / (2.0 * f_at_beta**3)
    return b / m
