"""One-pass streaming LEQR with constant memory.

The stream after the initial batch is cut into intervals ``[s_l, r_l]`` with
``r_l = floor(m^{a_l})``, where ``a_{2k-1} = 2^{k-1} + 1/2`` and
``a_{2k} = 2^{k-1} + 3/4``. Inside interval ``l`` every sample contributes
to running ``(u, v)`` sums evaluated at the estimate from the end of the
previous interval and bandwidth ``h_l``; the estimate at sample ``j`` solves
the system formed by those sums plus the frozen sums of interval ``l - 1``.
At ``j = r_l`` the running sums become the frozen ones.

Stream index ``j`` counts samples after the initial batch, starting at 1.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .batch_qr import solve_qr
from .core import Batch, Observation, as_batch, quantile_level
from .errors import DimensionMismatch, IntervalOverflow, InvalidDimensions
from .inference import VarianceEstimate, confidence_interval, half_width
from .leqr import LocalStats, compute_local_stats

__all__ = [
    "interval_bounds",
    "online_bandwidth",
    "OnlineState",
    "online_init",
    "online_ingest",
    "online_ingest_many",
]

_INT_LIMIT = 2**63 - 1


def _floor_power(m: int, l: int) -> int:
    """``floor(m^{a_l})`` in exact integer arithmetic (``a_0 = -inf`` gives 0)."""
    if l == 0:
        return 0
    k = (l + 1) // 2
    a = 2.0 ** (k - 1) + (0.5 if l % 2 else 0.75)
    if a * math.log2(m) > 63.5:
        raise IntervalOverflow(f"m^a_{l} exceeds the 64-bit range for m={m}")
    if l % 2:
        val = math.isqrt(m ** (2**k + 1))
    else:
        val = math.isqrt(math.isqrt(m ** (2 ** (k + 1) + 3)))
    if val > _INT_LIMIT:
        raise IntervalOverflow(f"m^a_{l} exceeds the 64-bit range for m={m}")
    return val


def interval_bounds(l: int, m: int) -> tuple[int, int]:
    """``(s_l, r_l)``: first and last stream index of interval ``l``."""
    if l < 1 or m < 2:
        raise InvalidDimensions(f"need l >= 1 and m >= 2, got l={l}, m={m}")
    return _floor_power(m, l - 1) + 1, _floor_power(m, l)


def online_bandwidth(l: int, m: int, p: int) -> float:
    """``sqrt(p/m)`` for ``l = 1``, ``sqrt(p / m^{a_{l-1}})`` afterwards."""
    if l < 1:
        raise InvalidDimensions("interval index starts at 1")
    if not (1 <= p < m):
        raise InvalidDimensions(f"need 1 <= p < m, got p={p}, m={m}")
    if l == 1:
        return math.sqrt(p / m)
    k = l // 2
    a = 2.0 ** (k - 1) + (0.5 if (l - 1) % 2 else 0.75)
    return math.sqrt(p) * m ** (-a / 2.0)


@dataclass
class OnlineState:
    """Everything the streaming estimator keeps between samples.

    Arrays are fixed-size ``p'`` vectors and ``p' x p'`` matrices, so the
    footprint does not grow with the stream.
    """

    m: int
    p_prime: int
    tau: float
    l: int
    j: int
    r_end: int  # last index of the current interval
    carried: LocalStats
    live: LocalStats
    xx: np.ndarray  # running sum of x x' over init batch and stream
    beta_prev_interval: np.ndarray
    beta_current: np.ndarray
    h_current: float
    solve_every: int = 1
    cg_tol: float = 1e-10
    solves: int = 0
    failures: int = 0
    warmup: bool = True

    @property
    def p(self) -> int:
        return self.p_prime - 1

    @property
    def n_seen(self) -> int:
        return self.m + self.j

    def stored_scalars(self) -> int:
        """Scalar slots held by the state (arrays plus bookkeeping fields)."""
        arrays = (self.carried.u, self.carried.v, self.live.u, self.live.v, self.xx,
                  self.beta_prev_interval, self.beta_current)
        # m, p', tau, l, j, r_end, two counts, h, stride, tol, solves, failures, warmup
        return sum(a.size for a in arrays) + 14

    def variance_estimate(self) -> VarianceEstimate:
        """``D`` from the frozen plus running ``V`` over their sample count,
        ``Sigma`` from all ``m + j`` outer products."""
        count = self.carried.count + self.live.count
        d_hat = (self.carried.v + self.live.v) / count
        ve = VarianceEstimate(d_hat, self.xx / self.n_seen, self.n_seen)
        return ve

    def confidence_interval(self, v, alpha: float = 0.05):
        return confidence_interval(self.beta_current, v, self.variance_estimate(), self.tau, alpha)

    def half_width(self, v, alpha: float = 0.05) -> float:
        return half_width(self.variance_estimate(), v, self.tau, alpha)


def _bandwidth_p(p):
    return max(p, 1)


def online_init(first_batch, tau, solve_every: int = 1, cg_tol: float = 1e-10) -> OnlineState:
    """Initial QR fit on the first ``m`` samples and their statistics at ``sqrt(p/m)``."""
    batch = as_batch(first_batch)
    tau = quantile_level(tau)
    if solve_every < 1:
        raise ValueError("solve_every must be at least 1")
    m, pp = batch.n, batch.p + 1
    if m < pp + 1:
        raise InvalidDimensions(f"initial batch of {m} rows is too small for {pp} coefficients")
    beta0 = solve_qr(batch, tau)
    h = online_bandwidth(1, m, _bandwidth_p(batch.p))
    carried = compute_local_stats(batch, beta0, h, tau)
    xx = batch.design.T @ batch.design
    return OnlineState(
        m=m,
        p_prime=pp,
        tau=tau,
        l=1,
        j=0,
        r_end=interval_bounds(1, m)[1],
        carried=carried,
        live=LocalStats.zeros(pp),
        xx=0.5 * (xx + xx.T),
        beta_prev_interval=beta0.copy(),
        beta_current=beta0.copy(),
        h_current=h,
        solve_every=solve_every,
        cg_tol=cg_tol,
    )


def _roll(state: OnlineState):
    state.carried = state.live
    state.live = LocalStats.zeros(state.p_prime)
    state.beta_prev_interval = state.beta_current.copy()
    state.l += 1
    state.r_end = interval_bounds(state.l, state.m)[1]
    state.h_current = online_bandwidth(state.l, state.m, _bandwidth_p(state.p))


def _feed(state: OnlineState, design, y):
    """Push rows that all fall inside the current interval."""
    n = design.shape[0]
    solves, failures, _ = kernels.online_block(
        design, y, state.beta_prev_interval, state.h_current, state.tau,
        state.carried.u, state.carried.v, state.live.u, state.live.v, state.xx,
        state.beta_current, state.j + 1, state.solve_every, state.cg_tol,
        20 * state.p_prime,
    )
    state.j += n
    state.live.count += n
    state.solves += solves
    state.failures += failures
    if state.warmup and state.l == 1 and state.live.count >= state.p_prime + 1:
        state.warmup = False
    if state.warmup and state.l > 1:
        state.warmup = False


def online_ingest_many(state: OnlineState, batch, on_checkpoint=None) -> np.ndarray:
    """Consume a block of consecutive stream samples; returns the latest estimate.

    The system is solved at every ``state.solve_every``-th index, at every
    interval end and at the last row of the block. Interval rollovers inside
    the block are handled in order; ``on_checkpoint(state)`` is called at each
    interval end before the statistics roll over.
    """
    batch = as_batch(batch)
    if batch.n and batch.p + 1 != state.p_prime:
        raise DimensionMismatch(f"samples have p={batch.p}, state expects p={state.p}")
    design, y = batch.design, batch.y
    pos = 0
    while pos < batch.n:
        take = min(batch.n - pos, state.r_end - state.j)
        _feed(state, design[pos : pos + take], y[pos : pos + take])
        pos += take
        if state.j == state.r_end:
            if on_checkpoint is not None:
                on_checkpoint(state)
            _roll(state)
    return state.beta_current.copy()


def online_ingest(state: OnlineState, obs) -> tuple[OnlineState, np.ndarray]:
    """Consume one sample and return ``(state, beta[j])``."""
    if isinstance(obs, Observation):
        batch = Batch(np.array([obs.x], dtype=np.float64).reshape(1, -1), [obs.y])
    else:
        y, x = obs
        batch = Batch(np.asarray(x, dtype=np.float64).reshape(1, -1), [y])
    beta = online_ingest_many(state, batch)
    return state, beta
