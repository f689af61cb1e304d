"""Synthetic data for the simulation study and the Monte-Carlo harness.

Covariates are Uniform(0, 1) with correlation ``0.5^{|j-k|}`` between
columns, built with a Gaussian copula: a latent AR(1) normal vector with
lag-1 correlation ``2 sin(pi / 12)`` pushed through the normal CDF. That
choice makes the marginals exactly uniform and the lag-1 Pearson correlation
exactly 0.5; higher lags are within about 0.01 of ``0.5^k``.

Responses are ``y = x' beta + eps`` with ``beta = 1`` (intercept included)
and one of three noise laws.
"""
from __future__ import annotations

import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy import special, stats

from .baselines import naive_dc, qr_all
from .core import Batch, quantile_level, v0_direction
from .errors import ConfigError, MemquantError
from .inference import build_variance_estimate, confidence_interval
from .leqr import DcConfig, dc_leqr, required_rounds
from .online import online_init, online_ingest_many

__all__ = [
    "NOISE_MODELS",
    "METHODS",
    "LATENT_RHO",
    "rng_for",
    "gen_covariates",
    "gen_noise",
    "gen_noise_batch",
    "true_beta_tau",
    "make_dataset",
    "covariate_second_moment",
    "true_limiting_variance",
    "ExperimentConfig",
    "TrialResult",
    "SummaryRow",
    "parse_config",
    "load_config",
    "run_coverage_experiment",
    "worker_count",
]

NOISE_MODELS = ("homoscedastic", "heteroscedastic", "exponential")
_MODEL_ALIASES = {
    "homoscedastic_normal": "homoscedastic",
    "heteroscedastic_normal": "heteroscedastic",
    "exp": "exponential",
}
METHODS = ("dc_leqr", "naive_dc", "qr_all", "online")
LATENT_RHO = 2.0 * math.sin(math.pi / 12.0)
HETERO_SLOPE = 0.3


def canonical_model(model: str) -> str:
    name = _MODEL_ALIASES.get(model, model)
    if name not in NOISE_MODELS:
        raise ValueError(f"unknown noise model {model!r}; choose from {', '.join(NOISE_MODELS)}")
    return name


def rng_for(seed) -> np.random.Generator:
    """Counter-based Philox stream keyed by ``seed`` (int or SeedSequence)."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(int(seed))
    return np.random.Generator(np.random.Philox(ss))


def _as_rng(seed_or_rng) -> np.random.Generator:
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return rng_for(seed_or_rng)


def gen_covariates(n: int, p: int, seed) -> np.ndarray:
    """``n x p`` correlated Uniform(0, 1) covariates."""
    if n < 0 or p < 0:
        raise ValueError("n and p must be nonnegative")
    rng = _as_rng(seed)
    if p == 0:
        return np.zeros((n, 0))
    e = rng.standard_normal((n, p))
    z = np.empty_like(e)
    z[:, 0] = e[:, 0]
    s = math.sqrt(1.0 - LATENT_RHO**2)
    for j in range(1, p):
        z[:, j] = LATENT_RHO * z[:, j - 1] + s * e[:, j]
    return special.ndtr(z)


def gen_noise_batch(model: str, x: np.ndarray, rng) -> np.ndarray:
    """Raw noise for every row of ``x`` (``x`` without intercept)."""
    model = canonical_model(model)
    rng = _as_rng(rng)
    n = x.shape[0]
    if model == "homoscedastic":
        return rng.standard_normal(n)
    if model == "heteroscedastic":
        if x.shape[1] < 1:
            raise ValueError("heteroscedastic noise needs at least one covariate")
        return (1.0 + HETERO_SLOPE * x[:, 0]) * rng.standard_normal(n)
    return rng.standard_exponential(n)


def gen_noise(model: str, x_row, rng) -> float:
    x = np.asarray(x_row, dtype=np.float64).reshape(1, -1)
    return float(gen_noise_batch(model, x, rng)[0])


def true_beta_tau(model: str, tau, p: int) -> np.ndarray:
    """Conditional ``tau``-quantile coefficients of the generating model."""
    model = canonical_model(model)
    tau = quantile_level(tau)
    beta = np.ones(p + 1)
    if model == "exponential":
        beta[0] += -math.log1p(-tau)
        return beta
    z = float(stats.norm.ppf(tau))
    beta[0] += z
    if model == "heteroscedastic":
        if p < 1:
            raise ValueError("heteroscedastic model needs p >= 1")
        beta[1] += HETERO_SLOPE * z
    return beta


def make_dataset(model: str, n: int, p: int, seed) -> Batch:
    """Covariates, then noise, from one Philox stream."""
    rng = _as_rng(seed)
    x = gen_covariates(n, p, rng)
    y = x.sum(axis=1) + 1.0 + gen_noise_batch(model, x, rng)
    return Batch(x, y)


def covariate_second_moment(p: int) -> np.ndarray:
    """Exact ``E[X X']`` for the copula covariates with the intercept prepended.

    Pearson correlation between ``Phi(Z_j)`` and ``Phi(Z_k)`` for standard
    bivariate normal with correlation ``r`` is ``(6 / pi) arcsin(r / 2)``.
    """
    out = np.empty((p + 1, p + 1))
    out[0, 0] = 1.0
    out[0, 1:] = out[1:, 0] = 0.5
    for j in range(p):
        for k in range(p):
            r = LATENT_RHO ** abs(j - k)
            corr = 6.0 / math.pi * math.asin(r / 2.0)
            out[j + 1, k + 1] = 0.25 + corr / 12.0
    return out


def true_limiting_variance(model: str, tau, p: int, v=None, mc_samples: int = 2_000_000,
                           seed: int = 20240601) -> float:
    """``tau (1 - tau) v' D^{-1} Sigma D^{-1} v`` under the generating model.

    ``Sigma`` is exact. ``D = E[X X' f(0 | X)]`` is exact for the two
    constant-density models; for the heteroscedastic model the conditional
    density scales as ``1 / (1 + 0.3 X_1)`` and ``D`` is a Monte-Carlo
    average over ``mc_samples`` draws.
    """
    model = canonical_model(model)
    tau = quantile_level(tau)
    v = v0_direction(p) if v is None else np.asarray(v, dtype=np.float64)
    sigma = covariate_second_moment(p)
    if model == "homoscedastic":
        d = stats.norm.pdf(stats.norm.ppf(tau)) * sigma
    elif model == "exponential":
        d = (1.0 - tau) * sigma  # Exp(1) density at its tau-quantile
    else:
        x = gen_covariates(mc_samples, p, seed)
        w = stats.norm.pdf(stats.norm.ppf(tau)) / (1.0 + HETERO_SLOPE * x[:, 0])
        xd = np.hstack([np.ones((mc_samples, 1)), x])
        d = (xd * w[:, None]).T @ xd / mc_samples
    a = np.linalg.solve(d, v)
    return float(tau * (1.0 - tau) * a @ sigma @ a)


# ---------------------------------------------------------------- harness


@dataclass
class ExperimentConfig:
    p: int = 15
    m: int = 100
    n: int = 10_000
    tau: list = field(default_factory=lambda: [0.5])
    model: str = "homoscedastic"
    method: list = field(default_factory=lambda: ["dc_leqr"])
    q: list = field(default_factory=lambda: [None])  # None -> required_rounds
    reps: int = 500
    seed: int = 1
    alpha: float = 0.05
    c: float = 1.0
    adaptive_grid: Optional[list] = None
    variance_q: int = 4  # DC round whose D estimate the baselines borrow
    online_stride: int = 1

    def __post_init__(self):
        self.model = canonical_model(self.model)
        self.tau = [quantile_level(t) for t in self.tau]
        for meth in self.method:
            if meth not in METHODS:
                raise ValueError(f"unknown method {meth!r}")
        if self.reps < 1:
            raise ValueError("reps must be at least 1")
        if not (0 < self.alpha < 1):
            raise ValueError("alpha must lie in (0, 1)")
        if self.m > self.n:
            raise ValueError("m must not exceed n")

    def q_values(self, method: str) -> list:
        """Round counts the method is run at; baselines ignore ``q``."""
        if method in ("dc_leqr",):
            return [self.resolved_q(q) for q in self.q]
        return [None]

    def resolved_q(self, q):
        return required_rounds(max(self.p, 1), self.m, self.n) if q is None else int(q)

    def planned_fits(self) -> int:
        return self.reps * len(self.tau) * sum(len(self.q_values(mt)) for mt in self.method)


_INT_KEYS = {"p", "m", "n", "reps", "seed", "variance_q", "online_stride"}
_FLOAT_KEYS = {"alpha", "c"}


def _parse_grid(text: str) -> list:
    # "lo:hi:count" is an evenly spaced grid, otherwise a comma list
    if ":" in text:
        lo, hi, cnt = text.split(":")
        return [float(v) for v in np.linspace(float(lo), float(hi), int(cnt))]
    return [float(v) for v in text.split(",") if v.strip()]


def _parse_number(key, text):
    text = text.strip()
    if key in _INT_KEYS:
        val = float(text)
        if not val.is_integer():
            raise ValueError(f"{key} must be an integer")
        return int(val)
    return float(text)


def parse_config(text: str) -> ExperimentConfig:
    """Parse ``key = value`` lines. ``#`` starts a comment; lists are comma separated."""
    kw = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected key = value, got {raw.strip()!r}", lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if not value:
            raise ConfigError(f"empty value for {key!r}", lineno)
        if key in kw:
            raise ConfigError(f"duplicate key {key!r}", lineno)
        try:
            if key in _INT_KEYS or key in _FLOAT_KEYS:
                kw[key] = _parse_number(key, value)
            elif key == "tau":
                kw[key] = [quantile_level(v) for v in value.split(",")]
            elif key == "q":
                kw[key] = [None if v.strip() in ("auto", "") else int(v) for v in value.split(",")]
                if any(q is not None and q < 1 for q in kw[key]):
                    raise ValueError("q must be at least 1")
            elif key == "method":
                kw[key] = [v.strip() for v in value.split(",")]
                bad = [v for v in kw[key] if v not in METHODS]
                if bad:
                    raise ValueError(f"unknown method {bad[0]!r}")
            elif key == "model":
                kw[key] = canonical_model(value)
            elif key == "adaptive_grid":
                kw[key] = _parse_grid(value)
                if not kw[key] or any(c <= 0 for c in kw[key]):
                    raise ValueError("adaptive grid must hold positive constants")
            else:
                raise ValueError(f"unknown key {key!r}")
        except (ValueError, MemquantError) as exc:
            raise ConfigError(str(exc), lineno) from None
    try:
        return ExperimentConfig(**kw)
    except (ValueError, MemquantError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config(fh.read())


@dataclass
class TrialResult:
    method: str
    q: Optional[int]
    tau: float
    rep: int
    seed: int
    estimate: Optional[np.ndarray]
    ci: Optional[tuple]
    truth: float
    covered: Optional[bool]
    seconds: float
    error: Optional[str] = None

    @property
    def projection(self) -> Optional[float]:
        if self.estimate is None:
            return None
        return float(v0_direction(self.estimate.shape[0] - 1) @ self.estimate)


@dataclass
class SummaryRow:
    method: str
    q: Optional[int]
    tau: float
    log_m_n: float
    coverage: Optional[float]
    bias: Optional[float]
    variance: Optional[float]
    seconds: float
    failures: int
    reps: int

    def as_dict(self):
        return {
            "method": self.method,
            "q": "" if self.q is None else self.q,
            "tau": self.tau,
            "log_m_n": self.log_m_n,
            "coverage": self.coverage,
            "bias": self.bias,
            "variance": self.variance,
            "seconds": self.seconds,
            "failures": self.failures,
            "reps": self.reps,
        }


def _dc(parts, cfg: ExperimentConfig, tau, q):
    dcfg = DcConfig(tau=tau, q=q, m=cfg.m, c=cfg.c, adaptive_grid=cfg.adaptive_grid)
    beta, diag = dc_leqr(parts, dcfg)
    ve = build_variance_estimate(diag.agg, diag.xx_sum, diag.n)
    return beta, ve


def run_single_rep(cfg: ExperimentConfig, rep: int) -> list:
    """All fits of one replication, in (tau, method, q) order."""
    seed = cfg.seed + rep
    data = make_dataset(cfg.model, cfg.n, cfg.p, seed)
    v0 = v0_direction(cfg.p)
    out = []
    for tau in cfg.tau:
        truth = float(v0 @ true_beta_tau(cfg.model, tau, cfg.p))
        parts = data.split(cfg.m)
        borrowed = {}

        def borrowed_variance():
            # the baselines use the D estimate of DC-LEQR at round variance_q
            if "ve" not in borrowed:
                borrowed["ve"] = _dc(parts, cfg, tau, cfg.variance_q)[1]
            return borrowed["ve"]

        for method in cfg.method:
            for q in cfg.q_values(method):
                t0 = time.perf_counter()
                try:
                    if method == "dc_leqr":
                        beta, ve = _dc(parts, cfg, tau, q)
                        if q == cfg.variance_q and "ve" not in borrowed:
                            borrowed["ve"] = ve
                    elif method == "naive_dc":
                        beta = naive_dc(parts, tau)
                        ve = borrowed_variance()
                    elif method == "qr_all":
                        beta = qr_all(data, tau)
                        ve = borrowed_variance()
                    else:
                        state = online_init(parts[0], tau, solve_every=cfg.online_stride)
                        rest = Batch(data.x[cfg.m :], data.y[cfg.m :])
                        beta = online_ingest_many(state, rest)
                        ve = state.variance_estimate()
                    lo, hi = confidence_interval(beta, v0, ve, tau, cfg.alpha)
                    out.append(TrialResult(method, q, tau, rep, seed, beta, (lo, hi), truth,
                                           bool(lo <= truth <= hi), time.perf_counter() - t0))
                except (MemquantError, np.linalg.LinAlgError) as exc:
                    out.append(TrialResult(method, q, tau, rep, seed, None, None, truth, None,
                                           time.perf_counter() - t0, f"{type(exc).__name__}: {exc}"))
    return out


def worker_count() -> int:
    """Process count from ``MEMQUANT_THREADS`` (0 or unset means one per CPU)."""
    raw = os.environ.get("MEMQUANT_THREADS", "0").strip() or "0"
    try:
        k = int(raw)
    except ValueError:
        raise ConfigError(f"MEMQUANT_THREADS must be an integer, got {raw!r}") from None
    if k < 0:
        raise ConfigError("MEMQUANT_THREADS must be nonnegative")
    return k if k > 0 else (os.cpu_count() or 1)


def _rep_chunk(args):
    cfg, reps = args
    return [run_single_rep(cfg, r) for r in reps]


def run_trials(cfg: ExperimentConfig, workers: Optional[int] = None) -> list:
    """Every TrialResult, ordered by rep index regardless of scheduling."""
    workers = worker_count() if workers is None else workers
    reps = list(range(cfg.reps))
    if workers <= 1 or cfg.reps == 1:
        per_rep = [run_single_rep(cfg, r) for r in reps]
    else:
        chunks = [reps[i::workers] for i in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_rep_chunk, [(cfg, c) for c in chunks]))
        per_rep = [None] * cfg.reps
        for chunk, res in zip(chunks, results):
            for r, trials in zip(chunk, res):
                per_rep[r] = trials
    return [t for trials in per_rep for t in trials]


def summarize(cfg: ExperimentConfig, trials: Sequence[TrialResult]) -> list:
    """One row per (method, q, tau) in config order."""
    rows = []
    log_m_n = math.log(cfg.n) / math.log(cfg.m)
    for method in cfg.method:
        for q in cfg.q_values(method):
            for tau in cfg.tau:
                sel = [t for t in trials if t.method == method and t.q == q and t.tau == tau]
                ok = [t for t in sel if t.error is None]
                failures = len(sel) - len(ok)
                proj = np.array([t.projection for t in ok])
                truth = sel[0].truth if sel else float("nan")
                coverage = float(np.mean([t.covered for t in ok])) if ok else None
                bias = float(np.mean(proj - truth)) if ok else None
                variance = float(np.var(proj, ddof=1)) if len(ok) > 1 else None
                seconds = float(sum(t.seconds for t in sel))
                rows.append(SummaryRow(method, q, tau, log_m_n, coverage, bias, variance,
                                       seconds, failures, len(sel)))
    return rows


def run_coverage_experiment(cfg: ExperimentConfig, workers: Optional[int] = None,
                            return_trials: bool = False):
    """Run ``cfg.reps`` seeded replications and summarise coverage, bias and variance.

    Replication ``r`` draws fresh data from seed ``cfg.seed + r``. Fit
    failures are counted per row rather than aborting the run.
    """
    trials = run_trials(cfg, workers)
    rows = summarize(cfg, trials)
    return (rows, trials) if return_trials else rows
