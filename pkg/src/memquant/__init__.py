"""Quantile regression under memory constraints.

Divide-and-conquer and one-pass streaming linear estimators for quantile
regression, with sandwich-variance intervals, baselines, synthetic data and
a simulated sensor-tree runner.
"""
from .batch_qr import qr_vertex_oracle, sample_quantile, solve_qr
from .baselines import naive_dc, naive_dc_quantile, qr_all, quantile_average_bias
from .core import Batch, Observation, check_loss, smooth_h, smooth_h_prime, v0_direction
from .errors import MemquantError
from .inference import (
    VarianceEstimate,
    build_variance_estimate,
    confidence_interval,
    variance_ratio,
)
from .kernels import BACKEND
from .leqr import (
    DcConfig,
    LocalStats,
    adaptive_bandwidth,
    bandwidth_schedule,
    compute_local_stats,
    dc_leqr,
    merge,
    required_rounds,
    score_norm,
    solve_step,
)
from .linsolve import cg_solve
from .online import (
    OnlineState,
    interval_bounds,
    online_bandwidth,
    online_ingest,
    online_ingest_many,
    online_init,
)

__version__ = "0.1.0"
