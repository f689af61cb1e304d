"""Command-line interface: ``memquant <command> ...``.

Every command is deterministic given its flags. Estimator errors exit with
the code attached to their exception class; usage and config errors exit 2.
"""
from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import kernels
from .baselines import naive_dc, qr_all
from .core import Batch, v0_direction
from .errors import ConfigError, DimensionMismatch, MemquantError, TooLarge
from .inference import build_variance_estimate, confidence_interval
from .leqr import DcConfig, dc_leqr
from .nettree import build_topology, read_topology_csv, simulate_dc_leqr, write_comm_csv
from .online import online_init, online_ingest_many
from .simgen import (
    load_config,
    make_dataset,
    run_coverage_experiment,
    true_beta_tau,
    worker_count,
)

QR_ALL_LIMIT = 1_000_000


def fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def read_dataset(path) -> Batch:
    with open(path, newline="") as fh:
        header = next(csv.reader(fh), None)
    if not header or header[0].strip() != "y":
        raise DimensionMismatch(f"{path}: header must start with 'y'")
    expect = ["y"] + [f"x{k}" for k in range(1, len(header))]
    if [h.strip() for h in header] != expect:
        raise DimensionMismatch(f"{path}: header must be {','.join(expect)}")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.size == 0:
        data = data.reshape(0, len(header))
    if data.shape[1] != len(header):
        raise DimensionMismatch(f"{path}: rows do not match the header width")
    return Batch(data[:, 1:], data[:, 0])


def write_dataset(batch: Batch, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["y"] + [f"x{k}" for k in range(1, batch.p + 1)])
        for yi, xi in zip(batch.y, batch.x):
            w.writerow([fmt(yi)] + [fmt(v) for v in xi])


def _partition(batch: Batch, m: int, shuffle):
    if shuffle is not None:
        perm = np.random.Generator(np.random.Philox(shuffle)).permutation(batch.n)
        batch = batch.take(perm)
    if m < 1 or m > batch.n:
        raise DimensionMismatch(f"batch size {m} is not in 1..{batch.n}")
    return batch, batch.split(m)


def _parse_floats(text):
    return [float(v) for v in text.replace("\n", ",").split(",") if v.strip()]


def _load_grid(path):
    with open(path) as fh:
        vals = _parse_floats(fh.read())
    if not vals or any(v <= 0 for v in vals):
        raise ConfigError(f"{path}: adaptive grid needs positive constants")
    return vals


def _write_report(path, beta, ve, tau, alpha, diag_rows):
    pp = beta.shape[0]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["field", "value", "lo", "hi"])
        for k in range(pp):
            e = np.zeros(pp)
            e[k] = 1.0
            lo, hi = confidence_interval(beta, e, ve, tau, alpha) if ve is not None else (None, None)
            w.writerow([f"beta{k}", fmt(beta[k]), fmt(lo), fmt(hi)])
        v0 = v0_direction(pp - 1)
        lo, hi = confidence_interval(beta, v0, ve, tau, alpha) if ve is not None else (None, None)
        w.writerow(["v0", fmt(v0 @ beta), fmt(lo), fmt(hi)])
        for name, value in diag_rows:
            w.writerow([name, fmt(value), "", ""])


def _dc_fit(parts, tau, m, q, c, grid):
    cfg = DcConfig(tau=tau, q=q, m=m, c=c, adaptive_grid=grid)
    beta, diag = dc_leqr(parts, cfg)
    ve = build_variance_estimate(diag.agg, diag.xx_sum, diag.n)
    return beta, ve, diag


def _dc_diag_rows(diag):
    rows = [("n", diag.n), ("m", diag.m), ("q", diag.q)]
    for r in diag.rounds:
        rows += [
            (f"h[{r.g}]", r.h),
            (f"c[{r.g}]", r.c),
            (f"score_norm[{r.g}]", r.score_norm),
            (f"cg_iterations[{r.g}]", r.cg_iterations),
        ]
    return rows


def cmd_gen(args):
    if args.n < 1 or args.p < 0:
        raise DimensionMismatch("need n >= 1 and p >= 0")
    batch = make_dataset(args.model, args.n, args.p, args.seed)
    write_dataset(batch, args.out)
    out = Path(args.out)
    truth = out.with_name(out.name[: -len(out.suffix)] + ".truth" + out.suffix
                          if out.suffix else out.name + ".truth.csv")
    with open(truth, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tau"] + [f"beta{k}" for k in range(args.p + 1)])
        for tau in _parse_floats(args.tau):
            w.writerow([fmt(tau)] + [fmt(b) for b in true_beta_tau(args.model, tau, args.p)])
    return 0


def cmd_fit_dc(args):
    data, parts = _partition(read_dataset(args.data), args.m, args.shuffle)
    grid = _load_grid(args.adaptive) if args.adaptive else None
    beta, ve, diag = _dc_fit(parts, args.tau, args.m, args.q, args.c, grid)
    _write_report(args.out, beta, ve, args.tau, args.alpha, _dc_diag_rows(diag))
    return 0


def _baseline(args, fit):
    data, parts = _partition(read_dataset(args.data), args.m, args.shuffle)
    beta = fit(data, parts)
    _, ve, _ = _dc_fit(parts, args.tau, args.m, args.variance_q, 1.0, None)
    rows = [("n", data.n), ("m", args.m), ("variance_q", args.variance_q)]
    _write_report(args.out, beta, ve, args.tau, args.alpha, rows)
    return 0


def cmd_fit_naive(args):
    return _baseline(args, lambda data, parts: naive_dc(parts, args.tau))


def cmd_fit_all(args):
    def fit(data, parts):
        if data.n > QR_ALL_LIMIT:
            raise TooLarge(f"pooled QR is limited to {QR_ALL_LIMIT} rows, got {data.n}")
        return qr_all(data, args.tau)

    return _baseline(args, fit)


def cmd_fit_online(args):
    data = read_dataset(args.data)
    if args.shuffle is not None:
        data = data.take(np.random.Generator(np.random.Philox(args.shuffle)).permutation(data.n))
    m = args.m
    if m < 2 or m > data.n:
        raise DimensionMismatch(f"initial batch size {m} is not in 2..{data.n}")
    state = online_init(Batch(data.x[:m], data.y[:m]), args.tau, solve_every=args.stride)
    v0 = v0_direction(data.p)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["j", "interval"] + [f"beta{k}" for k in range(data.p + 1)]
                   + ["v0", "half_width", "warmup"])
        last = [None]

        def emit(st):
            hw = st.half_width(v0, args.alpha) if st.j > 0 else None
            w.writerow([st.j, st.l] + [fmt(b) for b in st.beta_current]
                       + [fmt(v0 @ st.beta_current), fmt(hw), int(st.warmup)])
            last[0] = st.j

        online_ingest_many(state, Batch(data.x[m:], data.y[m:]), on_checkpoint=emit)
        if last[0] != state.j:
            emit(state)
    return 0


def cmd_experiment(args):
    cfg = load_config(args.config)
    if args.reps is not None:
        cfg.reps = args.reps
    if args.dry_run:
        print(f"reps={cfg.reps} fits={cfg.planned_fits()} workers={worker_count()}")
        return 0
    rows, trials = run_coverage_experiment(cfg, workers=args.workers, return_trials=True)
    cols = ["method", "q", "tau", "log_m_n", "coverage", "bias", "variance", "seconds",
            "failures", "reps"]
    out = sys.stdout if args.out in (None, "-") else open(args.out, "w", newline="")
    try:
        w = csv.writer(out)
        w.writerow(cols)
        for r in rows:
            d = r.as_dict()
            w.writerow([d["method"], d["q"], fmt(d["tau"]), fmt(d["log_m_n"]), fmt(d["coverage"]),
                        fmt(d["bias"]), fmt(d["variance"]), fmt(d["seconds"]), d["failures"],
                        d["reps"]])
    finally:
        if out is not sys.stdout:
            out.close()
    if args.per_rep:
        with open(args.per_rep, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["rep", "seed", "method", "q", "tau", "projection", "lo", "hi", "truth",
                        "covered", "seconds", "error"])
            for t in trials:
                lo, hi = t.ci if t.ci else (None, None)
                w.writerow([t.rep, t.seed, t.method, "" if t.q is None else t.q, fmt(t.tau),
                            fmt(t.projection), fmt(lo), fmt(hi), fmt(t.truth), fmt(t.covered),
                            fmt(t.seconds), t.error or ""])
    return 0


def cmd_simnet(args):
    data = read_dataset(args.data)
    if args.nodes < 1 or args.nodes > data.n:
        raise DimensionMismatch(f"cannot spread {data.n} rows over {args.nodes} nodes")
    if args.topology_file:
        topo = read_topology_csv(args.topology_file)
        if topo.size != args.nodes:
            raise DimensionMismatch(f"topology file has {topo.size} nodes, expected {args.nodes}")
    else:
        topo = build_topology(args.topology, args.nodes, args.k)
    bounds = np.linspace(0, data.n, args.nodes + 1).round().astype(int)
    parts = [Batch(data.x[a:b], data.y[a:b]) for a, b in zip(bounds[:-1], bounds[1:])]
    topo = topo.with_batches(parts)
    cfg = DcConfig(tau=args.tau, q=args.q, m=parts[0].n, c=args.c)
    beta, comm = simulate_dc_leqr(topo, cfg)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["field", "value"])
        for k, b in enumerate(beta):
            w.writerow([f"beta{k}", fmt(b)])
        w.writerow(["rounds", len(comm.rounds)])
        w.writerow(["messages", comm.messages])
        w.writerow(["uplink_scalars", comm.uplink_scalars])
        w.writerow(["downlink_scalars", comm.downlink_scalars])
        w.writerow(["depth", topo.depth])
    if args.comm_out:
        write_comm_csv(comm, args.comm_out)
    return 0


def _tau(text):
    return float(text)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="memquant", description=__doc__.splitlines()[0])
    ap.add_argument("--backend", choices=["auto", "cython", "python"], default="auto",
                    help="kernel implementation (default: compiled when available)")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="write a synthetic dataset and its true coefficients")
    g.add_argument("--model", default="homoscedastic",
                   choices=["homoscedastic", "heteroscedastic", "exponential"])
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--p", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--tau", default="0.1,0.5,0.9", help="levels for the .truth sidecar")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    def fit_common(sp, m_required=True):
        sp.add_argument("--data", required=True)
        sp.add_argument("--tau", type=_tau, required=True)
        sp.add_argument("--m", type=int, required=m_required)
        sp.add_argument("--alpha", type=float, default=0.05)
        sp.add_argument("--shuffle", type=int, default=None, metavar="SEED",
                        help="permute rows before partitioning")
        sp.add_argument("--out", required=True)

    f = sub.add_parser("fit-dc", help="multi-round divide-and-conquer LEQR")
    fit_common(f)
    f.add_argument("--q", type=int, default=None, help="rounds (default: required_rounds)")
    grp = f.add_mutually_exclusive_group()
    grp.add_argument("--c", type=float, default=1.0)
    grp.add_argument("--adaptive", metavar="GRID_CSV", help="file of candidate constants")
    f.set_defaults(func=cmd_fit_dc)

    for name, func, helptext in (("fit-naive", cmd_fit_naive, "average of per-batch QR fits"),
                                 ("fit-all", cmd_fit_all, "pooled QR on all rows")):
        b = sub.add_parser(name, help=helptext)
        fit_common(b)
        b.add_argument("--variance-q", type=int, default=4,
                       help="DC round whose D estimate the interval uses")
        b.set_defaults(func=func)

    o = sub.add_parser("fit-online", help="replay the file through the streaming estimator")
    fit_common(o)
    o.add_argument("--stride", type=int, default=1, help="solve every k-th sample")
    o.set_defaults(func=cmd_fit_online)

    e = sub.add_parser("experiment", help="Monte-Carlo coverage study from a config file")
    e.add_argument("--config", required=True)
    e.add_argument("--out", default=None, help="summary CSV (default stdout)")
    e.add_argument("--per-rep", default=None, help="optional per-replication CSV")
    e.add_argument("--reps", type=int, default=None, help="override the config rep count")
    e.add_argument("--workers", type=int, default=None,
                   help="process count (default MEMQUANT_THREADS, 0 = one per CPU)")
    e.add_argument("--dry-run", action="store_true")
    e.set_defaults(func=cmd_experiment)

    s = sub.add_parser("simnet", help="run DC LEQR over a simulated sensor tree")
    s.add_argument("--data", required=True)
    s.add_argument("--topology", choices=["star", "chain", "binary", "kary"], default="star")
    s.add_argument("--topology-file", default=None, help="CSV of node_id,parent_id")
    s.add_argument("--k", type=int, default=2, help="arity for --topology kary")
    s.add_argument("--nodes", type=int, required=True)
    s.add_argument("--tau", type=_tau, required=True)
    s.add_argument("--q", type=int, default=None)
    s.add_argument("--c", type=float, default=1.0)
    s.add_argument("--out", required=True)
    s.add_argument("--comm-out", default=None)
    s.set_defaults(func=cmd_simnet)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.backend != "auto":
        try:
            kernels.use_backend(args.backend)
        except ImportError as exc:
            print(f"memquant: {exc}", file=sys.stderr)
            return 3
    try:
        return args.func(args)
    except MemquantError as exc:
        print(f"memquant: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, ValueError) as exc:
        print(f"memquant: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3 if isinstance(exc, OSError) else 2


if __name__ == "__main__":
    sys.exit(main())
