"""Simulated tree-structured sensor network running the DC estimator.

Node 0 is the base station. Each round the root broadcasts the current
estimate down every edge, each node computes statistics on its own batch,
adds in its children's sums (ascending node id) and sends one packed
message to its parent. Communication is counted in scalars.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .batch_qr import solve_qr
from .core import as_batch
from .errors import DimensionMismatch, InvalidArity, InvalidDimensions, SingularSystem
from .leqr import (
    DcConfig,
    _bandwidth_p,
    _check_dims,
    bandwidth_schedule,
    compute_local_stats,
    merge,
    required_rounds,
    solve_step,
)

__all__ = [
    "TreeTopology",
    "CommStats",
    "RoundComm",
    "build_topology",
    "simulate_dc_round",
    "simulate_dc_leqr",
    "read_topology_csv",
    "write_topology_csv",
    "write_comm_csv",
    "uplink_payload",
]


def uplink_payload(p_prime: int) -> int:
    """Packed symmetric V, U and the count."""
    return p_prime * (p_prime + 1) // 2 + p_prime + 1


@dataclass
class TreeTopology:
    parent: list  # parent[i] for i > 0; parent[0] is None
    batches: list = field(default_factory=list)

    def __post_init__(self):
        n = len(self.parent)
        if n < 1 or self.parent[0] is not None:
            raise InvalidDimensions("node 0 must be the root")
        self.children = [[] for _ in range(n)]
        for i in range(1, n):
            par = self.parent[i]
            if par is None or not (0 <= par < n) or par == i:
                raise InvalidDimensions(f"node {i} has invalid parent {par!r}")
            self.children[par].append(i)
        for ch in self.children:
            ch.sort()
        self._depth = self._depths()

    def _depths(self):
        depth = [None] * self.size
        depth[0] = 0
        stack = [0]
        seen = 1
        while stack:
            u = stack.pop()
            for c in self.children[u]:
                if depth[c] is not None:
                    raise InvalidDimensions("topology contains a cycle")
                depth[c] = depth[u] + 1
                seen += 1
                stack.append(c)
        if seen != self.size:
            raise InvalidDimensions("topology is not connected to the root")
        return depth

    @property
    def size(self) -> int:
        return len(self.parent)

    @property
    def depth(self) -> int:
        return max(self._depth)

    def node_depth(self, i: int) -> int:
        return self._depth[i]

    def with_batches(self, batches) -> "TreeTopology":
        batches = [as_batch(b) for b in batches]
        if len(batches) != self.size:
            raise InvalidDimensions(f"{len(batches)} batches for {self.size} nodes")
        return TreeTopology(list(self.parent), batches)

    def postorder(self):
        """Nodes with every child before its parent, children by ascending id."""
        out = []
        stack = [(0, False)]
        while stack:
            u, done = stack.pop()
            if done:
                out.append(u)
                continue
            stack.append((u, True))
            for c in reversed(self.children[u]):
                stack.append((c, False))
        return out


def build_topology(kind: str, n_nodes: int, k: int = 2) -> TreeTopology:
    """``star``, ``chain`` or ``kary`` (heap layout, parent of i is (i-1)//k)."""
    if n_nodes < 1:
        raise InvalidDimensions("need at least one node")
    if kind == "star":
        parent = [None] + [0] * (n_nodes - 1)
    elif kind == "chain":
        parent = [None] + list(range(n_nodes - 1))
    elif kind in ("kary", "binary"):
        if kind == "binary":
            k = 2
        if k < 2:
            raise InvalidArity(f"k-ary tree needs k >= 2, got {k}")
        parent = [None] + [(i - 1) // k for i in range(1, n_nodes)]
    else:
        raise ValueError(f"unknown topology kind {kind!r}")
    return TreeTopology(parent)


@dataclass
class RoundComm:
    messages: int
    uplink_scalars: int
    downlink_scalars: int
    depth: int

    @property
    def scalars(self) -> int:
        return self.uplink_scalars + self.downlink_scalars


@dataclass
class CommStats:
    rounds: list = field(default_factory=list)

    @property
    def messages(self) -> int:
        return sum(r.messages for r in self.rounds)

    @property
    def uplink_scalars(self) -> int:
        return sum(r.uplink_scalars for r in self.rounds)

    @property
    def downlink_scalars(self) -> int:
        return sum(r.downlink_scalars for r in self.rounds)

    @property
    def bytes(self) -> int:
        return 8 * (self.uplink_scalars + self.downlink_scalars)


def simulate_dc_round(topology: TreeTopology, beta0, h: float, tau):
    """One broadcast plus leaves-to-root reduction. Returns ``(stats, RoundComm)``."""
    if len(topology.batches) != topology.size:
        raise InvalidDimensions("topology has no batch assignment")
    beta0 = np.asarray(beta0, dtype=np.float64)
    pp = beta0.shape[0]
    partial = [None] * topology.size
    for u in topology.postorder():
        try:
            s = compute_local_stats(topology.batches[u], beta0, h, tau)
        except DimensionMismatch as exc:
            raise DimensionMismatch(f"node {u}: {exc}") from exc
        for c in topology.children[u]:
            s = merge(s, partial[c])
            partial[c] = None  # the child's message is consumed
        partial[u] = s
    edges = topology.size - 1
    comm = RoundComm(
        messages=2 * edges,
        uplink_scalars=edges * uplink_payload(pp),
        downlink_scalars=edges * pp,
        depth=topology.depth,
    )
    return partial[0], comm


def simulate_dc_leqr(topology: TreeTopology, cfg: DcConfig, beta0=None):
    """The multi-round DC driver executed over the tree.

    The root holds batch 0 and computes the initial QR fit on it unless
    ``beta0`` is given. Returns ``(beta, CommStats)``.
    """
    batches = topology.batches
    if len(batches) != topology.size:
        raise InvalidDimensions("topology has no batch assignment")
    p = batches[0].p
    n = sum(b.n for b in batches)
    m = cfg.m if cfg.m is not None else batches[0].n
    pb = _bandwidth_p(p)
    if cfg.bandwidths is None:
        _check_dims(pb, m, n)
    q = cfg.q if cfg.q is not None else required_rounds(pb, m, n)
    if beta0 is None:
        beta = solve_qr(batches[cfg.init_partition], cfg.tau)
    else:
        beta = np.array(beta0, dtype=np.float64)
    comm = CommStats()
    for g in range(1, q + 1):
        if cfg.bandwidths is not None:
            h = cfg.bandwidths[g - 1]
        else:
            h = bandwidth_schedule(g, pb, m, n, cfg.scale_for_round(g))
        agg, rc = simulate_dc_round(topology, beta, h, cfg.tau)
        try:
            beta = solve_step(agg, x0=beta, tol=cfg.cg_tol)
        except SingularSystem as exc:
            raise SingularSystem(f"round {g}: {exc}", round_index=g) from exc
        comm.rounds.append(rc)
    return beta, comm


def read_topology_csv(path) -> TreeTopology:
    """CSV with header ``node_id,parent_id``; the root's parent is empty or -1."""
    rows = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or {"node_id", "parent_id"} - set(reader.fieldnames):
            raise InvalidDimensions("topology CSV needs node_id,parent_id columns")
        for rec in reader:
            node = int(rec["node_id"])
            par = rec["parent_id"].strip()
            rows[node] = None if par in ("", "-1") else int(par)
    n = len(rows)
    if sorted(rows) != list(range(n)):
        raise InvalidDimensions("node ids must be 0..N-1")
    return TreeTopology([rows[i] for i in range(n)])


def write_topology_csv(topology: TreeTopology, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node_id", "parent_id"])
        for i, par in enumerate(topology.parent):
            w.writerow([i, -1 if par is None else par])


def write_comm_csv(comm: CommStats, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["round", "messages", "uplink_scalars", "downlink_scalars", "depth"])
        for g, r in enumerate(comm.rounds, start=1):
            w.writerow([g, r.messages, r.uplink_scalars, r.downlink_scalars, r.depth])
