import numpy as np
import pytest

from memquant.errors import InvalidArity, InvalidDimensions
from memquant.leqr import DcConfig, LocalStats, compute_local_stats, dc_leqr, merge
from memquant.nettree import (
    build_topology,
    read_topology_csv,
    simulate_dc_leqr,
    simulate_dc_round,
    uplink_payload,
    write_comm_csv,
    write_topology_csv,
)
from memquant.simgen import make_dataset


def test_topology_depths():
    star = build_topology("star", 5)
    assert star.depth == 1 and star.children[0] == [1, 2, 3, 4]
    assert build_topology("chain", 5).depth == 4
    assert build_topology("kary", 7, k=2).depth == 2
    assert build_topology("binary", 7).depth == 2
    assert build_topology("kary", 13, k=3).depth == 2
    assert build_topology("star", 1).depth == 0


def test_topology_errors():
    with pytest.raises(InvalidArity):
        build_topology("kary", 5, k=1)
    with pytest.raises(ValueError):
        build_topology("ring", 5)
    from memquant.nettree import TreeTopology
    with pytest.raises(InvalidDimensions):
        TreeTopology([None, 2, 1])
    with pytest.raises(InvalidDimensions):
        TreeTopology([0, None])


def test_postorder_children_first():
    t = build_topology("kary", 10, k=3)
    order = t.postorder()
    pos = {u: i for i, u in enumerate(order)}
    assert order[-1] == 0 and sorted(order) == list(range(10))
    for u in range(1, 10):
        assert pos[u] < pos[t.parent[u]]


def _parts(n_nodes, per=60, p=3, seed=1):
    return make_dataset("homoscedastic", n_nodes * per, p, seed).split(per)


def test_single_node_round():
    parts = _parts(1)
    t = build_topology("star", 1).with_batches(parts)
    beta = np.ones(4)
    s, comm = simulate_dc_round(t, beta, 0.3, 0.5)
    local = compute_local_stats(parts[0], beta, 0.3, 0.5)
    assert comm.messages == 0 and comm.uplink_scalars == 0
    assert np.array_equal(s.u, local.u) and np.array_equal(s.v, local.v)


def test_round_matches_sequential_across_shapes():
    parts = _parts(12)
    beta = np.ones(4) * 0.9
    seq = LocalStats.zeros(4)
    for b in parts:
        seq = merge(seq, compute_local_stats(b, beta, 0.4, 0.3))
    for kind in ("star", "chain", "binary"):
        t = build_topology(kind, 12).with_batches(parts)
        s, comm = simulate_dc_round(t, beta, 0.4, 0.3)
        assert np.allclose(s.u, seq.u, rtol=1e-12) and np.allclose(s.v, seq.v, rtol=1e-12)
        assert s.count == seq.count
        assert comm.messages == 22 and comm.depth == t.depth


def test_payload_arithmetic():
    assert uplink_payload(16) == 153
    parts = make_dataset("homoscedastic", 100 * 20, 15, 2).split(20)
    t = build_topology("star", 100).with_batches(parts)
    _, comm = simulate_dc_round(t, np.ones(16), 0.5, 0.5)
    assert comm.uplink_scalars == 15147 and comm.downlink_scalars == 99 * 16


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_matches_dc_leqr(seed):
    parts = _parts(20, per=100, seed=seed)
    cfg = DcConfig(tau=0.3, q=3)
    ref, _ = dc_leqr(parts, cfg)
    t = build_topology("binary", 20).with_batches(parts)
    beta, comm = simulate_dc_leqr(t, cfg)
    assert np.allclose(beta, ref, rtol=1e-10, atol=0)
    assert len(comm.rounds) == 3
    assert comm.uplink_scalars == 3 * 19 * uplink_payload(4)


def test_doubling_rounds_doubles_scalars():
    parts = _parts(8, per=100)
    t = build_topology("chain", 8).with_batches(parts)
    _, c2 = simulate_dc_leqr(t, DcConfig(tau=0.5, q=2))
    _, c4 = simulate_dc_leqr(t, DcConfig(tau=0.5, q=4))
    assert c4.uplink_scalars + c4.downlink_scalars == 2 * (c2.uplink_scalars + c2.downlink_scalars)
    assert c4.bytes == 8 * (c4.uplink_scalars + c4.downlink_scalars)


def test_topology_csv_roundtrip(tmp_path):
    t = build_topology("kary", 11, k=3)
    path = tmp_path / "topo.csv"
    write_topology_csv(t, path)
    back = read_topology_csv(path)
    assert back.parent == t.parent
    path.write_text("node_id,parent_id\n0,-1\n2,0\n")
    with pytest.raises(InvalidDimensions):
        read_topology_csv(path)


def test_comm_csv(tmp_path):
    t = build_topology("star", 4).with_batches(_parts(4, per=100))
    _, comm = simulate_dc_leqr(t, DcConfig(tau=0.5, q=2))
    path = tmp_path / "comm.csv"
    write_comm_csv(comm, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "round,messages,uplink_scalars,downlink_scalars,depth"
    assert lines[1] == f"1,6,{3 * uplink_payload(4)},12,1"
