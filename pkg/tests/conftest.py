from fractions import Fraction

import pytest

from conrdma_sim.cluster import (
    NodeSpec,
    PfSpec,
    PodSpec,
    RdmaAnnotation,
    VfRequest,
    build_cluster,
)
from conrdma_sim.daemon import PfReport


def make_node(name, pf_bws, vf_capacity=8, cpu=32_000, mem=64 * 1024 ** 3, flags=None):
    """NodeSpec with one PF per bandwidth in pf_bws; flags maps PF position
    to (rdma, sriov) overrides."""
    pfs = []
    for i, bw in enumerate(pf_bws):
        rdma, sriov = (flags or {}).get(i, (True, True))
        pfs.append(
            PfSpec(
                pf_id=f"pf{i}",
                max_bandwidth=Fraction(bw),
                vf_capacity=vf_capacity,
                rdma=rdma,
                sriov=sriov,
            )
        )
    return NodeSpec(name=name, cpu_capacity=cpu, mem_capacity=mem, pfs=tuple(pfs))


def make_pod(name, *mins, cpu=0, mem=0, selector=None):
    """PodSpec requesting one VF per value in mins; no annotation if empty."""
    rdma = None
    if mins:
        rdma = RdmaAnnotation(
            requests=tuple(VfRequest(min_bandwidth=Fraction(m)) for m in mins)
        )
    return PodSpec(
        name=name, cpu_request=cpu, mem_request=mem, rdma=rdma, node_selector=selector
    )


def make_pf_report(pf_id, free_bw, free_vfs, max_bw=None, total_vfs=None):
    """PfReport with the given free capacity (reserved derived from max)."""
    max_bw = Fraction(max_bw if max_bw is not None else free_bw)
    total = total_vfs if total_vfs is not None else free_vfs
    return PfReport(
        pf_id=pf_id,
        max_bandwidth=max_bw,
        reserved_bandwidth=max_bw - Fraction(free_bw),
        vfs_total=total,
        vfs_free=free_vfs,
    )


@pytest.fixture
def two_node_cluster():
    """The node-selection topology: 2 nodes, 2 PFs of 100 Gb/s each."""
    return build_cluster(
        [make_node("node-a", [100, 100]), make_node("node-b", [100, 100])]
    )
