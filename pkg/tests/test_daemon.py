from fractions import Fraction

import pytest

from conrdma_sim.cluster import build_cluster, snapshot
from conrdma_sim.daemon import (
    create_node_state,
    init_node,
    release,
    report_inventory,
    reserve,
)
from conrdma_sim.errors import (
    ReservationRejected,
    SimError,
    SpecError,
    UnknownEntityError,
)

from conftest import make_node


def fresh_node(pf_bws=(100, 100), **kwargs):
    return build_cluster([make_node("n0", list(pf_bws), **kwargs)]).nodes["n0"]


class TestInit:
    def test_report_refused_before_init(self):
        node = create_node_state(make_node("n0", [100]), index=0)
        with pytest.raises(SimError, match="before VF initialization"):
            report_inventory(node)

    def test_full_configuration(self):
        node = create_node_state(make_node("n0", [100], vf_capacity=8), index=0)
        init_node(node, 8)
        assert len(node.pfs["pf0"].vfs) == 8
        assert all(vf.free for vf in node.pfs["pf0"].vfs)

    def test_vfs_per_pf_above_capacity(self):
        node = create_node_state(make_node("n0", [100], vf_capacity=8), index=0)
        with pytest.raises(SpecError, match="exceeds capacity"):
            init_node(node, 9)

    def test_partial_configuration(self):
        node = create_node_state(make_node("n0", [100, 100], vf_capacity=8), index=0)
        init_node(node, 3)
        assert all(len(pf.vfs) == 3 for pf in node.eligible_pfs())

    def test_non_rdma_interface_excluded(self):
        spec = make_node("n0", [100, 40], flags={1: (False, True)})
        node = create_node_state(spec, index=0)
        init_node(node)
        report = report_inventory(node)
        assert [pf.pf_id for pf in report.pfs] == ["pf0"]
        assert node.pfs["pf1"].vfs == []

    def test_non_sriov_interface_excluded(self):
        spec = make_node("n0", [100, 100], flags={0: (True, False)})
        node = create_node_state(spec, index=0)
        init_node(node)
        assert [pf.pf_id for pf in report_inventory(node).pfs] == ["pf1"]


class TestReport:
    def test_fresh_report(self):
        node = fresh_node()
        report = report_inventory(node)
        assert all(pf.reserved_bandwidth == 0 for pf in report.pfs)
        assert all(pf.vfs_free == pf.vfs_total for pf in report.pfs)

    def test_sequence_strictly_increases(self):
        node = fresh_node()
        seqs = [report_inventory(node).generated_at for _ in range(3)]
        assert seqs == sorted(seqs) and len(set(seqs)) == 3

    def test_report_reflects_reservation_exactly(self):
        node = fresh_node(pf_bws=(200,))
        reserve(node, "p", [("pf0", Fraction(100)), ("pf0", Fraction(100))])
        report = report_inventory(node)
        assert report.pfs[0].reserved_bandwidth == 200
        assert report.pfs[0].vfs_free == report.pfs[0].vfs_total - 2


class TestReserve:
    def test_two_hundred_on_two_hundred(self):
        node = fresh_node(pf_bws=(200,))
        refs = reserve(node, "p", [("pf0", Fraction(100)), ("pf0", Fraction(100))])
        assert refs == [("pf0", 0), ("pf0", 1)]
        assert node.pfs["pf0"].reserved == 200

    def test_insufficient_vfs_rejected_atomically(self):
        node = fresh_node(pf_bws=(400,), vf_capacity=2)
        before = snapshot(build_cluster([make_node("n0", [400], vf_capacity=2)]))
        with pytest.raises(ReservationRejected):
            reserve(node, "p", [("pf0", Fraction(1))] * 3)
        assert node == before.nodes["n0"]

    def test_sequential_overcommit_rejected(self):
        node = fresh_node(pf_bws=(100,))
        reserve(node, "p1", [("pf0", Fraction(60))])
        with pytest.raises(ReservationRejected, match="50 Gb/s requested, 40 Gb/s free"):
            reserve(node, "p2", [("pf0", Fraction(50))])
        # first reservation untouched
        assert node.pfs["pf0"].reserved == 60
        assert "p2" not in node.reservations

    def test_rejection_leaves_report_identical(self):
        node = fresh_node(pf_bws=(100,))
        reserve(node, "p1", [("pf0", Fraction(60))])
        before = report_inventory(node)
        with pytest.raises(ReservationRejected):
            reserve(node, "p2", [("pf0", Fraction(50))])
        assert report_inventory(node) == before  # generated_at excluded from eq

    def test_unknown_pf(self):
        node = fresh_node()
        with pytest.raises(SpecError, match="no eligible PF"):
            reserve(node, "p", [("pf9", Fraction(1))])

    def test_duplicate_pod_reservation(self):
        node = fresh_node()
        reserve(node, "p", [("pf0", Fraction(10))])
        with pytest.raises(SpecError, match="already holds"):
            reserve(node, "p", [("pf1", Fraction(10))])

    def test_zero_min_consumes_slot_only(self):
        node = fresh_node(pf_bws=(100,), vf_capacity=2)
        reserve(node, "p", [("pf0", Fraction(0)), ("pf0", Fraction(0))])
        assert node.pfs["pf0"].reserved == 0
        assert node.pfs["pf0"].free_vfs == 0


class TestRelease:
    def test_reserve_release_is_identity_on_report(self):
        node = fresh_node()
        before = report_inventory(node)
        reserve(node, "p", [("pf0", Fraction(60)), ("pf1", Fraction(70))])
        release(node, "p")
        assert report_inventory(node) == before

    def test_release_keeps_other_pods_intact(self):
        node = fresh_node()
        reserve(node, "p1", [("pf0", Fraction(60))])
        reserve(node, "p2", [("pf0", Fraction(30))])
        release(node, "p1")
        only_p2 = fresh_node()
        reserve(only_p2, "p2", [("pf0", Fraction(30))])
        assert node.pfs["pf0"].reserved == only_p2.pfs["pf0"].reserved == 30
        assert node.reservations == {"p2": [("pf0", 1)]}

    def test_release_unknown_pod(self):
        node = fresh_node()
        before = snapshot(build_cluster([make_node("n0", [100, 100])]))
        with pytest.raises(UnknownEntityError):
            release(node, "ghost")
        assert node == before.nodes["n0"]

    def test_per_pod_accounting_matches(self):
        node = fresh_node()
        reserve(node, "p1", [("pf0", Fraction(10)), ("pf1", Fraction(20))])
        reserve(node, "p2", [("pf0", Fraction(5))])
        allocated = sum(len(pf.vfs) - pf.free_vfs for pf in node.eligible_pfs())
        booked = sum(len(refs) for refs in node.reservations.values())
        assert allocated == booked == 3
