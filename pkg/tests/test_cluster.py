from fractions import Fraction

import pytest

from conrdma_sim.cluster import (
    Mode,
    NodeSpec,
    PfSpec,
    build_cluster,
    check_invariants,
    snapshot,
    state_from_dict,
    state_to_dict,
)
from conrdma_sim.cni import teardown_pod
from conrdma_sim.errors import InvariantViolation, SpecError
from conrdma_sim.scheduling import schedule_pod

from conftest import make_node, make_pod


class TestBuildCluster:
    def test_two_nodes_two_pfs_all_free(self):
        state = build_cluster([make_node("n0", [100, 100]), make_node("n1", [100, 100])])
        assert len(state.nodes) == 2
        pfs = [pf for node in state.nodes.values() for pf in node.eligible_pfs()]
        assert len(pfs) == 4
        for pf in pfs:
            assert pf.reserved == 0
            assert pf.free_bandwidth == 100
            assert len(pf.vfs) == pf.spec.vf_capacity
            assert all(vf.free for vf in pf.vfs)

    def test_empty_node_list(self):
        state = build_cluster([])
        assert state.nodes == {} and state.pods == {}
        decision = schedule_pod(state, make_pod("p", 10))
        assert not decision.placed

    def test_vf_capacity_above_sriov_limit(self):
        with pytest.raises(SpecError):
            build_cluster([make_node("n0", [100], vf_capacity=257)])

    def test_vf_capacity_zero(self):
        with pytest.raises(SpecError):
            build_cluster([make_node("n0", [100], vf_capacity=0)])

    def test_duplicate_node_name(self):
        with pytest.raises(SpecError, match="duplicate node"):
            build_cluster([make_node("n0", [100]), make_node("n0", [100])])

    def test_duplicate_pf_id(self):
        pf = make_node("n0", [100]).pfs[0]
        spec = NodeSpec(name="n0", cpu_capacity=1, mem_capacity=1, pfs=(pf, pf))
        with pytest.raises(SpecError, match="duplicate PF"):
            build_cluster([spec])

    def test_invalid_capacities(self):
        with pytest.raises(SpecError):
            build_cluster([make_node("n0", [100], cpu=0)])
        with pytest.raises(SpecError):
            build_cluster([make_node("n0", [0])])

    def test_bad_names_rejected(self):
        with pytest.raises(SpecError):
            build_cluster([make_node("a/b", [100])])


class TestSnapshot:
    def test_snapshot_equals_original(self, two_node_cluster):
        assert snapshot(two_node_cluster) == two_node_cluster

    def test_snapshot_is_isolated(self, two_node_cluster):
        snap = snapshot(two_node_cluster)
        schedule_pod(two_node_cluster, make_pod("p", 50))
        assert snap != two_node_cluster
        assert "p" not in snap.pods

    def test_place_then_teardown_restores_snapshot(self, two_node_cluster):
        before = snapshot(two_node_cluster)
        schedule_pod(two_node_cluster, make_pod("p", 60, 30))
        teardown_pod(two_node_cluster, "p")
        assert two_node_cluster == before


class TestInvariants:
    def test_clean_cluster_passes(self, two_node_cluster):
        schedule_pod(two_node_cluster, make_pod("p", 50, 20))
        check_invariants(two_node_cluster)

    def test_detects_reservation_drift(self, two_node_cluster):
        schedule_pod(two_node_cluster, make_pod("p", 50))
        node = two_node_cluster.pods["p"].node
        pf_id = two_node_cluster.pods["p"].assignment[0]
        two_node_cluster.nodes[node].pfs[pf_id].reserved += 1
        with pytest.raises(InvariantViolation, match="tracked reservation"):
            check_invariants(two_node_cluster)

    def test_detects_orphaned_vf(self, two_node_cluster):
        vf = two_node_cluster.nodes["node-a"].pfs["pf0"].vfs[0]
        vf.allocated_to = "ghost"
        with pytest.raises(InvariantViolation):
            check_invariants(two_node_cluster)


class TestSerialization:
    def test_round_trip_fresh(self, two_node_cluster):
        assert state_from_dict(state_to_dict(two_node_cluster)) == two_node_cluster

    def test_round_trip_with_pods(self, two_node_cluster):
        schedule_pod(two_node_cluster, make_pod("p", 60, 0))
        schedule_pod(two_node_cluster, make_pod("q"))
        restored = state_from_dict(state_to_dict(two_node_cluster))
        assert restored == two_node_cluster
        # exact fractions survive the trip
        node = restored.pods["p"].node
        pf_id = restored.pods["p"].assignment[0]
        assert restored.nodes[node].pfs[pf_id].reserved == Fraction(60)

    def test_fractional_bandwidth_survives(self):
        state = build_cluster([make_node("n0", [Fraction(100, 3)])])
        restored = state_from_dict(state_to_dict(state))
        assert restored.nodes["n0"].pfs["pf0"].spec.max_bandwidth == Fraction(100, 3)


def test_mode_values():
    assert Mode("controlled") is Mode.CONTROLLED
    assert Mode("uncontrolled") is Mode.UNCONTROLLED


def test_pf_spec_validation():
    with pytest.raises(SpecError):
        PfSpec(pf_id="pf0", max_bandwidth=Fraction(-1), vf_capacity=4).validate()
