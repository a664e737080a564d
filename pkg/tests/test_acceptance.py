"""Acceptance gate: one test per criterion, each printing a PASS line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines.
"""

import random
import time
from fractions import Fraction

import pytest

from conrdma_sim.cluster import Mode, build_cluster, snapshot
from conrdma_sim.cni import setup_steps, teardown_pod
from conrdma_sim.daemon import NodeReport, PfReport, report_inventory
from conrdma_sim.errors import SetupFailure
from conrdma_sim.scenario import (
    DeployPod,
    bundled_scenario_names,
    load_bundled_scenario,
    parse_scenario,
    run_scenario_data,
)
from conrdma_sim.scheduling import (
    assignment_is_valid,
    knapsack_feasible,
    schedule_pod,
)
from conrdma_sim.sharing import allocate_shares, Flow
from conrdma_sim.units import GBPS_ZERO

from conftest import make_node, make_pf_report, make_pod
from oracles import controlled_shares_bisect, enumerate_feasible

TOL = 1e-9


def _report(criterion: int, description: str) -> None:
    print(f"acceptance criterion {criterion}: PASS - {description}")


def _free_flow(fid, min_bw, demand=None):
    return Flow(
        flow_id=fid, pod_name=fid, vf_id=f"n/{fid}/0", pf_id="pf0",
        min_bandwidth=Fraction(min_bw),
        demand=None if demand is None else Fraction(demand),
        start_iteration=0, end_iteration=1,
    )


def test_criterion_1_node_selection():
    started = time.perf_counter()
    state = build_cluster([make_node("node-a", [100, 100]), make_node("node-b", [100, 100])])
    a = schedule_pod(state, make_pod("A", 80, 80))
    b = schedule_pod(state, make_pod("B", 50, 50))
    c = schedule_pod(state, make_pod("C", 30, 30))
    elapsed = time.perf_counter() - started

    rdma_pods_by_node = {}
    for name, record in state.pods.items():
        rdma_pods_by_node.setdefault(record.node, []).append(name)
    assert rdma_pods_by_node[a.node_name] == ["A"], "A must sit alone"
    assert b.node_name == c.node_name != a.node_name, "B and C colocate opposite A"
    assert elapsed < 1.0

    # control run: VF-count-only scheduling lets A and C share a node
    control = build_cluster([make_node("node-a", [100, 100]), make_node("node-b", [100, 100])])
    ca = schedule_pod(control, make_pod("A", 80, 80), Mode.UNCONTROLLED)
    schedule_pod(control, make_pod("B", 50, 50), Mode.UNCONTROLLED)
    cc = schedule_pod(control, make_pod("C", 30, 30), Mode.UNCONTROLLED)
    assert ca.node_name == cc.node_name, "without bandwidth checks A and C colocate"
    _report(1, f"A isolated, B+C colocated; control run colocates A and C "
               f"({elapsed * 1000:.1f} ms)")


def test_criterion_2_knapsack_example():
    mins = [Fraction(100), Fraction(100)]
    single = [make_pf_report("pf0", 200, 8)]
    dual = [make_pf_report("pf0", 100, 8), make_pf_report("pf1", 100, 8)]
    short = [make_pf_report("pf0", 99, 8), make_pf_report("pf1", 99, 8)]
    w1 = knapsack_feasible(mins, single)
    w2 = knapsack_feasible(mins, dual)
    assert w1 is not None and assignment_is_valid(mins, w1, single)
    assert w2 is not None and assignment_is_valid(mins, w2, dual)
    assert knapsack_feasible(mins, short) is None
    _report(2, "2x100 fits one 200 Gb/s PF and two 100 Gb/s PFs; not two 99s")


def test_criterion_3_bandwidth_plateau():
    capacity = Fraction(100)
    full = allocate_shares(
        [_free_flow("video", 60), _free_flow("ai", 30), _free_flow("file", 10)],
        capacity, Mode.CONTROLLED)
    for fid, want in (("video", 60), ("ai", 30), ("file", 10)):
        assert abs(full[fid] - want) <= TOL

    # independent water-filling oracle fixes the post-stop shares
    oracle = controlled_shares_bisect([("ai", 30.0, None), ("file", 10.0, None)], 100.0)
    assert oracle["ai"] == pytest.approx(75.0, abs=1e-6)
    assert oracle["file"] == pytest.approx(25.0, abs=1e-6)
    after_video = allocate_shares(
        [_free_flow("ai", 30), _free_flow("file", 10)], capacity, Mode.CONTROLLED)
    assert abs(after_video["ai"] - 75) <= TOL
    assert abs(after_video["file"] - 25) <= TOL

    after_ai = allocate_shares([_free_flow("file", 10)], capacity, Mode.CONTROLLED)
    assert abs(after_ai["file"] - 100) <= TOL

    # the bundled timeline reproduces all three phases
    trace = run_scenario_data(load_bundled_scenario("bandwidth_control")).trace
    assert trace.at(15) == {"video": 60, "ai": 30, "file": 10}
    assert trace.at(25) == {"ai": 75, "file": 25}
    assert trace.at(32) == {"file": 100}
    _report(3, "controlled shares {60,30,10} -> {75,25} -> {100} (tol 1e-9)")


def test_criterion_4_equal_sharing():
    shares = allocate_shares(
        [_free_flow("a", 0), _free_flow("b", 0), _free_flow("c", 0)],
        Fraction(100), Mode.UNCONTROLLED)
    for fid in ("a", "b", "c"):
        assert abs(shares[fid] - Fraction(100, 3)) <= TOL
    trace = run_scenario_data(load_bundled_scenario("bandwidth_no_control")).trace
    assert trace.at(15) == {k: Fraction(100, 3) for k in ("video", "ai", "file")}
    _report(4, "uncontrolled mode splits 100 Gb/s into exact thirds")


def test_criterion_5_multiple_pods():
    flows = (
        [_free_flow(f"video{i}", 20) for i in range(4)]
        + [_free_flow(f"ai{i}", 5) for i in range(4)]
        + [_free_flow(f"file{i}", 0) for i in range(4)]
    )
    shares = allocate_shares(flows, Fraction(100), Mode.CONTROLLED)
    for i in range(4):
        assert shares[f"video{i}"] == 20
        assert shares[f"ai{i}"] == 5
        assert shares[f"file{i}"] == 0
    assert sum(shares.values()) == 100
    trace = run_scenario_data(load_bundled_scenario("multiple_pods")).trace
    at5 = trace.at(5)
    assert all(at5[f"video-{i}"] == 20 for i in range(1, 5))
    assert all(at5[f"ai-{i}"] == 5 for i in range(1, 5))
    _report(5, "4x20 + 4x5 floors fill the PF exactly; unreserved flows get the "
               "zero residual (a consequence of the floor arithmetic)")


def test_criterion_6_rejection_rule():
    state = build_cluster([make_node("node-a", [100, 100]), make_node("node-b", [100, 100])])
    schedule_pod(state, make_pod("existing", 40, 40))
    before = snapshot(state)
    decision = schedule_pod(state, make_pod("toobig", 150))
    assert not decision.placed and decision.rejected_reason
    assert state == before
    reports_before = {n: report_inventory(node) for n, node in before.nodes.items()}
    reports_after = {n: report_inventory(node) for n, node in state.nodes.items()}
    assert reports_before == reports_after
    _report(6, "unsatisfiable pod is rejected with cluster state untouched")


def test_criterion_7_rollback_sweep():
    shapes = set()
    for name in bundled_scenario_names():
        scenario = parse_scenario(load_bundled_scenario(name), name=name)
        for event in scenario.events:
            if isinstance(event, DeployPod) and event.pod.rdma is not None:
                shapes.add(tuple(event.pod.rdma.mins))
    assert shapes, "corpus must contribute pod shapes"

    started = time.perf_counter()
    checked = 0
    for shape in sorted(shapes):
        state = build_cluster(
            [make_node("node-a", [100, 100]), make_node("node-b", [100, 100])])
        before = snapshot(state)
        for step in range(len(setup_steps(len(shape)))):
            with pytest.raises(SetupFailure):
                schedule_pod(state, make_pod("victim", *shape), inject_failure_step=step)
            assert state == before, f"shape {shape} diverged at step {step}"
            checked += 1
        # sanity: without injection the same shape still deploys and tears down
        assert schedule_pod(state, make_pod("victim", *shape)).placed
        teardown_pod(state, "victim")
        assert state == before
    elapsed = time.perf_counter() - started
    assert elapsed < 10.0
    _report(7, f"{checked} failure points over {len(shapes)} corpus shapes all "
               f"restored the pre-setup snapshot ({elapsed:.2f} s)")


def _recomputed_report(node) -> NodeReport:
    return NodeReport(
        node_name=node.name,
        pfs=tuple(
            PfReport(
                pf_id=pf.spec.pf_id,
                max_bandwidth=pf.spec.max_bandwidth,
                reserved_bandwidth=sum((vf.reserved_gbps for vf in pf.vfs), GBPS_ZERO),
                vfs_total=len(pf.vfs),
                vfs_free=sum(1 for vf in pf.vfs if vf.free),
            )
            for pf in node.eligible_pfs()
        ),
    )


def test_criterion_8_accounting_conservation():
    from conrdma_sim.cluster import check_invariants

    for seed in range(100):
        rng = random.Random(seed)
        state = build_cluster([
            make_node("n0", [100, 100], vf_capacity=8),
            make_node("n1", [200], vf_capacity=4),
            make_node("n2", [50, 150], vf_capacity=6),
        ])
        placed: list[str] = []
        for i in range(200):
            if placed and rng.random() < 0.4:
                teardown_pod(state, placed.pop(rng.randrange(len(placed))))
            else:
                name = f"pod-{seed}-{i}"
                if rng.random() < 0.15:
                    pod = make_pod(name, cpu=rng.choice([0, 500, 2000]))
                else:
                    mins = [rng.choice([0, 5, 10, 20, 40, 80])
                            for _ in range(rng.randint(1, 3))]
                    pod = make_pod(name, *mins)
                if schedule_pod(state, pod).placed:
                    placed.append(name)
        allocated = sum(
            1 for node in state.nodes.values()
            for pf in node.pfs.values() for vf in pf.vfs if not vf.free)
        requested = sum(r.spec.request_count for r in state.pods.values())
        assert allocated == requested
        for node in state.nodes.values():
            assert report_inventory(node) == _recomputed_report(node)
        check_invariants(state)
    _report(8, "100 seeds x 200 deploy/teardown events: allocated VFs == requested, "
               "reports match from-scratch recomputation")


def test_criterion_9_solver_oracle():
    rng = random.Random(99)
    feasible_count = 0
    for _ in range(1000):
        n_req = rng.randint(1, 6)
        n_pf = rng.randint(1, 4)
        mins = [rng.choice([0, 5, 10, 25, 40, 50, 75, 100]) for _ in range(n_req)]
        free = [rng.randrange(0, 201, 25) for _ in range(n_pf)]
        slots = [rng.randint(0, 6) for _ in range(n_pf)]
        pfs = [make_pf_report(f"pf{j}", free[j], slots[j], total_vfs=6)
               for j in range(n_pf)]
        witness = knapsack_feasible([Fraction(m) for m in mins], pfs)
        assert (witness is not None) == enumerate_feasible(mins, free, slots), \
            (mins, free, slots)
        if witness is not None:
            feasible_count += 1
            assert assignment_is_valid([Fraction(m) for m in mins], witness, pfs)
    assert 0 < feasible_count < 1000, "instance mix should cover both outcomes"
    _report(9, f"1000 random instances agree with exhaustive enumeration "
               f"({feasible_count} feasible, witnesses validated)")
