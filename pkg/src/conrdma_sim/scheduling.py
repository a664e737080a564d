"""Node selection: core cpu/mem filtering plus the RDMA-aware extender.

The extender decides per-node feasibility by solving a small multi-knapsack
instance: VF requests (weights = minimum bandwidth) packed into PFs
(capacities = free bandwidth and free VF slots). The solver is exact: a
first-fit-decreasing pass for the common case, falling back to exhaustive
backtracking with capacity pruning, so it never reports infeasible when an
assignment exists.
"""

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

from . import cni, daemon
from .cluster import ClusterState, Mode, PodSpec, place_pod_record
from .daemon import NodeReport, PfReport
from .errors import ReservationRejected, SetupFailure, SimError, SpecError
from .units import GBPS_ZERO

DEFAULT_RESERVE_RETRIES = 3


@dataclass(frozen=True)
class FilterRequest:
    pod: PodSpec
    candidate_nodes: tuple[str, ...]

    def validate(self) -> None:
        if len(set(self.candidate_nodes)) != len(self.candidate_nodes):
            raise SpecError("candidate_nodes must not contain duplicates")


@dataclass
class FilterResponse:
    feasible_nodes: list[str]
    per_node_assignment: dict[str, list[str]]
    diagnostics: dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class PlacementDecision:
    pod_name: str
    node_name: Optional[str] = None
    assignment: tuple[str, ...] = ()
    rejected_reason: Optional[str] = None

    @property
    def placed(self) -> bool:
        return self.node_name is not None

    @classmethod
    def accept(cls, pod_name: str, node_name: str, assignment: Sequence[str]):
        return cls(pod_name=pod_name, node_name=node_name, assignment=tuple(assignment))

    @classmethod
    def reject(cls, pod_name: str, reason: str):
        return cls(pod_name=pod_name, rejected_reason=reason)


@dataclass
class DecisionTrace:
    """Structured record of one scheduling decision, for explain output."""

    pod_name: str
    mode: str = Mode.CONTROLLED.value
    request_mins: list[Fraction] = field(default_factory=list)
    candidates: list[str] = field(default_factory=list)
    reports: dict[str, NodeReport] = field(default_factory=dict)
    verdicts: dict[str, str] = field(default_factory=dict)
    passthrough: bool = False
    reserve_attempts: int = 0
    chosen: Optional[str] = None
    choice_note: str = ""
    outcome: str = ""


def core_filter(state: ClusterState, pod: PodSpec) -> list[str]:
    """Nodes with enough uncommitted cpu and memory, in cluster order.

    A node_selector narrows the candidates to the named node.
    """
    out = []
    for node in state.nodes.values():
        if pod.node_selector is not None and node.name != pod.node_selector:
            continue
        if node.cpu_free >= pod.cpu_request and node.mem_free >= pod.mem_request:
            out.append(node.name)
    return out


def knapsack_feasible(
    mins: Sequence[Fraction],
    pfs: Sequence[PfReport],
    enforce_bandwidth: bool = True,
) -> Optional[list[str]]:
    """Pack the VF requests into the PFs, or prove it impossible.

    Returns target pf_ids parallel to ``mins``, or None when no assignment
    exists. With ``enforce_bandwidth`` off only VF slots constrain the
    packing (the stock, count-only behavior). Deterministic for equal input.
    """
    if not mins:
        raise SpecError("knapsack_feasible requires at least one request")
    n = len(mins)
    eff = [m if enforce_bandwidth else GBPS_ZERO for m in mins]
    free_bw = [pf.free_bandwidth for pf in pfs]
    slots = [pf.vfs_free for pf in pfs]

    if sum(slots) < n:
        return None
    order = sorted(range(n), key=lambda i: (-eff[i], i))

    # first-fit decreasing: usually enough
    placed = _first_fit(order, eff, list(free_bw), list(slots))
    if placed is None:
        placed = _backtrack(order, eff, list(free_bw), list(slots))
    if placed is None:
        return None
    return [pfs[placed[i]].pf_id for i in range(n)]


def _first_fit(order, eff, free_bw, slots) -> Optional[dict[int, int]]:
    placed: dict[int, int] = {}
    for i in order:
        for j in range(len(free_bw)):
            if slots[j] >= 1 and free_bw[j] >= eff[i]:
                placed[i] = j
                slots[j] -= 1
                free_bw[j] -= eff[i]
                break
        else:
            return None
    return placed


def _backtrack(order, eff, free_bw, slots) -> Optional[dict[int, int]]:
    n = len(order)
    # total remaining demand from each position, for pruning
    suffix = [GBPS_ZERO] * (n + 1)
    for k in range(n - 1, -1, -1):
        suffix[k] = suffix[k + 1] + eff[order[k]]
    placed: dict[int, int] = {}

    def search(k: int) -> bool:
        if k == n:
            return True
        if suffix[k] > sum(free_bw[j] for j in range(len(free_bw)) if slots[j] > 0):
            return False
        i = order[k]
        tried: set[tuple[Fraction, int]] = set()
        for j in range(len(free_bw)):
            sig = (free_bw[j], slots[j])
            if sig in tried:  # PFs with equal residual state are interchangeable
                continue
            tried.add(sig)
            if slots[j] >= 1 and free_bw[j] >= eff[i]:
                placed[i] = j
                slots[j] -= 1
                free_bw[j] -= eff[i]
                if search(k + 1):
                    return True
                del placed[i]
                slots[j] += 1
                free_bw[j] += eff[i]
        return False

    return placed if search(0) else None


def assignment_is_valid(
    mins: Sequence[Fraction],
    assignment: Sequence[str],
    pfs: Sequence[PfReport],
    enforce_bandwidth: bool = True,
) -> bool:
    """Check a witness: per-PF demand within free bandwidth and free slots."""
    if len(assignment) != len(mins):
        return False
    by_id = {pf.pf_id: pf for pf in pfs}
    count: dict[str, int] = {}
    gbps: dict[str, Fraction] = {}
    for pf_id, m in zip(assignment, mins):
        if pf_id not in by_id:
            return False
        count[pf_id] = count.get(pf_id, 0) + 1
        gbps[pf_id] = gbps.get(pf_id, GBPS_ZERO) + (m if enforce_bandwidth else GBPS_ZERO)
    for pf_id in count:
        pf = by_id[pf_id]
        if count[pf_id] > pf.vfs_free:
            return False
        if gbps[pf_id] > pf.free_bandwidth:
            return False
    return True


def extender_filter(
    req: FilterRequest,
    reports: dict[str, NodeReport],
    enforce_bandwidth: bool = True,
) -> FilterResponse:
    """Narrow the candidates to nodes that can host the pod's VF requests.

    Pods without an RDMA annotation pass through unfiltered. Candidates
    without a report are infeasible with a recorded diagnostic.
    """
    req.validate()
    if req.pod.rdma is None:
        return FilterResponse(
            feasible_nodes=list(req.candidate_nodes),
            per_node_assignment={name: [] for name in req.candidate_nodes},
        )
    mins = req.pod.rdma.mins
    response = FilterResponse(feasible_nodes=[], per_node_assignment={})
    for name in req.candidate_nodes:
        report = reports.get(name)
        if report is None:
            response.diagnostics[name] = "no inventory report"
            continue
        witness = knapsack_feasible(mins, report.pfs, enforce_bandwidth)
        if witness is None:
            free = ", ".join(
                f"{pf.pf_id}: {pf.free_bandwidth} Gb/s, {pf.vfs_free} VFs free"
                for pf in report.pfs
            ) or "no eligible PFs"
            what = "VF requests" if enforce_bandwidth else "VF counts"
            response.diagnostics[name] = f"no packing of the {what} fits ({free})"
        else:
            response.feasible_nodes.append(name)
            response.per_node_assignment[name] = witness
    return response


def _headroom(report: NodeReport, witness: Sequence[str], mins, enforce_bandwidth: bool):
    """Residual capacity of the node if the witness were applied."""
    if enforce_bandwidth:
        total_free = sum((pf.free_bandwidth for pf in report.pfs), GBPS_ZERO)
        return total_free - sum(mins, GBPS_ZERO)
    return sum(pf.vfs_free for pf in report.pfs) - len(witness)


def choose_node(
    response: FilterResponse,
    reports: dict[str, NodeReport],
    mins: Sequence[Fraction] = (),
    enforce_bandwidth: bool = True,
) -> tuple[str, str]:
    """Worst-fit spread: keep the most residual headroom after placement.

    Ties break on lexicographic node name. Returns (node, note) where the
    note records the comparison for explain output.
    """
    if not response.feasible_nodes:
        raise SpecError("choose_node requires a non-empty feasible set")
    scored = []
    for name in response.feasible_nodes:
        witness = response.per_node_assignment[name]
        scored.append((name, _headroom(reports[name], witness, mins, enforce_bandwidth)))
    best_name, best_score = scored[0]
    for name, score in scored[1:]:
        if score > best_score or (score == best_score and name < best_name):
            best_name, best_score = name, score
    unit = "Gb/s free" if enforce_bandwidth else "VF slots free"
    ranking = ", ".join(f"{name}={score}" for name, score in scored)
    tie = [name for name, score in scored if score == best_score]
    note = f"post-placement headroom ({unit}): {ranking}"
    if len(tie) > 1:
        note += f"; tie broken lexicographically among {sorted(tie)}"
    return best_name, note


def _choose_node_core(state: ClusterState, candidates: Sequence[str]) -> str:
    """Node choice for pods with no RDMA requirement: a function of cpu/mem
    state only (worst-fit on free cpu, then free memory, then name)."""
    def key(name: str):
        node = state.nodes[name]
        return (-node.cpu_free, -node.mem_free, name)

    return min(candidates, key=key)


def schedule_pod(
    state: ClusterState,
    pod: PodSpec,
    mode: Mode = Mode.CONTROLLED,
    max_reserve_retries: int = DEFAULT_RESERVE_RETRIES,
    inject_failure_step: Optional[int] = None,
    trace: Optional[DecisionTrace] = None,
) -> PlacementDecision:
    """Run the full placement flow for one pod.

    core filter -> per-node inventory -> extender filter -> worst-fit choice
    -> daemon reservation (retried against fresh reports on a lost race) ->
    network setup. A rejection leaves the cluster unchanged; a setup failure
    rolls everything back and propagates as :class:`SetupFailure`.
    """
    pod.validate()
    if pod.name in state.pods:
        raise SpecError(f"pod {pod.name!r} is already placed")
    enforce = mode is Mode.CONTROLLED
    if trace is not None:
        trace.mode = mode.value
        trace.request_mins = pod.rdma.mins if pod.rdma else []

    candidates = core_filter(state, pod)
    if trace is not None:
        trace.candidates = list(candidates)
    if not candidates:
        reason = "no node satisfies the cpu/mem requests"
        if trace is not None:
            trace.outcome = f"rejected: {reason}"
        return PlacementDecision.reject(pod.name, reason)

    if pod.rdma is None:
        node_name = _choose_node_core(state, candidates)
        if trace is not None:
            trace.passthrough = True
            trace.chosen = node_name
            trace.outcome = f"placed on {node_name}"
        network = cni.setup_pod(state, pod, node_name, assignment=())
        place_pod_record(state, pod, node_name, (), network)
        return PlacementDecision.accept(pod.name, node_name, ())

    mins = pod.rdma.mins
    reserve_gbps = mins if enforce else [GBPS_ZERO] * len(mins)
    attempts = 0
    while True:
        reports: dict[str, NodeReport] = {}
        for name in candidates:
            try:
                reports[name] = daemon.report_inventory(state.nodes[name])
            except SimError:
                pass  # missing report; the extender records a diagnostic
        response = extender_filter(
            FilterRequest(pod=pod, candidate_nodes=tuple(candidates)), reports, enforce
        )
        if trace is not None:
            trace.reports = reports
            for name in candidates:
                if name in response.per_node_assignment and name in response.feasible_nodes:
                    witness = response.per_node_assignment[name]
                    trace.verdicts[name] = "feasible: " + ", ".join(
                        f"eth{i}->{pf}" for i, pf in enumerate(witness)
                    )
                else:
                    trace.verdicts[name] = "infeasible: " + response.diagnostics.get(name, "?")
        if not response.feasible_nodes:
            detail = "; ".join(f"{n}: {r}" for n, r in response.diagnostics.items())
            reason = f"no node can guarantee the requested VFs ({detail})"
            if trace is not None:
                trace.outcome = f"rejected: {reason}"
            return PlacementDecision.reject(pod.name, reason)

        node_name, note = choose_node(response, reports, mins, enforce)
        if trace is not None:
            trace.chosen = node_name
            trace.choice_note = note
        witness = response.per_node_assignment[node_name]
        try:
            attempts += 1
            if trace is not None:
                trace.reserve_attempts = attempts
            daemon.reserve(
                state.nodes[node_name],
                pod.name,
                list(zip(witness, reserve_gbps)),
            )
        except ReservationRejected as exc:
            if attempts > max_reserve_retries:
                reason = f"reservation kept failing after {attempts} attempts: {exc}"
                if trace is not None:
                    trace.outcome = f"rejected: {reason}"
                return PlacementDecision.reject(pod.name, reason)
            continue
        break

    # reservation held; configure the pod's interfaces (rolls back on failure)
    try:
        network = cni.setup_pod(
            state,
            pod,
            node_name,
            assignment=tuple(witness),
            enforce_bandwidth=enforce,
            inject_failure_step=inject_failure_step,
        )
    except SetupFailure as exc:
        if trace is not None:
            trace.outcome = f"setup failed and was rolled back: {exc}"
        raise
    place_pod_record(state, pod, node_name, tuple(witness), network)
    if trace is not None:
        trace.outcome = f"placed on {node_name}"
    return PlacementDecision.accept(pod.name, node_name, witness)
