"""Flow-level bandwidth sharing across a physical interface.

Two sharing behaviors, stepped in discrete iterations:

* UNCONTROLLED: demand-bounded max-min fairness with equal weights
  (progressive filling): every flow converges to an equal share of the
  pipe unless its own demand is smaller.

* CONTROLLED: two phases. First every reserved flow receives its floor,
  min(min_bandwidth, demand). Then the residual capacity is distributed by
  weighted progressive filling, weight = min_bandwidth for reserved flows
  and a small default weight for unreserved ones, never exceeding demand.
  Reserved flows therefore end up sharing spare capacity proportionally to
  their minimums rather than equally.

All arithmetic is exact (fractions), so equal inputs produce bit-equal
traces regardless of evaluation order.
"""

from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence

from .cluster import ClusterState, Mode
from .errors import InvariantViolation, SpecError, UnknownEntityError
from .units import GBPS_ZERO, format_gbps

DEFAULT_UNRESERVED_WEIGHT = Fraction(1)

TRACE_CSV_HEADER = "iteration,flow_id,pod,pf,allocated_gbps"


@dataclass(frozen=True)
class Flow:
    """One unidirectional transfer, bottlenecked at its sender PF."""

    flow_id: str
    pod_name: str
    vf_id: str                      # node/pf/index of the sending VF
    pf_id: str
    min_bandwidth: Fraction         # 0 = unreserved
    demand: Optional[Fraction]      # None = unbounded
    start_iteration: int
    end_iteration: int

    def validate(self) -> None:
        if self.start_iteration >= self.end_iteration:
            raise SpecError(f"flow {self.flow_id}: start must precede end")
        if self.demand is not None and self.demand <= 0:
            raise SpecError(f"flow {self.flow_id}: bounded demand must be > 0")
        if self.min_bandwidth < 0:
            raise SpecError(f"flow {self.flow_id}: min_bandwidth must be >= 0")

    def active_at(self, iteration: int) -> bool:
        return self.start_iteration <= iteration < self.end_iteration


@dataclass(frozen=True)
class TraceRow:
    iteration: int
    flow_id: str
    pod_name: str
    pf_id: str
    gbps: Fraction


@dataclass
class BandwidthTrace:
    rows: list[TraceRow]

    def to_csv(self) -> str:
        lines = [TRACE_CSV_HEADER]
        for row in self.rows:
            lines.append(
                f"{row.iteration},{row.flow_id},{row.pod_name},{row.pf_id},"
                f"{format_gbps(row.gbps)}"
            )
        return "\n".join(lines) + "\n"

    def at(self, iteration: int) -> dict[str, Fraction]:
        return {r.flow_id: r.gbps for r in self.rows if r.iteration == iteration}


def _progressive_fill(
    entries: Sequence[tuple[str, Fraction, Optional[Fraction]]],
    capacity: Fraction,
) -> dict[str, Fraction]:
    """Weighted max-min fill of (key, weight, cap) entries; cap None = unbounded.

    Raises the common water level until either the capacity is gone or a
    flow saturates at its cap, freezing it and continuing with the rest.
    """
    alloc = {key: GBPS_ZERO for key, _, _ in entries}
    active: dict[str, tuple[Fraction, Optional[Fraction]]] = {}
    for key, weight, cap in entries:
        if weight <= 0:
            raise SpecError(f"flow {key}: fill weight must be > 0")
        if cap is not None and cap <= 0:
            continue  # nothing to give
        active[key] = (weight, cap)
    remaining = capacity
    while active and remaining > 0:
        total_weight = sum(w for w, _ in active.values())
        level = remaining / total_weight
        # nearest cap, measured in level units (cap / weight)
        bounded = [
            (cap - alloc[key]) / weight
            for key, (weight, cap) in active.items()
            if cap is not None
        ]
        step = min(bounded) if bounded else None
        if step is None or step >= level:
            for key, (weight, _) in active.items():
                alloc[key] += level * weight
            remaining = GBPS_ZERO
        else:
            saturated = []
            for key, (weight, cap) in active.items():
                give = step * weight
                alloc[key] += give
                remaining -= give
                if cap is not None and alloc[key] == cap:
                    saturated.append(key)
            for key in saturated:
                del active[key]
    return alloc


def allocate_shares(
    flows: Sequence[Flow],
    capacity: Fraction,
    mode: Mode,
    unreserved_weight: Fraction = DEFAULT_UNRESERVED_WEIGHT,
) -> dict[str, Fraction]:
    """Split one PF's capacity among the active flows for one iteration."""
    if capacity <= 0:
        raise SpecError("capacity must be > 0")
    if not flows:
        return {}
    seen = set()
    for flow in flows:
        if flow.flow_id in seen:
            raise SpecError(f"duplicate flow id {flow.flow_id!r}")
        seen.add(flow.flow_id)

    if mode is Mode.UNCONTROLLED:
        entries = [(f.flow_id, Fraction(1), f.demand) for f in flows]
        return _progressive_fill(entries, capacity)

    floors: dict[str, Fraction] = {}
    for f in flows:
        if f.min_bandwidth > 0:
            floor = f.min_bandwidth if f.demand is None else min(f.min_bandwidth, f.demand)
            floors[f.flow_id] = floor
    total_floor = sum(floors.values(), GBPS_ZERO)
    if total_floor > capacity:
        raise InvariantViolation(
            f"reserved minimums total {total_floor} Gb/s on a {capacity} Gb/s PF; "
            "admission should have prevented this"
        )

    entries = []
    for f in flows:
        weight = f.min_bandwidth if f.min_bandwidth > 0 else unreserved_weight
        if f.demand is None:
            residual_cap = None
        else:
            residual_cap = f.demand - floors.get(f.flow_id, GBPS_ZERO)
        entries.append((f.flow_id, weight, residual_cap))
    extra = _progressive_fill(entries, capacity - total_floor)
    return {f.flow_id: floors.get(f.flow_id, GBPS_ZERO) + extra[f.flow_id] for f in flows}


def _sender_pf(state: ClusterState, flow: Flow) -> tuple[str, str]:
    """Resolve and validate the flow's sending interface; returns
    (node, pf_id)."""
    record = state.pods.get(flow.pod_name)
    if record is None:
        raise UnknownEntityError(f"flow {flow.flow_id}: unknown pod {flow.pod_name!r}")
    for iface in record.network.interfaces:
        if iface.vf == flow.vf_id:
            node, pf_id, _ = flow.vf_id.split("/")
            if pf_id != flow.pf_id:
                raise SpecError(
                    f"flow {flow.flow_id}: vf {flow.vf_id} is not on PF {flow.pf_id}"
                )
            return node, pf_id
    raise UnknownEntityError(
        f"flow {flow.flow_id}: pod {flow.pod_name} has no interface on VF {flow.vf_id}"
    )


def allocate_iteration(
    iteration: int,
    flows: Sequence[Flow],
    state: ClusterState,
    mode: Mode,
    unreserved_weight: Fraction = DEFAULT_UNRESERVED_WEIGHT,
) -> list[TraceRow]:
    """One trace epoch: group the flows by sender PF and share each PF."""
    groups: dict[tuple[str, str], list[Flow]] = {}
    for flow in flows:
        groups.setdefault(_sender_pf(state, flow), []).append(flow)
    shares: dict[str, Fraction] = {}
    for (node, pf_id), group in groups.items():
        capacity = state.node(node).pfs[pf_id].spec.max_bandwidth
        shares.update(allocate_shares(group, capacity, mode, unreserved_weight))
    return [
        TraceRow(
            iteration=iteration,
            flow_id=f.flow_id,
            pod_name=f.pod_name,
            pf_id=f.pf_id,
            gbps=shares[f.flow_id],
        )
        for f in flows
    ]


def run_timeline(
    flows: Sequence[Flow],
    state: ClusterState,
    mode: Mode,
    unreserved_weight: Fraction = DEFAULT_UNRESERVED_WEIGHT,
) -> BandwidthTrace:
    """Allocate every iteration covered by the flows' active intervals."""
    seen = set()
    for flow in flows:
        flow.validate()
        if flow.flow_id in seen:
            raise SpecError(f"duplicate flow id {flow.flow_id!r}")
        seen.add(flow.flow_id)
        _sender_pf(state, flow)
    horizon = max((f.end_iteration for f in flows), default=0)
    rows: list[TraceRow] = []
    for iteration in range(horizon):
        active = [f for f in flows if f.active_at(iteration)]
        if active:
            rows.extend(allocate_iteration(iteration, active, state, mode, unreserved_weight))
    return BandwidthTrace(rows=rows)
