"""Per-node hardware daemon: VF initialization and inventory accounting.

The daemon owns the node's RDMA bookkeeping. Reservations are re-validated
here against live state rather than trusted from the caller, so the
scheduler's view and the allocated reality can never drift apart: what was
requested is exactly what is allocated. Inventory is served only after the
node's VFs have been initialized.
"""

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

from .cluster import NodeSpec, NodeState, PfState
from .errors import ReservationRejected, SimError, SpecError, UnknownEntityError
from .units import GBPS_ZERO


@dataclass(frozen=True)
class PfReport:
    pf_id: str
    max_bandwidth: Fraction
    reserved_bandwidth: Fraction
    vfs_total: int
    vfs_free: int

    @property
    def free_bandwidth(self) -> Fraction:
        return self.max_bandwidth - self.reserved_bandwidth


@dataclass(frozen=True)
class NodeReport:
    node_name: str
    pfs: tuple[PfReport, ...]
    generated_at: int = field(compare=False, default=0)  # monotonic per node


def create_node_state(spec: NodeSpec, index: int) -> NodeState:
    """Node as it exists before the daemon's init step: PFs known, no VFs,
    inventory refused."""
    spec.validate()
    return NodeState(
        spec=spec,
        index=index,
        pfs={pf.pf_id: PfState(spec=pf) for pf in spec.pfs},
    )


def init_node(node: NodeState, vfs_per_pf: Optional[int] = None) -> NodeState:
    """Configure VFs on every RDMA+SR-IOV PF and open the node for inventory.

    ``vfs_per_pf`` of None configures each PF to its full capacity.
    """
    if vfs_per_pf is not None and vfs_per_pf < 1:
        raise SpecError(f"node {node.name}: vfs_per_pf must be >= 1")
    node.configure_vfs(vfs_per_pf)
    node.initialized = True
    return node


def report_inventory(node: NodeState) -> NodeReport:
    """Current PF/VF availability, recomputed from live state on every call."""
    if not node.initialized:
        raise SimError(f"node {node.name}: inventory unavailable before VF initialization")
    node.report_seq += 1
    reports = tuple(
        PfReport(
            pf_id=pf.spec.pf_id,
            max_bandwidth=pf.spec.max_bandwidth,
            reserved_bandwidth=pf.reserved,
            vfs_total=len(pf.vfs),
            vfs_free=pf.free_vfs,
        )
        for pf in node.eligible_pfs()
    )
    return NodeReport(node_name=node.name, pfs=reports, generated_at=node.report_seq)


def reserve(
    node: NodeState,
    pod_name: str,
    demands: Sequence[tuple[str, Fraction]],
) -> list[tuple[str, int]]:
    """Atomically allocate one VF per (pf_id, min_bandwidth) demand.

    Feasibility is checked against live state first; on any failure nothing
    changes and :class:`ReservationRejected` is raised. Returns the chosen
    (pf_id, vf index) refs, parallel to ``demands``.
    """
    if not node.initialized:
        raise SimError(f"node {node.name}: not initialized")
    if not demands:
        raise SpecError("reserve requires at least one demand")
    if pod_name in node.reservations:
        raise SpecError(f"pod {pod_name!r} already holds a reservation on {node.name}")

    per_pf_count: dict[str, int] = {}
    per_pf_gbps: dict[str, Fraction] = {}
    for pf_id, gbps in demands:
        pf = node.pfs.get(pf_id)
        if pf is None or not pf.spec.eligible:
            raise SpecError(f"node {node.name}: no eligible PF {pf_id!r}")
        if gbps < 0:
            raise SpecError("reserved bandwidth must be >= 0")
        per_pf_count[pf_id] = per_pf_count.get(pf_id, 0) + 1
        per_pf_gbps[pf_id] = per_pf_gbps.get(pf_id, GBPS_ZERO) + gbps

    # validate everything before touching state
    for pf_id, count in per_pf_count.items():
        pf = node.pfs[pf_id]
        if count > pf.free_vfs:
            raise ReservationRejected(
                f"{node.name}/{pf_id}: {count} VFs requested, {pf.free_vfs} free"
            )
        if per_pf_gbps[pf_id] > pf.free_bandwidth:
            raise ReservationRejected(
                f"{node.name}/{pf_id}: {per_pf_gbps[pf_id]} Gb/s requested, "
                f"{pf.free_bandwidth} Gb/s free"
            )

    refs: list[tuple[str, int]] = []
    cursor: dict[str, int] = {}
    for pf_id, gbps in demands:
        pf = node.pfs[pf_id]
        start = cursor.get(pf_id, 0)
        for idx in range(start, len(pf.vfs)):
            vf = pf.vfs[idx]
            if vf.free:
                vf.allocated_to = pod_name
                vf.reserved_gbps = gbps
                pf.reserved += gbps
                refs.append((pf_id, idx))
                cursor[pf_id] = idx + 1
                break
        else:  # unreachable after validation
            raise ReservationRejected(f"{node.name}/{pf_id}: no free VF")
    node.reservations[pod_name] = refs
    return refs


def release(node: NodeState, pod_name: str) -> None:
    """Return all of the pod's VFs to Free and roll back the reservation.

    Afterwards the inventory equals what it would be had the pod never been
    placed (modulo the report sequence number).
    """
    refs = node.reservations.pop(pod_name, None)
    if refs is None:
        raise UnknownEntityError(f"pod {pod_name!r} has no reservation on {node.name}")
    for pf_id, idx in refs:
        vf = node.vf(pf_id, idx)
        node.pfs[pf_id].reserved -= vf.reserved_gbps
        vf.reset()
