"""Cluster domain model and authoritative mutable state.

Every other module reads and updates the :class:`ClusterState` built here,
always through its own operations; nothing else mutates it. Bandwidth is
carried as exact :class:`~fractions.Fraction` Gb/s so the accounting
invariants hold without rounding slack.
"""

import copy
import re
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Optional

from .errors import InvariantViolation, SpecError
from .units import GBPS_ZERO, gbps_to_json, parse_gbps

MAX_VFS_PER_PF = 256  # SR-IOV device limit
NODE_NAMESPACE = "node"

# applied when a declarative node spec omits cpu/mem capacity
DEFAULT_CPU_CAPACITY_HINT = 32_000          # millicores
DEFAULT_MEM_CAPACITY_HINT = 64 * 1024 ** 3  # bytes

_NAME_RE = re.compile(r"^[A-Za-z0-9][A-Za-z0-9._-]*$")


class Mode(str, Enum):
    """Whether the control plane enforces bandwidth reservations.

    CONTROLLED is the extended behavior: minimum bandwidth is reserved at
    scheduling time and applied as a per-VF rate limit. UNCONTROLLED models
    the stock behavior: VFs are plain countable devices and bandwidth
    annotations are ignored everywhere.
    """

    CONTROLLED = "controlled"
    UNCONTROLLED = "uncontrolled"


def _check_name(name, what: str) -> str:
    if not isinstance(name, str) or not _NAME_RE.match(name):
        raise SpecError(f"{what} name {name!r} must match {_NAME_RE.pattern}")
    return name


# ---------------------------------------------------------------------------
# Declarative specs (immutable)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PfSpec:
    """A physical interface on a node.

    Interfaces that are not both RDMA- and SR-IOV-capable can still be
    declared (so inventory scans have something to skip) but never carry
    VFs and never appear in reports.
    """

    pf_id: str
    max_bandwidth: Fraction
    vf_capacity: int
    rdma: bool = True
    sriov: bool = True

    @property
    def eligible(self) -> bool:
        return self.rdma and self.sriov

    def validate(self) -> None:
        _check_name(self.pf_id, "PF")
        if self.max_bandwidth <= 0:
            raise SpecError(f"PF {self.pf_id}: max_bandwidth must be > 0")
        if not isinstance(self.vf_capacity, int) or isinstance(self.vf_capacity, bool):
            raise SpecError(f"PF {self.pf_id}: vf_capacity must be an integer")
        if not 1 <= self.vf_capacity <= MAX_VFS_PER_PF:
            raise SpecError(
                f"PF {self.pf_id}: vf_capacity {self.vf_capacity} outside 1..{MAX_VFS_PER_PF}"
            )


@dataclass(frozen=True)
class NodeSpec:
    name: str
    cpu_capacity: int   # millicores
    mem_capacity: int   # bytes
    pfs: tuple[PfSpec, ...]

    def validate(self) -> None:
        _check_name(self.name, "node")
        if self.cpu_capacity <= 0 or self.mem_capacity <= 0:
            raise SpecError(f"node {self.name}: cpu and mem capacity must be > 0")
        seen = set()
        for pf in self.pfs:
            pf.validate()
            if pf.pf_id in seen:
                raise SpecError(f"node {self.name}: duplicate PF id {pf.pf_id!r}")
            seen.add(pf.pf_id)


@dataclass(frozen=True)
class VfRequest:
    """One requested virtual function; min_bandwidth 0 means no reservation."""

    min_bandwidth: Fraction

    def validate(self) -> None:
        if self.min_bandwidth < 0:
            raise SpecError("min_bandwidth must be >= 0")


@dataclass(frozen=True)
class RdmaAnnotation:
    requests: tuple[VfRequest, ...]

    def validate(self) -> None:
        if not self.requests:
            raise SpecError("rdma annotation must request at least one VF")
        for req in self.requests:
            req.validate()

    @property
    def mins(self) -> list[Fraction]:
        return [req.min_bandwidth for req in self.requests]


@dataclass(frozen=True)
class PodSpec:
    name: str
    cpu_request: int = 0
    mem_request: int = 0
    rdma: Optional[RdmaAnnotation] = None
    node_selector: Optional[str] = None  # pin to one node; None = any

    def validate(self) -> None:
        _check_name(self.name, "pod")
        if self.cpu_request < 0 or self.mem_request < 0:
            raise SpecError(f"pod {self.name}: cpu/mem requests must be >= 0")
        if self.rdma is not None:
            self.rdma.validate()

    @property
    def request_count(self) -> int:
        return len(self.rdma.requests) if self.rdma is not None else 0


# ---------------------------------------------------------------------------
# Runtime state
# ---------------------------------------------------------------------------

@dataclass
class VirtualFunction:
    """One SR-IOV virtual function and everything configured on it.

    ``allocated_to``/``reserved_gbps`` are the daemon's accounting;
    ``namespace``/``iface_name``/``ip``/``rate_limit`` are the network
    configuration applied step by step during pod setup. A Free VF has all
    of them cleared.
    """

    node: str
    pf_id: str
    index: int
    allocated_to: Optional[str] = None
    reserved_gbps: Fraction = GBPS_ZERO
    namespace: str = NODE_NAMESPACE
    iface_name: Optional[str] = None
    ip: Optional[str] = None
    rate_limit: Optional[Fraction] = None

    @property
    def vf_id(self) -> str:
        return f"{self.node}/{self.pf_id}/{self.index}"

    @property
    def free(self) -> bool:
        return self.allocated_to is None

    def reset(self) -> None:
        self.allocated_to = None
        self.reserved_gbps = GBPS_ZERO
        self.namespace = NODE_NAMESPACE
        self.iface_name = None
        self.ip = None
        self.rate_limit = None


@dataclass
class PfState:
    spec: PfSpec
    vfs: list[VirtualFunction] = field(default_factory=list)
    reserved: Fraction = GBPS_ZERO

    @property
    def free_bandwidth(self) -> Fraction:
        return self.spec.max_bandwidth - self.reserved

    @property
    def free_vfs(self) -> int:
        return sum(1 for vf in self.vfs if vf.free)


@dataclass
class NodeState:
    spec: NodeSpec
    index: int                      # build order; fixes the node's IP pool
    initialized: bool = False       # inventory is served only after VF init
    pfs: dict[str, PfState] = field(default_factory=dict)
    cpu_committed: int = 0
    mem_committed: int = 0
    # pod -> ordered (pf_id, vf index) refs, parallel to the pod's requests
    reservations: dict[str, list[tuple[str, int]]] = field(default_factory=dict)
    # telemetry, not state: excluded from structural equality
    report_seq: int = field(default=0, compare=False)

    @property
    def name(self) -> str:
        return self.spec.name

    @property
    def cpu_free(self) -> int:
        return self.spec.cpu_capacity - self.cpu_committed

    @property
    def mem_free(self) -> int:
        return self.spec.mem_capacity - self.mem_committed

    def eligible_pfs(self) -> list[PfState]:
        return [pf for pf in self.pfs.values() if pf.spec.eligible]

    def vf(self, pf_id: str, index: int) -> VirtualFunction:
        return self.pfs[pf_id].vfs[index]

    def configure_vfs(self, vfs_per_pf: Optional[int] = None) -> None:
        """(Re)create the VF pool: ``vfs_per_pf`` on every eligible PF, or
        each PF's full capacity when None. Only valid with nothing allocated."""
        for pf in self.pfs.values():
            if any(not vf.free for vf in pf.vfs):
                raise SpecError(f"node {self.name}: cannot reconfigure VFs while allocated")
        for pf in self.pfs.values():
            if not pf.spec.eligible:
                pf.vfs = []
                continue
            count = pf.spec.vf_capacity if vfs_per_pf is None else vfs_per_pf
            if count > pf.spec.vf_capacity:
                raise SpecError(
                    f"node {self.name}: {count} VFs exceeds capacity "
                    f"{pf.spec.vf_capacity} of PF {pf.spec.pf_id}"
                )
            pf.vfs = [
                VirtualFunction(node=self.name, pf_id=pf.spec.pf_id, index=i)
                for i in range(count)
            ]
            pf.reserved = GBPS_ZERO


@dataclass(frozen=True)
class PodInterface:
    """One network interface as seen from inside the pod."""

    name: str                        # eth0, eth1, ... in request order
    vf: str                          # node/pf/index
    ip: str
    rate_limit: Optional[Fraction]   # None = no limit configured


@dataclass(frozen=True)
class PodNetworkStatus:
    pod_name: str
    interfaces: tuple[PodInterface, ...]


@dataclass
class PodRecord:
    spec: PodSpec
    node: str
    assignment: tuple[str, ...]      # target pf_id per request
    network: PodNetworkStatus


@dataclass
class ClusterState:
    nodes: dict[str, NodeState] = field(default_factory=dict)
    pods: dict[str, PodRecord] = field(default_factory=dict)

    def node(self, name: str) -> NodeState:
        try:
            return self.nodes[name]
        except KeyError:
            raise SpecError(f"unknown node {name!r}") from None


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def build_cluster(specs) -> ClusterState:
    """Construct a cluster with every eligible PF fully populated with Free
    VFs and all reservations zero."""
    state = ClusterState()
    for spec in specs:
        spec.validate()
        if spec.name in state.nodes:
            raise SpecError(f"duplicate node name {spec.name!r}")
        index = len(state.nodes)
        if index > 255:
            raise SpecError("at most 256 nodes supported (one 10.<index>.0.0/16 pool each)")
        node = NodeState(
            spec=spec,
            index=index,
            pfs={pf.pf_id: PfState(spec=pf) for pf in spec.pfs},
        )
        node.configure_vfs(None)
        node.initialized = True
        state.nodes[spec.name] = node
    return state


def snapshot(state: ClusterState) -> ClusterState:
    """Value-equal, fully independent copy."""
    return copy.deepcopy(state)


def place_pod_record(
    state: ClusterState,
    spec: PodSpec,
    node_name: str,
    assignment: tuple[str, ...],
    network: PodNetworkStatus,
) -> PodRecord:
    """Commit a pod's cpu/mem and register its placement record."""
    if spec.name in state.pods:
        raise SpecError(f"pod {spec.name!r} is already placed")
    node = state.node(node_name)
    record = PodRecord(spec=spec, node=node_name, assignment=assignment, network=network)
    node.cpu_committed += spec.cpu_request
    node.mem_committed += spec.mem_request
    state.pods[spec.name] = record
    return record


def remove_pod_record(state: ClusterState, pod_name: str) -> PodRecord:
    record = state.pods.pop(pod_name)
    node = state.node(record.node)
    node.cpu_committed -= record.spec.cpu_request
    node.mem_committed -= record.spec.mem_request
    return record


def check_invariants(state: ClusterState) -> None:
    """Verify conservation, capacity, and ownership invariants.

    Raises :class:`InvariantViolation` on the first breach. Intended to run
    between top-level operations (it assumes no setup is mid-flight).
    """
    owners: dict[str, str] = {}
    allocated_total = 0
    for node in state.nodes.values():
        for pf in node.pfs.values():
            if len(pf.vfs) > pf.spec.vf_capacity:
                raise InvariantViolation(
                    f"{node.name}/{pf.spec.pf_id}: {len(pf.vfs)} VFs exceed capacity"
                )
            reserved = sum((vf.reserved_gbps for vf in pf.vfs), GBPS_ZERO)
            if reserved != pf.reserved:
                raise InvariantViolation(
                    f"{node.name}/{pf.spec.pf_id}: tracked reservation {pf.reserved} "
                    f"!= recomputed {reserved}"
                )
            if pf.reserved > pf.spec.max_bandwidth:
                raise InvariantViolation(
                    f"{node.name}/{pf.spec.pf_id}: reserved {pf.reserved} exceeds "
                    f"max_bandwidth {pf.spec.max_bandwidth}"
                )
            for vf in pf.vfs:
                if vf.free:
                    if vf.reserved_gbps != 0 or vf.iface_name or vf.ip or vf.rate_limit:
                        raise InvariantViolation(f"{vf.vf_id}: free VF carries configuration")
                    if vf.namespace != NODE_NAMESPACE:
                        raise InvariantViolation(f"{vf.vf_id}: free VF outside node namespace")
                else:
                    allocated_total += 1
                    owners[vf.vf_id] = vf.allocated_to
        # daemon reservation book must mirror the VF states
        refs_by_pod: dict[str, int] = {}
        for pod_name, refs in node.reservations.items():
            for pf_id, idx in refs:
                vf = node.vf(pf_id, idx)
                if vf.allocated_to != pod_name:
                    raise InvariantViolation(
                        f"{node.name}: reservation book says {pod_name} owns "
                        f"{vf.vf_id}, VF says {vf.allocated_to}"
                    )
            refs_by_pod[pod_name] = len(refs)
        booked = sum(refs_by_pod.values())
        allocated_here = sum(1 for pf in node.pfs.values() for vf in pf.vfs if not vf.free)
        if booked != allocated_here:
            raise InvariantViolation(
                f"{node.name}: {allocated_here} VFs allocated but {booked} booked"
            )

    # VF <-> pod relation is a partial injection onto placed pods
    requested_total = 0
    seen_ips: set[str] = set()
    for pod_name, record in state.pods.items():
        requested_total += record.spec.request_count
        node = state.nodes.get(record.node)
        if node is None:
            raise InvariantViolation(f"pod {pod_name}: placed on unknown node {record.node}")
        refs = node.reservations.get(pod_name, [])
        if len(refs) != record.spec.request_count:
            raise InvariantViolation(
                f"pod {pod_name}: {record.spec.request_count} VFs requested, "
                f"{len(refs)} reserved"
            )
        for iface in record.network.interfaces:
            if iface.ip in seen_ips:
                raise InvariantViolation(f"duplicate IP {iface.ip} across active pods")
            seen_ips.add(iface.ip)
    for vf_id, owner in owners.items():
        if owner not in state.pods:
            raise InvariantViolation(f"{vf_id}: allocated to unknown pod {owner!r}")
    if allocated_total != requested_total:
        raise InvariantViolation(
            f"conservation broken: {allocated_total} VFs allocated, "
            f"{requested_total} requested by placed pods"
        )


# ---------------------------------------------------------------------------
# Serialization (exact round-trip)
# ---------------------------------------------------------------------------

def pf_spec_to_dict(pf: PfSpec) -> dict:
    return {
        "pf_id": pf.pf_id,
        "max_bandwidth": gbps_to_json(pf.max_bandwidth),
        "vf_capacity": pf.vf_capacity,
        "rdma": pf.rdma,
        "sriov": pf.sriov,
    }


def pf_spec_from_dict(data: dict) -> PfSpec:
    return PfSpec(
        pf_id=data["pf_id"],
        max_bandwidth=parse_gbps(data["max_bandwidth"], what="max_bandwidth"),
        vf_capacity=data["vf_capacity"],
        rdma=bool(data.get("rdma", True)),
        sriov=bool(data.get("sriov", True)),
    )


def node_spec_to_dict(spec: NodeSpec) -> dict:
    return {
        "name": spec.name,
        "cpu_capacity": spec.cpu_capacity,
        "mem_capacity": spec.mem_capacity,
        "pfs": [pf_spec_to_dict(pf) for pf in spec.pfs],
    }


def node_spec_from_dict(data: dict) -> NodeSpec:
    return NodeSpec(
        name=data["name"],
        cpu_capacity=data["cpu_capacity"],
        mem_capacity=data["mem_capacity"],
        pfs=tuple(pf_spec_from_dict(pf) for pf in data.get("pfs", [])),
    )


def pod_spec_to_dict(spec: PodSpec) -> dict:
    out: dict = {
        "name": spec.name,
        "cpu_request": spec.cpu_request,
        "mem_request": spec.mem_request,
    }
    if spec.rdma is not None:
        out["rdma"] = {
            "requests": [
                {"min_bandwidth": gbps_to_json(req.min_bandwidth)}
                for req in spec.rdma.requests
            ]
        }
    if spec.node_selector is not None:
        out["node_selector"] = spec.node_selector
    return out


def pod_spec_from_dict(data: dict) -> PodSpec:
    rdma = None
    if data.get("rdma") is not None:
        requests = data["rdma"].get("requests", [])
        rdma = RdmaAnnotation(
            requests=tuple(
                VfRequest(min_bandwidth=parse_gbps(req["min_bandwidth"], what="min_bandwidth"))
                for req in requests
            )
        )
    return PodSpec(
        name=data["name"],
        cpu_request=data.get("cpu_request", 0),
        mem_request=data.get("mem_request", 0),
        rdma=rdma,
        node_selector=data.get("node_selector"),
    )


def _vf_to_dict(vf: VirtualFunction) -> dict:
    return {
        "index": vf.index,
        "allocated_to": vf.allocated_to,
        "reserved_gbps": gbps_to_json(vf.reserved_gbps),
        "namespace": vf.namespace,
        "iface_name": vf.iface_name,
        "ip": vf.ip,
        "rate_limit": None if vf.rate_limit is None else gbps_to_json(vf.rate_limit),
    }


def state_to_dict(state: ClusterState) -> dict:
    nodes = {}
    for node in state.nodes.values():
        nodes[node.name] = {
            "spec": node_spec_to_dict(node.spec),
            "index": node.index,
            "initialized": node.initialized,
            "cpu_committed": node.cpu_committed,
            "mem_committed": node.mem_committed,
            "report_seq": node.report_seq,
            "pfs": {
                pf_id: {
                    "reserved": gbps_to_json(pf.reserved),
                    "vfs": [_vf_to_dict(vf) for vf in pf.vfs],
                }
                for pf_id, pf in node.pfs.items()
            },
            "reservations": {
                pod: [[pf_id, idx] for pf_id, idx in refs]
                for pod, refs in node.reservations.items()
            },
        }
    pods = {}
    for record in state.pods.values():
        pods[record.spec.name] = {
            "spec": pod_spec_to_dict(record.spec),
            "node": record.node,
            "assignment": list(record.assignment),
            "interfaces": [
                {
                    "name": iface.name,
                    "vf": iface.vf,
                    "ip": iface.ip,
                    "rate_limit": None if iface.rate_limit is None
                    else gbps_to_json(iface.rate_limit),
                }
                for iface in record.network.interfaces
            ],
        }
    return {"version": 1, "nodes": nodes, "pods": pods}


def state_from_dict(data: dict) -> ClusterState:
    if data.get("version") != 1:
        raise SpecError(f"unsupported state dump version {data.get('version')!r}")
    state = ClusterState()
    for name, nd in data["nodes"].items():
        spec = node_spec_from_dict(nd["spec"])
        node = NodeState(
            spec=spec,
            index=nd["index"],
            initialized=nd["initialized"],
            cpu_committed=nd["cpu_committed"],
            mem_committed=nd["mem_committed"],
            pfs={pf.pf_id: PfState(spec=pf) for pf in spec.pfs},
        )
        node.report_seq = nd.get("report_seq", 0)
        for pf_id, pfd in nd["pfs"].items():
            pf = node.pfs[pf_id]
            pf.reserved = parse_gbps(pfd["reserved"], what="reserved")
            pf.vfs = []
            for vfd in pfd["vfs"]:
                rate = vfd.get("rate_limit")
                pf.vfs.append(
                    VirtualFunction(
                        node=name,
                        pf_id=pf_id,
                        index=vfd["index"],
                        allocated_to=vfd.get("allocated_to"),
                        reserved_gbps=parse_gbps(vfd["reserved_gbps"], what="reserved_gbps"),
                        namespace=vfd.get("namespace", NODE_NAMESPACE),
                        iface_name=vfd.get("iface_name"),
                        ip=vfd.get("ip"),
                        rate_limit=None if rate is None else parse_gbps(rate, what="rate_limit"),
                    )
                )
        node.reservations = {
            pod: [(ref[0], ref[1]) for ref in refs]
            for pod, refs in nd.get("reservations", {}).items()
        }
        state.nodes[name] = node
    for name, pd in data.get("pods", {}).items():
        spec = pod_spec_from_dict(pd["spec"])
        interfaces = tuple(
            PodInterface(
                name=ifd["name"],
                vf=ifd["vf"],
                ip=ifd["ip"],
                rate_limit=None if ifd.get("rate_limit") is None
                else parse_gbps(ifd["rate_limit"], what="rate_limit"),
            )
            for ifd in pd.get("interfaces", [])
        )
        state.pods[name] = PodRecord(
            spec=spec,
            node=pd["node"],
            assignment=tuple(pd.get("assignment", [])),
            network=PodNetworkStatus(pod_name=name, interfaces=interfaces),
        )
    return state
