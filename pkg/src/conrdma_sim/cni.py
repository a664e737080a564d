"""Pod network setup and teardown.

Setup runs a fixed step sequence per VF: move into the pod's namespace,
rename to eth<n>, assign an address, apply the rate limit. Any step failure
unwinds the completed steps in reverse order and releases the reservation,
leaving the cluster exactly as it was before setup started. Teardown is the
same unwinding applied to a fully set-up pod.
"""

from ipaddress import IPv4Address
from typing import Optional, Sequence

from . import daemon
from .cluster import (
    ClusterState,
    NODE_NAMESPACE,
    PodInterface,
    PodNetworkStatus,
    PodSpec,
    VirtualFunction,
    remove_pod_record,
)
from .errors import SetupFailure, SpecError, UnknownEntityError

STEP_KINDS = ("move_vf", "rename", "assign_ip", "set_rate_limit")


def setup_steps(vf_count: int) -> list[tuple[str, int]]:
    """The linear (kind, vf_index) sequence setup executes; failure points
    are indices into this list."""
    return [(kind, i) for i in range(vf_count) for kind in STEP_KINDS]


def assign_ip(state: ClusterState, node_name: str, pod_name: str, vf_index: int) -> str:
    """Deterministic IPAM: lowest free host address >= .0.2 in the node's
    10.<node index>.0.0/16 pool. Released addresses are immediately reusable."""
    node = state.node(node_name)
    base = int(IPv4Address(f"10.{node.index}.0.0"))
    used = {
        int(IPv4Address(vf.ip))
        for pf in node.pfs.values()
        for vf in pf.vfs
        if vf.ip is not None
    }
    for offset in range(2, 0xFFFF):
        candidate = base + offset
        if candidate not in used:
            return str(IPv4Address(candidate))
    raise SpecError(f"node {node_name}: address pool exhausted for pod {pod_name!r}")


def _apply_step(
    state: ClusterState,
    node_name: str,
    pod: PodSpec,
    vf: VirtualFunction,
    kind: str,
    i: int,
    enforce_bandwidth: bool,
) -> None:
    if kind == "move_vf":
        vf.namespace = pod.name
    elif kind == "rename":
        vf.iface_name = f"eth{i}"
    elif kind == "assign_ip":
        vf.ip = assign_ip(state, node_name, pod.name, i)
    elif kind == "set_rate_limit":
        minimum = pod.rdma.requests[i].min_bandwidth
        if enforce_bandwidth and minimum > 0:
            vf.rate_limit = minimum
        # min 0 (or control disabled): leave the VF unlimited


def _undo_step(vf: VirtualFunction, kind: str) -> None:
    if kind == "move_vf":
        vf.namespace = NODE_NAMESPACE
    elif kind == "rename":
        vf.iface_name = None
    elif kind == "assign_ip":
        vf.ip = None
    elif kind == "set_rate_limit":
        vf.rate_limit = None


def setup_pod(
    state: ClusterState,
    pod: PodSpec,
    node_name: str,
    assignment: Sequence[str],
    enforce_bandwidth: bool = True,
    inject_failure_step: Optional[int] = None,
) -> PodNetworkStatus:
    """Configure one interface per VF request on the already-reserved VFs.

    Runs once per pod. Interface names are eth0, eth1, ... in request order.
    ``inject_failure_step`` aborts at that index of :func:`setup_steps` to
    exercise the rollback path.
    """
    node = state.node(node_name)
    if not assignment:
        if pod.rdma is not None:
            raise SpecError(f"pod {pod.name}: assignment missing for its VF requests")
        return PodNetworkStatus(pod_name=pod.name, interfaces=())

    refs = node.reservations.get(pod.name)
    if refs is None:
        raise SpecError(f"pod {pod.name}: setup requires a prior reservation on {node_name}")
    if [pf_id for pf_id, _ in refs] != list(assignment):
        raise SpecError(f"pod {pod.name}: assignment does not match the reservation")
    vfs = [node.vf(pf_id, idx) for pf_id, idx in refs]

    completed: list[tuple[str, int]] = []
    try:
        for step_no, (kind, i) in enumerate(setup_steps(len(vfs))):
            if step_no == inject_failure_step:
                raise SetupFailure(
                    f"pod {pod.name}: injected failure at step {step_no} ({kind} of eth{i})"
                )
            _apply_step(state, node_name, pod, vfs[i], kind, i, enforce_bandwidth)
            completed.append((kind, i))
    except SetupFailure:
        for kind, i in reversed(completed):
            _undo_step(vfs[i], kind)
        daemon.release(node, pod.name)
        raise

    return PodNetworkStatus(
        pod_name=pod.name,
        interfaces=tuple(
            PodInterface(name=vf.iface_name, vf=vf.vf_id, ip=vf.ip, rate_limit=vf.rate_limit)
            for vf in vfs
        ),
    )


def teardown_pod(state: ClusterState, pod_name: str) -> None:
    """Remove the pod: unconfigure its VFs in reverse order, release the
    reservation, and return its cpu/mem. The node's inventory afterwards
    equals the pre-placement inventory."""
    record = state.pods.get(pod_name)
    if record is None:
        raise UnknownEntityError(f"unknown pod {pod_name!r}")
    node = state.node(record.node)
    refs = node.reservations.get(pod_name, [])
    vfs = [node.vf(pf_id, idx) for pf_id, idx in refs]
    for vf in reversed(vfs):
        for kind in reversed(STEP_KINDS):
            _undo_step(vf, kind)
    if refs:
        daemon.release(node, pod_name)
    remove_pod_record(state, pod_name)
