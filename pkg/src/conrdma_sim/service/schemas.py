"""Pydantic request/response models for the HTTP service.

Bandwidth fields accept ints, floats, or exact fraction strings ("100/3")
and are converted to exact fractions at the boundary; responses carry them
back as ints or fraction strings.
"""

from typing import Optional, Union

from pydantic import BaseModel, Field

from ..cluster import DEFAULT_CPU_CAPACITY_HINT, DEFAULT_MEM_CAPACITY_HINT
from ..daemon import NodeReport
from ..units import gbps_to_json

Gbps = Union[int, float, str]


class PfSpecModel(BaseModel):
    pf_id: str
    max_bandwidth: Gbps
    vf_capacity: int = 8
    rdma: bool = True
    sriov: bool = True


class NodeSpecModel(BaseModel):
    name: str
    cpu_capacity: int = DEFAULT_CPU_CAPACITY_HINT
    mem_capacity: int = DEFAULT_MEM_CAPACITY_HINT
    pfs: list[PfSpecModel] = Field(default_factory=list)


class ClusterCreateRequest(BaseModel):
    nodes: list[NodeSpecModel]
    mode: str = "controlled"
    vfs_per_pf: Optional[int] = None  # None = each PF's full capacity


class ClusterInfoResponse(BaseModel):
    mode: str
    nodes: int
    pfs: int
    pods: int


class VfRequestModel(BaseModel):
    min_bandwidth: Gbps = 0


class RdmaAnnotationModel(BaseModel):
    requests: list[VfRequestModel]


class PodModel(BaseModel):
    name: str
    cpu_request: int = 0
    mem_request: int = 0
    rdma: Optional[RdmaAnnotationModel] = None
    node_selector: Optional[str] = None


class PfReportModel(BaseModel):
    pf_id: str
    max_bandwidth: Gbps
    reserved_bandwidth: Gbps
    vfs_total: int
    vfs_free: int


class NodeReportModel(BaseModel):
    node_name: str
    generated_at: int
    pfs: list[PfReportModel]

    @classmethod
    def from_report(cls, report: NodeReport) -> "NodeReportModel":
        return cls(
            node_name=report.node_name,
            generated_at=report.generated_at,
            pfs=[
                PfReportModel(
                    pf_id=pf.pf_id,
                    max_bandwidth=gbps_to_json(pf.max_bandwidth),
                    reserved_bandwidth=gbps_to_json(pf.reserved_bandwidth),
                    vfs_total=pf.vfs_total,
                    vfs_free=pf.vfs_free,
                )
                for pf in report.pfs
            ],
        )


class VfDemandModel(BaseModel):
    pf_id: str
    min_bandwidth: Gbps = 0


class ReserveRequest(BaseModel):
    pod: str
    vfs: list[VfDemandModel]


class ReserveResponse(BaseModel):
    ok: bool
    vfs: Optional[list[str]] = None   # chosen VF ids on success
    reason: Optional[str] = None


class ReleaseRequest(BaseModel):
    pod: str


class OkResponse(BaseModel):
    ok: bool = True


class FilterRequestModel(BaseModel):
    pod: PodModel
    candidate_nodes: list[str]


class FilterResponseModel(BaseModel):
    feasible_nodes: list[str]
    per_node_assignment: dict[str, list[str]]
    diagnostics: dict[str, str]


class InterfaceModel(BaseModel):
    name: str
    vf: str
    ip: str
    rate_limit: Optional[Gbps] = None


class DeployResponse(BaseModel):
    pod: str
    result: str                       # placed | rejected
    node: Optional[str] = None
    assignment: Optional[list[str]] = None
    interfaces: Optional[list[InterfaceModel]] = None
    reason: Optional[str] = None


class PodStatusModel(BaseModel):
    pod: str
    node: str
    interfaces: list[InterfaceModel]


class ScenarioRunRequest(BaseModel):
    scenario: dict
    mode: Optional[str] = None        # overrides the scenario's mode
    seed: Optional[int] = None
    name: str = "scenario"


class ScenarioRunResponse(BaseModel):
    status: str
    exit_code: int
    errors: list[str]
    placements: list[dict]
    iterations: int
    artifacts: Optional[dict[str, str]] = None


class ExplainRequest(BaseModel):
    scenario: dict
    pod: str
    mode: Optional[str] = None
    name: str = "scenario"


class ExplainResponse(BaseModel):
    text: str


class ValidateRequest(BaseModel):
    scenario: dict
    name: str = "scenario"


class ValidateResponse(BaseModel):
    valid: bool
    errors: list[str]
