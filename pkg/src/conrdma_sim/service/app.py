"""HTTP service wrapping the simulator.

One cluster session lives in the app (create it with POST /cluster). The
node daemon endpoints (inventory/reserve/release) and the scheduler
extender webhook mirror the wire interfaces of the simulated control
plane; /pods drives the full placement pipeline. The /scenario endpoints
are stateless: each request runs against its own fresh cluster.
"""

from dataclasses import dataclass

from fastapi import FastAPI, HTTPException

from .. import __version__, cni, daemon, scenario as scenario_mod
from ..cluster import (
    ClusterState,
    Mode,
    build_cluster,
    node_spec_from_dict,
    pod_spec_from_dict,
    state_to_dict,
)
from ..errors import (
    InvariantViolation,
    ReservationRejected,
    ScenarioError,
    SimError,
    UnknownEntityError,
)
from ..scheduling import FilterRequest, extender_filter, schedule_pod
from ..units import gbps_to_json, parse_gbps
from . import schemas


@dataclass
class ClusterSession:
    state: ClusterState
    mode: Mode


def _http_error(exc: SimError) -> HTTPException:
    if isinstance(exc, UnknownEntityError):
        return HTTPException(status_code=404, detail=str(exc))
    return HTTPException(status_code=400, detail=str(exc))


def create_app() -> FastAPI:
    app = FastAPI(title="conrdma-sim", version=__version__)
    app.state.session = None

    def session() -> ClusterSession:
        if app.state.session is None:
            raise HTTPException(status_code=409, detail="no cluster; POST /cluster first")
        return app.state.session

    def interfaces_of(record) -> list[schemas.InterfaceModel]:
        return [
            schemas.InterfaceModel(
                name=iface.name,
                vf=iface.vf,
                ip=iface.ip,
                rate_limit=None if iface.rate_limit is None else gbps_to_json(iface.rate_limit),
            )
            for iface in record.network.interfaces
        ]

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "version": __version__}

    # -- cluster session ----------------------------------------------------

    @app.post("/cluster", response_model=schemas.ClusterInfoResponse)
    def create_cluster(req: schemas.ClusterCreateRequest):
        try:
            mode = Mode(req.mode)
            specs = [node_spec_from_dict(n.model_dump()) for n in req.nodes]
            state = build_cluster(specs)
            if req.vfs_per_pf is not None:
                for node in state.nodes.values():
                    daemon.init_node(node, req.vfs_per_pf)
        except SimError as exc:
            raise _http_error(exc) from exc
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        app.state.session = ClusterSession(state=state, mode=mode)
        return _cluster_info(app.state.session)

    def _cluster_info(sess: ClusterSession) -> schemas.ClusterInfoResponse:
        return schemas.ClusterInfoResponse(
            mode=sess.mode.value,
            nodes=len(sess.state.nodes),
            pfs=sum(len(n.eligible_pfs()) for n in sess.state.nodes.values()),
            pods=len(sess.state.pods),
        )

    @app.get("/cluster", response_model=schemas.ClusterInfoResponse)
    def cluster_info():
        return _cluster_info(session())

    @app.get("/cluster/state")
    def cluster_state():
        return state_to_dict(session().state)

    @app.delete("/cluster", response_model=schemas.OkResponse)
    def delete_cluster():
        app.state.session = None
        return schemas.OkResponse()

    # -- node daemon wire interface ------------------------------------------

    @app.get("/nodes/{node}/inventory", response_model=schemas.NodeReportModel)
    def node_inventory(node: str):
        sess = session()
        if node not in sess.state.nodes:
            raise HTTPException(status_code=404, detail=f"unknown node {node!r}")
        try:
            report = daemon.report_inventory(sess.state.nodes[node])
        except SimError as exc:
            raise _http_error(exc) from exc
        return schemas.NodeReportModel.from_report(report)

    @app.post("/nodes/{node}/reserve", response_model=schemas.ReserveResponse)
    def node_reserve(node: str, req: schemas.ReserveRequest):
        sess = session()
        if node not in sess.state.nodes:
            raise HTTPException(status_code=404, detail=f"unknown node {node!r}")
        node_state = sess.state.nodes[node]
        try:
            demands = [
                (vf.pf_id, parse_gbps(vf.min_bandwidth, what="min_bandwidth"))
                for vf in req.vfs
            ]
            refs = daemon.reserve(node_state, req.pod, demands)
        except ReservationRejected as exc:
            return schemas.ReserveResponse(ok=False, reason=str(exc))
        except SimError as exc:
            raise _http_error(exc) from exc
        return schemas.ReserveResponse(
            ok=True, vfs=[node_state.vf(pf_id, idx).vf_id for pf_id, idx in refs]
        )

    @app.post("/nodes/{node}/release", response_model=schemas.OkResponse)
    def node_release(node: str, req: schemas.ReleaseRequest):
        sess = session()
        if node not in sess.state.nodes:
            raise HTTPException(status_code=404, detail=f"unknown node {node!r}")
        try:
            daemon.release(sess.state.nodes[node], req.pod)
        except SimError as exc:
            raise _http_error(exc) from exc
        return schemas.OkResponse()

    # -- scheduler extender webhook -------------------------------------------

    @app.post("/extender/filter", response_model=schemas.FilterResponseModel)
    def extender(req: schemas.FilterRequestModel):
        sess = session()
        try:
            pod = pod_spec_from_dict(req.pod.model_dump())
            pod.validate()
            reports = {}
            for name in req.candidate_nodes:
                if name in sess.state.nodes:
                    try:
                        reports[name] = daemon.report_inventory(sess.state.nodes[name])
                    except SimError:
                        pass  # recorded as a diagnostic by the filter
            response = extender_filter(
                FilterRequest(pod=pod, candidate_nodes=tuple(req.candidate_nodes)),
                reports,
                enforce_bandwidth=sess.mode is Mode.CONTROLLED,
            )
        except SimError as exc:
            raise _http_error(exc) from exc
        return schemas.FilterResponseModel(
            feasible_nodes=response.feasible_nodes,
            per_node_assignment=response.per_node_assignment,
            diagnostics=response.diagnostics,
        )

    # -- pod lifecycle ---------------------------------------------------------

    @app.post("/pods", response_model=schemas.DeployResponse)
    def deploy_pod(req: schemas.PodModel):
        sess = session()
        try:
            pod = pod_spec_from_dict(req.model_dump())
            decision = schedule_pod(sess.state, pod, sess.mode)
        except SimError as exc:
            raise _http_error(exc) from exc
        if not decision.placed:
            return schemas.DeployResponse(
                pod=pod.name, result="rejected", reason=decision.rejected_reason
            )
        record = sess.state.pods[pod.name]
        return schemas.DeployResponse(
            pod=pod.name,
            result="placed",
            node=decision.node_name,
            assignment=list(decision.assignment),
            interfaces=interfaces_of(record),
        )

    @app.get("/pods/{name}", response_model=schemas.PodStatusModel)
    def pod_status(name: str):
        sess = session()
        record = sess.state.pods.get(name)
        if record is None:
            raise HTTPException(status_code=404, detail=f"unknown pod {name!r}")
        return schemas.PodStatusModel(
            pod=name, node=record.node, interfaces=interfaces_of(record)
        )

    @app.get("/pods")
    def list_pods():
        sess = session()
        return {"pods": sorted(sess.state.pods)}

    @app.delete("/pods/{name}", response_model=schemas.OkResponse)
    def teardown(name: str):
        sess = session()
        try:
            cni.teardown_pod(sess.state, name)
        except SimError as exc:
            raise _http_error(exc) from exc
        return schemas.OkResponse()

    # -- scenario execution (stateless) -----------------------------------------

    @app.post("/scenario/run", response_model=schemas.ScenarioRunResponse)
    def scenario_run(req: schemas.ScenarioRunRequest):
        try:
            result = scenario_mod.run_scenario_data(
                req.scenario, mode_override=req.mode, seed=req.seed, name=req.name
            )
        except ScenarioError as exc:
            return schemas.ScenarioRunResponse(
                status="scenario_error",
                exit_code=scenario_mod.EXIT_USAGE,
                errors=[str(exc)],
                placements=[],
                iterations=0,
            )
        return schemas.ScenarioRunResponse(
            status=result.status,
            exit_code=result.exit_code,
            errors=result.errors,
            placements=result.placements,
            iterations=result.iterations,
            artifacts=result.artifacts(),
        )

    @app.post("/scenario/explain", response_model=schemas.ExplainResponse)
    def scenario_explain(req: schemas.ExplainRequest):
        try:
            text = scenario_mod.explain_scenario_data(
                req.scenario, req.pod, mode_override=req.mode, name=req.name
            )
        except (ScenarioError, InvariantViolation, SimError) as exc:
            raise _http_error(exc) from exc
        return schemas.ExplainResponse(text=text)

    @app.post("/scenario/validate", response_model=schemas.ValidateResponse)
    def scenario_validate(req: schemas.ValidateRequest):
        errors = scenario_mod.validate_scenario_data(req.scenario, name=req.name)
        return schemas.ValidateResponse(valid=not errors, errors=errors)

    return app


app = create_app()
