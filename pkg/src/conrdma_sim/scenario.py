"""Declarative scenarios: a cluster plus an ordered event script.

Scenario files are JSON::

    {
      "version": 1,
      "name": "...",                     # optional
      "mode": "controlled",              # or "uncontrolled"; default controlled
      "cluster": [ <node spec>, ... ],
      "events": [
        {"deploy_pod":   {"pod": <pod spec>, "expect": "placed"}},
        {"teardown_pod": {"pod": "name"}},
        {"start_flow":   {"flow_id": "f", "pod": "name", "vf_index": 0,
                          "demand": 40}},   # omit/null demand = unbounded
        {"stop_flow":    {"flow_id": "f"}},
        {"inject_failure": {"pod": "name", "step": 3}},
        {"advance":      {"iterations": 10}}
      ]
    }

``expect`` may be "placed" (default), "rejected", or "setup_failure";
a run whose outcome differs from the expectation fails. Node specs may
omit cpu/mem capacity (generous defaults apply). Running a scenario yields
three artifacts: a placement report, a final cluster state dump, and the
bandwidth trace CSV.
"""

import json
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from typing import Optional, Union

from . import cni
from .cluster import (
    DEFAULT_CPU_CAPACITY_HINT,
    DEFAULT_MEM_CAPACITY_HINT,
    ClusterState,
    Mode,
    NodeSpec,
    PodSpec,
    build_cluster,
    check_invariants,
    node_spec_from_dict,
    pod_spec_from_dict,
    state_to_dict,
)
from .errors import InvariantViolation, ScenarioError, SetupFailure, SimError
from .scheduling import DecisionTrace, schedule_pod
from .sharing import (
    BandwidthTrace,
    DEFAULT_UNRESERVED_WEIGHT,
    Flow,
    TraceRow,
    allocate_iteration,
)
from .units import gbps_to_json, parse_gbps

SCENARIO_VERSION = 1

PLACEMENTS_FILE = "placements.json"
STATE_FILE = "cluster_state.json"
TRACE_FILE = "bandwidth_trace.csv"

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INVARIANT = 2
EXIT_UNEXPECTED = 3

_EXPECTATIONS = ("placed", "rejected", "setup_failure")

# flows live until stopped; the sentinel keeps Flow's interval invariant true
_OPEN_END = 2 ** 31


@dataclass(frozen=True)
class DeployPod:
    pod: PodSpec
    expect: str = "placed"


@dataclass(frozen=True)
class TeardownPod:
    pod_name: str


@dataclass(frozen=True)
class StartFlow:
    flow_id: str
    pod_name: str
    vf_index: int = 0
    demand: Optional[Fraction] = None


@dataclass(frozen=True)
class StopFlow:
    flow_id: str


@dataclass(frozen=True)
class InjectFailure:
    pod_name: str
    step: int


@dataclass(frozen=True)
class Advance:
    iterations: int


Event = Union[DeployPod, TeardownPod, StartFlow, StopFlow, InjectFailure, Advance]


@dataclass
class Scenario:
    name: str
    mode: Mode
    nodes: list[NodeSpec]
    events: list[Event]


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ScenarioError(message)


def parse_scenario(data, name: str = "scenario") -> Scenario:
    """Parse and statically validate a scenario document."""
    _require(isinstance(data, dict), "scenario must be a JSON object")
    _require(data.get("version") == SCENARIO_VERSION,
             f"scenario version must be {SCENARIO_VERSION}")
    mode_raw = data.get("mode", Mode.CONTROLLED.value)
    try:
        mode = Mode(mode_raw)
    except ValueError:
        raise ScenarioError(f"unknown mode {mode_raw!r}") from None

    cluster_raw = data.get("cluster", [])
    _require(isinstance(cluster_raw, list), "'cluster' must be a list of node specs")
    nodes = []
    for entry in cluster_raw:
        _require(isinstance(entry, dict), "node spec must be an object")
        filled = {
            "cpu_capacity": DEFAULT_CPU_CAPACITY_HINT,
            "mem_capacity": DEFAULT_MEM_CAPACITY_HINT,
            **entry,
        }
        try:
            spec = node_spec_from_dict(filled)
            spec.validate()
        except (SimError, KeyError, TypeError) as exc:
            raise ScenarioError(f"invalid node spec {entry.get('name')!r}: {exc}") from exc
        nodes.append(spec)
    _require(len({n.name for n in nodes}) == len(nodes), "duplicate node names in cluster")
    # the cluster must actually build (node count bounds the IP pools)
    try:
        build_cluster(nodes)
    except SimError as exc:
        raise ScenarioError(f"cluster does not build: {exc}") from exc

    events_raw = data.get("events", [])
    _require(isinstance(events_raw, list), "'events' must be a list")
    events: list[Event] = []
    deployed_names: set[str] = set()
    open_flows: set[str] = set()
    all_flow_ids: set[str] = set()
    for pos, entry in enumerate(events_raw):
        where = f"events[{pos}]"
        _require(isinstance(entry, dict) and len(entry) == 1,
                 f"{where}: each event is an object with exactly one key")
        kind, body = next(iter(entry.items()))
        _require(isinstance(body, dict), f"{where}: event body must be an object")
        if kind == "deploy_pod":
            try:
                pod = pod_spec_from_dict(body["pod"])
                pod.validate()
            except (SimError, KeyError, TypeError) as exc:
                raise ScenarioError(f"{where}: invalid pod spec: {exc}") from exc
            expect = body.get("expect", "placed")
            _require(expect in _EXPECTATIONS,
                     f"{where}: expect must be one of {_EXPECTATIONS}")
            deployed_names.add(pod.name)
            events.append(DeployPod(pod=pod, expect=expect))
        elif kind == "teardown_pod":
            pod_name = body.get("pod")
            _require(pod_name in deployed_names,
                     f"{where}: teardown of {pod_name!r} before any deploy")
            events.append(TeardownPod(pod_name=pod_name))
        elif kind == "start_flow":
            flow_id = body.get("flow_id")
            _require(isinstance(flow_id, str) and flow_id != "",
                     f"{where}: start_flow needs a flow_id")
            _require(flow_id not in all_flow_ids,
                     f"{where}: flow id {flow_id!r} reused")
            pod_name = body.get("pod")
            _require(pod_name in deployed_names,
                     f"{where}: flow references undeployed pod {pod_name!r}")
            vf_index = body.get("vf_index", 0)
            _require(isinstance(vf_index, int) and vf_index >= 0,
                     f"{where}: vf_index must be a non-negative integer")
            demand_raw = body.get("demand")
            demand = None if demand_raw is None else parse_gbps(demand_raw, what="demand")
            if demand is not None:
                _require(demand > 0, f"{where}: bounded demand must be > 0")
            all_flow_ids.add(flow_id)
            open_flows.add(flow_id)
            events.append(StartFlow(flow_id=flow_id, pod_name=pod_name,
                                    vf_index=vf_index, demand=demand))
        elif kind == "stop_flow":
            flow_id = body.get("flow_id")
            _require(flow_id in open_flows,
                     f"{where}: stop of flow {flow_id!r} that is not running")
            open_flows.discard(flow_id)
            events.append(StopFlow(flow_id=flow_id))
        elif kind == "inject_failure":
            pod_name = body.get("pod")
            step = body.get("step")
            _require(isinstance(step, int) and step >= 0,
                     f"{where}: step must be a non-negative integer")
            events.append(InjectFailure(pod_name=pod_name, step=step))
        elif kind == "advance":
            iterations = body.get("iterations")
            _require(isinstance(iterations, int) and iterations >= 1,
                     f"{where}: iterations must be >= 1")
            events.append(Advance(iterations=iterations))
        else:
            raise ScenarioError(f"{where}: unknown event kind {kind!r}")
    # injections must target a pod the scenario actually deploys
    for pos, ev in enumerate(events):
        if isinstance(ev, InjectFailure):
            _require(ev.pod_name in deployed_names,
                     f"events[{pos}]: inject_failure targets undeployed pod {ev.pod_name!r}")

    return Scenario(name=data.get("name", name), mode=mode, nodes=nodes, events=events)


@dataclass
class ScenarioResult:
    status: str                 # ok | scenario_error | invariant_violation | unexpected_outcome
    exit_code: int
    scenario_name: str
    mode: str
    seed: Optional[int]
    errors: list[str] = field(default_factory=list)
    placements: list[dict] = field(default_factory=list)
    iterations: int = 0
    state: Optional[ClusterState] = None
    trace: BandwidthTrace = field(default_factory=lambda: BandwidthTrace(rows=[]))

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def artifacts(self) -> Optional[dict[str, str]]:
        """Output files (name -> exact text), only for successful runs."""
        if not self.ok or self.state is None:
            return None
        report = {
            "version": 1,
            "scenario": self.scenario_name,
            "mode": self.mode,
            "seed": self.seed,
            "iterations": self.iterations,
            "placements": self.placements,
        }
        return {
            PLACEMENTS_FILE: json.dumps(report, indent=2) + "\n",
            STATE_FILE: json.dumps(state_to_dict(self.state), indent=2) + "\n",
            TRACE_FILE: self.trace.to_csv(),
        }


class _UnexpectedOutcome(Exception):
    pass


class ScenarioEngine:
    """Single-threaded event loop over one scenario."""

    def __init__(self, scenario: Scenario, mode_override: Optional[Mode] = None,
                 seed: Optional[int] = None,
                 unreserved_weight: Fraction = DEFAULT_UNRESERVED_WEIGHT):
        self.scenario = scenario
        self.mode = mode_override or scenario.mode
        self.seed = seed  # recorded in the report; the engine is deterministic
        self.unreserved_weight = unreserved_weight
        self.state = build_cluster(scenario.nodes)
        self.iteration = 0
        self.live_flows: dict[str, Flow] = {}
        self.rows: list[TraceRow] = []
        self.placements: list[dict] = []
        self.armed_failures: dict[str, int] = {}

    def _result(self, status: str, exit_code: int, errors: list[str]) -> ScenarioResult:
        return ScenarioResult(
            status=status,
            exit_code=exit_code,
            scenario_name=self.scenario.name,
            mode=self.mode.value,
            seed=self.seed,
            errors=errors,
            placements=self.placements,
            iterations=self.iteration,
            state=self.state if status == "ok" else None,
            trace=BandwidthTrace(rows=self.rows),
        )

    def run(self) -> ScenarioResult:
        try:
            for pos, event in enumerate(self.scenario.events):
                self._apply(pos, event)
                check_invariants(self.state)
        except InvariantViolation as exc:
            return self._result("invariant_violation", EXIT_INVARIANT, [str(exc)])
        except _UnexpectedOutcome as exc:
            return self._result("unexpected_outcome", EXIT_UNEXPECTED, [str(exc)])
        except SimError as exc:
            return self._result("scenario_error", EXIT_USAGE, [str(exc)])
        return self._result("ok", EXIT_OK, [])

    def explain(self, pod_name: str) -> str:
        """Replay up to the first deploy of ``pod_name`` and narrate its
        scheduling decision step by step."""
        for pos, event in enumerate(self.scenario.events):
            if isinstance(event, DeployPod) and event.pod.name == pod_name:
                trace = DecisionTrace(pod_name=pod_name)
                self._deploy(pos, event, trace=trace, check_expect=False)
                return _render_trace(trace, self.placements[-1])
            try:
                self._apply(pos, event)
            except _UnexpectedOutcome as exc:
                raise ScenarioError(f"replay failed before {pod_name!r}: {exc}") from exc
            check_invariants(self.state)
        raise ScenarioError(f"pod {pod_name!r} is never deployed in this scenario")

    # -- event handlers ----------------------------------------------------

    def _apply(self, pos: int, event: Event) -> None:
        if isinstance(event, DeployPod):
            self._deploy(pos, event)
        elif isinstance(event, TeardownPod):
            self._teardown(pos, event)
        elif isinstance(event, StartFlow):
            self._start_flow(event)
        elif isinstance(event, StopFlow):
            if event.flow_id not in self.live_flows:
                raise ScenarioError(f"flow {event.flow_id!r} is not running")
            del self.live_flows[event.flow_id]
        elif isinstance(event, InjectFailure):
            self.armed_failures[event.pod_name] = event.step
        elif isinstance(event, Advance):
            self._advance(event.iterations)

    def _deploy(self, pos: int, event: DeployPod,
                trace: Optional[DecisionTrace] = None, check_expect: bool = True) -> None:
        pod = event.pod
        inject = self.armed_failures.pop(pod.name, None)
        entry: dict = {"event": pos, "pod": pod.name, "expected": event.expect}
        try:
            decision = schedule_pod(
                self.state, pod, self.mode,
                inject_failure_step=inject, trace=trace,
            )
        except SetupFailure as exc:
            entry.update(result="setup_failure", reason=str(exc))
        else:
            if decision.placed:
                record = self.state.pods[pod.name]
                entry.update(
                    result="placed",
                    node=decision.node_name,
                    assignment=list(decision.assignment),
                    interfaces=[
                        {
                            "name": iface.name,
                            "vf": iface.vf,
                            "ip": iface.ip,
                            "rate_limit": None if iface.rate_limit is None
                            else gbps_to_json(iface.rate_limit),
                        }
                        for iface in record.network.interfaces
                    ],
                )
            else:
                entry.update(result="rejected", reason=decision.rejected_reason)
        self.placements.append(entry)
        if check_expect and entry["result"] != event.expect:
            detail = entry.get("reason", entry.get("node", ""))
            raise _UnexpectedOutcome(
                f"pod {pod.name}: expected {event.expect}, got {entry['result']}"
                + (f" ({detail})" if detail else "")
            )

    def _teardown(self, pos: int, event: TeardownPod) -> None:
        holding = [f.flow_id for f in self.live_flows.values() if f.pod_name == event.pod_name]
        if holding:
            raise ScenarioError(
                f"teardown of {event.pod_name!r} while flows are running: {holding}"
            )
        cni.teardown_pod(self.state, event.pod_name)
        self.placements.append({"event": pos, "pod": event.pod_name, "result": "torn_down"})

    def _start_flow(self, event: StartFlow) -> None:
        record = self.state.pods.get(event.pod_name)
        if record is None:
            raise ScenarioError(f"flow {event.flow_id}: pod {event.pod_name!r} is not placed")
        if event.vf_index >= len(record.network.interfaces):
            raise ScenarioError(
                f"flow {event.flow_id}: pod {event.pod_name} has no interface "
                f"index {event.vf_index}"
            )
        iface = record.network.interfaces[event.vf_index]
        _, pf_id, _ = iface.vf.split("/")
        self.live_flows[event.flow_id] = Flow(
            flow_id=event.flow_id,
            pod_name=event.pod_name,
            vf_id=iface.vf,
            pf_id=pf_id,
            min_bandwidth=iface.rate_limit if iface.rate_limit is not None else Fraction(0),
            demand=event.demand,
            start_iteration=self.iteration,
            end_iteration=_OPEN_END,
        )

    def _advance(self, iterations: int) -> None:
        for _ in range(iterations):
            if self.live_flows:
                self.rows.extend(
                    allocate_iteration(
                        self.iteration,
                        list(self.live_flows.values()),
                        self.state,
                        self.mode,
                        self.unreserved_weight,
                    )
                )
            self.iteration += 1


def _render_trace(trace: DecisionTrace, entry: dict) -> str:
    lines = [f"pod: {trace.pod_name}", f"mode: {trace.mode}"]
    if trace.request_mins:
        mins = ", ".join(str(m) for m in trace.request_mins)
        lines.append(f"vf requests: {len(trace.request_mins)} (min Gb/s: {mins})")
    else:
        lines.append("vf requests: none (no RDMA annotation)")
    lines.append("core filter (cpu/mem): " + (", ".join(trace.candidates) or "no survivors"))
    if trace.passthrough:
        lines.append("extender: pass-through (no RDMA annotation)")
    elif trace.reports:
        lines.append("inventory:")
        for name, report in trace.reports.items():
            pfs = "; ".join(
                f"{pf.pf_id} {pf.free_bandwidth}/{pf.max_bandwidth} Gb/s free, "
                f"{pf.vfs_free}/{pf.vfs_total} VFs free"
                for pf in report.pfs
            )
            lines.append(f"  {name}: {pfs or 'no eligible PFs'}")
        lines.append("extender verdicts:")
        for name, verdict in trace.verdicts.items():
            lines.append(f"  {name}: {verdict}")
    if trace.chosen is not None and not trace.passthrough and trace.choice_note:
        lines.append(f"node choice: {trace.chosen} ({trace.choice_note})")
    if trace.reserve_attempts > 1:
        lines.append(f"reservation attempts: {trace.reserve_attempts}")
    lines.append(f"decision: {trace.outcome or entry['result']}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Module-level entry points used by the service
# ---------------------------------------------------------------------------

def _coerce_mode(mode) -> Optional[Mode]:
    if mode is None or isinstance(mode, Mode):
        return mode
    try:
        return Mode(mode)
    except ValueError:
        raise ScenarioError(f"unknown mode {mode!r}") from None


def run_scenario_data(data, mode_override=None, seed: Optional[int] = None,
                      name: str = "scenario") -> ScenarioResult:
    scenario = parse_scenario(data, name=name)
    engine = ScenarioEngine(scenario, mode_override=_coerce_mode(mode_override), seed=seed)
    return engine.run()


def explain_scenario_data(data, pod_name: str, mode_override=None,
                          name: str = "scenario") -> str:
    scenario = parse_scenario(data, name=name)
    engine = ScenarioEngine(scenario, mode_override=_coerce_mode(mode_override))
    return engine.explain(pod_name)


def validate_scenario_data(data, name: str = "scenario") -> list[str]:
    """Static validation; returns a list of findings (empty = valid)."""
    try:
        parse_scenario(data, name=name)
    except ScenarioError as exc:
        return [str(exc)]
    return []


def bundled_scenario_names() -> list[str]:
    """Names of the scenario corpus shipped with the package."""
    names = []
    for item in resources.files(__package__).joinpath("scenarios").iterdir():
        if item.name.endswith(".json"):
            names.append(item.name[: -len(".json")])
    return sorted(names)


def load_bundled_scenario(name: str) -> dict:
    path = resources.files(__package__).joinpath("scenarios").joinpath(f"{name}.json")
    if not path.is_file():
        raise ScenarioError(
            f"no bundled scenario {name!r}; available: {', '.join(bundled_scenario_names())}"
        )
    return json.loads(path.read_text())
