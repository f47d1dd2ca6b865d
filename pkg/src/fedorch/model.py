"""Shared domain types for the federation simulator.

Units are fixed across the package: CPU in millicores, memory in mebibytes,
time in integer nanoseconds, bandwidth in integer bytes per second and
energy in joules.

Every type checks its own invariants on construction.  The scenario loader
builds objects inside :func:`lenient` so that broken documents can still be
materialized and reported by :func:`validate_scenario` instead of failing on
the first bad field.
"""

from __future__ import annotations

import contextlib
import contextvars
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterator

_STRICT: contextvars.ContextVar[bool] = contextvars.ContextVar("strict", default=True)


class ValidationError(ValueError):
    def __init__(self, entity: str, problems: list[str]):
        self.entity = entity
        self.problems = problems
        super().__init__(f"{entity}: " + "; ".join(problems))


@contextlib.contextmanager
def lenient() -> Iterator[None]:
    """Suspend construction-time invariant checks."""
    token = _STRICT.set(False)
    try:
        yield
    finally:
        _STRICT.reset(token)


class _Checked:
    def problems(self) -> list[str]:
        return []

    def label(self) -> str:
        return type(self).__name__

    def __post_init__(self) -> None:
        if _STRICT.get():
            found = self.problems()
            if found:
                raise ValidationError(self.label(), found)


class ServiceClass(str, Enum):
    ASSURED = "assured"
    BEST_EFFORT = "best-effort"


class TunnelState(str, Enum):
    NONE = "none"
    PRE_CREATED = "pre_created"
    ON_DEMAND_UP = "on_demand_up"


class Orientation(str, Enum):
    LOWER_IS_BETTER = "lower_is_better"
    HIGHER_IS_BETTER = "higher_is_better"


class PlanStatus(str, Enum):
    DRAFT = "draft"
    TENTATIVE = "tentative"
    COMMITTED = "committed"
    ROLLED_BACK = "rolled_back"


class ConstraintKind(str, Enum):
    LOCALITY = "locality"
    COMPLIANCE = "compliance"
    FRESHNESS = "freshness"


@dataclass(frozen=True)
class NodeSpec(_Checked):
    node_id: str
    cluster_id: str
    cpu_capacity: int
    mem_capacity: int
    node_energy: float = 0.0
    gateway: bool = False
    labels: dict[str, str] = field(default_factory=dict)

    def label(self) -> str:
        return f"node {self.node_id}"

    def problems(self) -> list[str]:
        out = []
        if self.cpu_capacity <= 0 or self.mem_capacity <= 0:
            out.append("capacities must be positive")
        if self.node_energy < 0:
            out.append("node energy must be non-negative")
        return out


@dataclass(frozen=True)
class LinkSpec(_Checked):
    """Directed intra-cluster link between two nodes."""

    src_node: str
    dst_node: str
    latency_ns: float
    bandwidth_bps: int
    loss_rate: float = 0.0
    link_energy: float = 0.0
    failures: int = 0

    @property
    def key(self) -> tuple[str, str]:
        return (self.src_node, self.dst_node)

    def label(self) -> str:
        return f"link {self.src_node}->{self.dst_node}"

    def problems(self) -> list[str]:
        out = []
        if self.latency_ns < 0:
            out.append("latency must be non-negative")
        if not 0.0 <= self.loss_rate <= 1.0:
            out.append("loss rate must lie in [0, 1]")
        if self.src_node == self.dst_node:
            out.append("link endpoints must differ")
        if self.bandwidth_bps <= 0:
            out.append("bandwidth must be positive")
        return out


@dataclass
class ClusterState(_Checked):
    cluster_id: str
    nodes: list[NodeSpec]
    intra_links: list[LinkSpec] = field(default_factory=list)
    feature_vector: tuple[float, ...] = ()
    compliance_score: float = 1.0
    # node_id -> [cpu_used, mem_used]
    allocations: dict[str, list[int]] = field(default_factory=dict)
    cordoned: set[str] = field(default_factory=set)

    def label(self) -> str:
        return f"cluster {self.cluster_id}"

    def problems(self) -> list[str]:
        out = []
        gateways = [n for n in self.nodes if n.gateway]
        if len(gateways) != 1:
            out.append(f"one gateway per cluster (found {len(gateways)})")
        if not 0.0 <= self.compliance_score <= 1.0:
            out.append("compliance score must lie in [0, 1]")
        caps = {n.node_id: n for n in self.nodes}
        for node_id, (cpu, mem) in self.allocations.items():
            node = caps.get(node_id)
            if node is None:
                out.append(f"allocation on unknown node {node_id}")
            elif cpu > node.cpu_capacity or mem > node.mem_capacity:
                out.append(f"allocation exceeds capacity on {node_id}")
        return out

    @property
    def gateway(self) -> NodeSpec:
        return next(n for n in self.nodes if n.gateway)

    def node(self, node_id: str) -> NodeSpec:
        for n in self.nodes:
            if n.node_id == node_id:
                return n
        raise KeyError(node_id)


@dataclass
class InterClusterLink(_Checked):
    cluster_a: str
    cluster_b: str
    service_class: ServiceClass = ServiceClass.ASSURED
    latency_ns: float = 0.0
    bandwidth_bps: int = 1
    bandwidth_reserved: int = 0
    tunnel: TunnelState = TunnelState.NONE
    overlay_rtt_ns: float = 0.0
    overlay_loss: float = 0.0
    # Underlay loss and gateway-to-gateway energy state; not in the original
    # field list but needed for loss/energy cost maps.
    loss_rate: float = 0.0
    link_energy: float = 0.0
    failures: int = 0

    def __post_init__(self) -> None:
        if self.cluster_a > self.cluster_b:
            self.cluster_a, self.cluster_b = self.cluster_b, self.cluster_a
        self.service_class = ServiceClass(self.service_class)
        self.tunnel = TunnelState(self.tunnel)
        super().__post_init__()

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.cluster_a, self.cluster_b, self.service_class.value)

    @property
    def pair(self) -> tuple[str, str]:
        return (self.cluster_a, self.cluster_b)

    @property
    def available_bps(self) -> int:
        return self.bandwidth_bps - self.bandwidth_reserved

    def other(self, cluster_id: str) -> str:
        return self.cluster_b if cluster_id == self.cluster_a else self.cluster_a

    def label(self) -> str:
        return f"inter-link {self.cluster_a}<->{self.cluster_b}/{self.service_class.value}"

    def problems(self) -> list[str]:
        out = []
        if self.cluster_a == self.cluster_b:
            out.append("inter-cluster link endpoints must differ")
        if self.latency_ns < 0:
            out.append("latency must be non-negative")
        if self.bandwidth_bps <= 0:
            out.append("bandwidth must be positive")
        if not 0 <= self.bandwidth_reserved <= self.bandwidth_bps:
            out.append("reserved bandwidth exceeds capacity")
        if not 0.0 <= self.loss_rate <= 1.0:
            out.append("loss rate must lie in [0, 1]")
        return out


@dataclass(frozen=True)
class ConstraintRef:
    kind: ConstraintKind
    datastore: str | None = None
    threshold: float | None = None
    max_age_s: float | None = None


@dataclass(frozen=True)
class SoftPreferences:
    anti_affinity: tuple[str, ...] = ()
    min_score: float | None = None

    def __bool__(self) -> bool:
        return bool(self.anti_affinity) or self.min_score is not None


@dataclass(frozen=True)
class Workload(_Checked):
    workload_id: str
    cpu_req: int
    mem_req: int
    data_constraints: tuple[ConstraintRef, ...] = ()
    soft_preferences: SoftPreferences = SoftPreferences()

    def label(self) -> str:
        return f"workload {self.workload_id}"

    def problems(self) -> list[str]:
        if self.cpu_req <= 0 or self.mem_req <= 0:
            return ["requests must be positive"]
        return []


@dataclass(frozen=True)
class Channel(_Checked):
    channel_id: str
    src_workload: str
    dst_workload: str
    latency_bound_ns: float
    bandwidth_req_bps: int = 0
    service_class: ServiceClass = ServiceClass.ASSURED

    def __post_init__(self) -> None:
        object.__setattr__(self, "service_class", ServiceClass(self.service_class))
        super().__post_init__()

    def label(self) -> str:
        return f"channel {self.channel_id}"

    def problems(self) -> list[str]:
        out = []
        if self.src_workload == self.dst_workload:
            out.append("channel endpoints must be distinct workloads")
        if self.latency_bound_ns < 0 or self.bandwidth_req_bps < 0:
            out.append("bounds must be non-negative")
        return out


@dataclass(frozen=True)
class PerformanceProfile(_Checked):
    name: str
    weights: dict[str, float]
    orientation: dict[str, Orientation]

    def label(self) -> str:
        return f"profile {self.name}"

    def problems(self) -> list[str]:
        out = []
        if any(w < 0 for w in self.weights.values()):
            out.append("weights must be non-negative")
        if not any(w > 0 for w in self.weights.values()):
            out.append("at least one weight must be nonzero")
        missing = sorted(set(self.weights) - set(self.orientation))
        if missing:
            out.append(f"metrics without orientation: {', '.join(missing)}")
        return out


@dataclass(frozen=True)
class ApplicationGroup(_Checked):
    group_id: str
    workloads: tuple[Workload, ...]
    channels: tuple[Channel, ...] = ()
    profile: PerformanceProfile | None = None
    neighborhood_id: str | None = None

    def label(self) -> str:
        return f"application {self.group_id}"

    def problems(self) -> list[str]:
        out = []
        ids = [w.workload_id for w in self.workloads]
        if len(set(ids)) != len(ids):
            out.append("duplicate workload ids")
        if not ids:
            out.append("application has no workloads")
        known = set(ids)
        for ch in self.channels:
            for end in (ch.src_workload, ch.dst_workload):
                if end not in known:
                    out.append(f"unresolved workload {end} in channel {ch.channel_id}")
        return out

    def workload(self, workload_id: str) -> Workload:
        for w in self.workloads:
            if w.workload_id == workload_id:
                return w
        raise KeyError(workload_id)

    def channels_of(self, workload_id: str) -> list[Channel]:
        return [c for c in self.channels
                if workload_id in (c.src_workload, c.dst_workload)]


@dataclass(frozen=True)
class Neighborhood(_Checked):
    neighborhood_id: str
    application_group: str
    members: frozenset[str]
    bound_k: int
    revision: int = 0
    spans_classes: bool = False

    def label(self) -> str:
        return f"neighborhood {self.neighborhood_id}"

    def problems(self) -> list[str]:
        out = []
        if self.bound_k < 1:
            out.append("bound must be a positive integer")
        if not self.members:
            out.append("neighborhood has no members")
        if len(self.members) > self.bound_k:
            out.append("membership exceeds bound")
        return out


@dataclass(frozen=True)
class Recommendation(_Checked):
    scope: str  # "node" | "cluster"
    target_id: str
    score: float
    stability: float
    profile: str
    timestamp: int = 0
    cluster_id: str | None = None

    def problems(self) -> list[str]:
        out = []
        if self.scope not in ("node", "cluster"):
            out.append("scope must be node or cluster")
        if not 0.0 <= self.score <= 1.0 or not 0.0 <= self.stability <= 1.0:
            out.append("score and stability must lie in [0, 1]")
        return out


@dataclass(frozen=True)
class MetricWindow(_Checked):
    metric_name: str
    subject_id: str
    ema_value: float = 0.0
    alpha: float = 0.2
    samples_seen: int = 0

    def problems(self) -> list[str]:
        if not 0.0 < self.alpha <= 1.0:
            return ["alpha must lie in (0, 1]"]
        return []


@dataclass(frozen=True)
class ChannelBinding:
    channel_id: str
    src: tuple[str, str]
    dst: tuple[str, str]
    # (cluster_a, cluster_b, service_class) of the single inter-cluster link,
    # None for intra-cluster channels.
    link: tuple[str, str, str] | None
    latency_ns: float
    bandwidth_bps: int

    @property
    def cross_cluster(self) -> bool:
        return self.link is not None


@dataclass
class AssignmentPlan:
    group_id: str
    neighborhood_id: str | None = None
    placements: dict[str, tuple[str, str]] = field(default_factory=dict)
    channel_bindings: dict[str, ChannelBinding] = field(default_factory=dict)
    status: PlanStatus = PlanStatus.DRAFT
    journal: list[tuple[Any, ...]] = field(default_factory=list)
    unplaced: list[str] = field(default_factory=list)
    visit_order: list[str] = field(default_factory=list)
    tentative: dict[str, str] = field(default_factory=dict)

    def clusters(self) -> list[str]:
        """Clusters hosting placements, in visit order."""
        used = {c for c, _ in self.placements.values()}
        ordered = [c for c in self.visit_order if c in used]
        return ordered + sorted(used - set(ordered))

    def copy(self) -> "AssignmentPlan":
        return AssignmentPlan(
            group_id=self.group_id,
            neighborhood_id=self.neighborhood_id,
            placements=dict(self.placements),
            channel_bindings=dict(self.channel_bindings),
            status=self.status,
            journal=list(self.journal),
            unplaced=list(self.unplaced),
            visit_order=list(self.visit_order),
            tentative=dict(self.tentative),
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "group_id": self.group_id,
            "neighborhood_id": self.neighborhood_id,
            "status": self.status.value,
            "placements": {w: list(p) for w, p in sorted(self.placements.items())},
            "channel_bindings": {
                cid: {
                    "src": list(b.src),
                    "dst": list(b.dst),
                    "link": list(b.link) if b.link else None,
                    "latency_ns": b.latency_ns,
                    "bandwidth_bps": b.bandwidth_bps,
                }
                for cid, b in sorted(self.channel_bindings.items())
            },
            "unplaced": sorted(self.unplaced),
        }


@dataclass(frozen=True)
class Datastore:
    name: str
    cluster_id: str
    freshness_s: float = 0.0


@dataclass(frozen=True)
class Violation:
    entity: str
    rule: str

    def __str__(self) -> str:
        return f"{self.entity}: {self.rule}"


@dataclass
class Scenario:
    name: str
    clusters: list[ClusterState]
    inter_links: list[InterClusterLink] = field(default_factory=list)
    applications: list[ApplicationGroup] = field(default_factory=list)
    datastores: list[Datastore] = field(default_factory=list)
    events: list[dict[str, Any]] = field(default_factory=list)
    parameters: dict[str, Any] = field(default_factory=dict)
    tunnel_mode: str = "on_demand"
    report: dict[str, Any] = field(default_factory=dict)


EVENT_KINDS = frozenset({
    "metric_sample", "deploy_request", "node_fail", "node_recover",
    "link_degrade", "link_recover", "hub_disconnect", "hub_reconnect",
    "exec_fault", "adaptation_check",
})


def _problems(obj: _Checked) -> list[Violation]:
    return [Violation(obj.label(), p) for p in obj.problems()]


def validate_scenario(scenario: Scenario) -> list[Violation]:
    """Return every invariant violation in ``scenario``; empty means valid."""
    out: list[Violation] = []
    cluster_ids: set[str] = set()
    node_owner: dict[str, str] = {}
    widths = set()
    for cl in scenario.clusters:
        if cl.cluster_id in cluster_ids:
            out.append(Violation(cl.label(), "duplicate cluster id"))
        cluster_ids.add(cl.cluster_id)
        out.extend(_problems(cl))
        widths.add(len(cl.feature_vector))
        for n in cl.nodes:
            out.extend(_problems(n))
            if n.cluster_id != cl.cluster_id:
                out.append(Violation(n.label(), f"declared cluster {n.cluster_id} "
                                                f"differs from owner {cl.cluster_id}"))
            if n.node_id in node_owner:
                out.append(Violation(n.label(), "duplicate node id"))
            node_owner[n.node_id] = cl.cluster_id
        local = {n.node_id for n in cl.nodes}
        for ln in cl.intra_links:
            out.extend(_problems(ln))
            for end in (ln.src_node, ln.dst_node):
                if end not in local:
                    out.append(Violation(ln.label(), f"unresolved node {end}"))
    if len(widths) > 1:
        out.append(Violation("federation", "feature vector length differs across clusters"))

    seen_links = set()
    for ln in scenario.inter_links:
        out.extend(_problems(ln))
        for end in (ln.cluster_a, ln.cluster_b):
            if end not in cluster_ids:
                out.append(Violation(ln.label(), f"unresolved cluster {end}"))
        if ln.key in seen_links:
            out.append(Violation(ln.label(), "duplicate inter-cluster link"))
        seen_links.add(ln.key)

    app_ids = set()
    for app in scenario.applications:
        if app.group_id in app_ids:
            out.append(Violation(app.label(), "duplicate application id"))
        app_ids.add(app.group_id)
        out.extend(_problems(app))
        for w in app.workloads:
            out.extend(_problems(w))
            for other in w.soft_preferences.anti_affinity:
                if other not in {x.workload_id for x in app.workloads}:
                    out.append(Violation(w.label(), f"unresolved workload {other} "
                                                    "in anti-affinity"))
            for c in w.data_constraints:
                if c.kind in (ConstraintKind.LOCALITY, ConstraintKind.FRESHNESS) \
                        and not c.datastore:
                    out.append(Violation(w.label(), f"{c.kind.value} constraint "
                                                    "needs a datastore"))
        for ch in app.channels:
            out.extend(_problems(ch))
        if app.profile is not None:
            out.extend(_problems(app.profile))

    if scenario.tunnel_mode not in ("pre_created", "on_demand"):
        out.append(Violation("federation", f"unknown tunnel mode {scenario.tunnel_mode!r}"))

    for ds in scenario.datastores:
        if ds.cluster_id not in cluster_ids:
            out.append(Violation(f"datastore {ds.name}", f"unresolved cluster {ds.cluster_id}"))

    for i, ev in enumerate(scenario.events):
        out.extend(_event_problems(i, ev, cluster_ids, node_owner, seen_links, app_ids))
    return out


def _event_problems(i, ev, cluster_ids, node_owner, links, app_ids) -> list[Violation]:
    label = f"event[{i}]"
    kind = ev.get("kind")
    if kind not in EVENT_KINDS:
        return [Violation(label, f"unknown event kind {kind!r}")]
    out = []
    if ev.get("at_ns", 0) < 0:
        out.append(Violation(label, "event time must be non-negative"))
    if kind in ("node_fail", "node_recover") and ev.get("node") not in node_owner:
        out.append(Violation(label, f"unresolved node {ev.get('node')}"))
    if kind in ("exec_fault",) and ev.get("cluster") not in cluster_ids:
        out.append(Violation(label, f"unresolved cluster {ev.get('cluster')}"))
    if kind in ("hub_disconnect", "hub_reconnect"):
        for c in ev.get("clusters", []):
            if c not in cluster_ids:
                out.append(Violation(label, f"unresolved cluster {c}"))
    if kind == "deploy_request" and ev.get("app") not in app_ids:
        out.append(Violation(label, f"unresolved application {ev.get('app')}"))
    if kind in ("link_degrade", "link_recover"):
        target = ev.get("link") or []
        if len(target) == 2 and all(t in cluster_ids for t in target):
            pair = tuple(sorted(target))
            if not any(k[:2] == pair for k in links):
                out.append(Violation(label, f"no inter-cluster link {pair[0]}<->{pair[1]}"))
        elif len(target) == 2 and all(t in node_owner for t in target):
            pass
        else:
            out.append(Violation(label, f"unresolved link {target}"))
    return out
