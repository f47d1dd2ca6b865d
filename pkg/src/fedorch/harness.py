"""Deterministic discrete-event driver for the full orchestration lifecycle."""

from __future__ import annotations

import copy
import hashlib
import heapq
import itertools
import json
import math
import random
from collections import defaultdict, deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable

from . import cnc, mdm, pdlc
from .infra import Federation
from .model import (
    ApplicationGroup, AssignmentPlan, Neighborhood, PlanStatus,
    Recommendation, Scenario, validate_scenario,
)
from .netma import (
    MONITOR_METRICS, CostMapService, LinearEnergyModel, NetworkMonitor, TunnelManager,
    channel_hops, link_label,
)
from .store import RecordNotFound, RecordStore
from .swm import (
    DEFAULT_HYSTERESIS, MigrationRejected, SchedulingFailure, execute, migrate,
    plan_application, release_plan, should_migrate, validate_channel,
)
from .validator import capacity_violations

TRACE_SCHEMA = "fedorch.trace/1"
SECOND = 1_000_000_000
HUB = "hub"

DEFAULTS: dict[str, Any] = {
    "alpha": 0.2,
    "k": cnc.DEFAULT_K,
    "partition_threshold": 0.5,
    "hysteresis": DEFAULT_HYSTERESIS,
    "sample_period_s": 1,
    "adaptation_period_s": 10,
    "horizon_s": None,
    "forecast_weight": pdlc.DEFAULT_FORECAST_WEIGHT,
    "forecast_horizon_min": 5,
    "compliance_threshold": mdm.DEFAULT_COMPLIANCE_THRESHOLD,
    "energy_per_byte": 1e-6,
    "energy_per_packet": 1e-4,
    "tunnel_overhead_ns": 0.0,
    "latency_jitter": 0.0,
    "packets_per_sample": 4,
    "mdm_instances": 1,
    "idle_power_fraction": 0.4,
    "record_metrics": True,
}

# metric fed to the node-level profile scores
NODE_METRICS = ("cpu_util", "mem_util", "free_cpu", "node_energy", "network_energy",
                "gateway_latency_ns", "net_failures")


class ScenarioInvalid(ValueError):
    def __init__(self, violations):
        self.violations = violations
        super().__init__("; ".join(str(v) for v in violations))


class StageFailure(RuntimeError):
    def __init__(self, stage: str, reason: str):
        self.stage = stage
        self.reason = reason
        super().__init__(f"{stage}: {reason}")


@dataclass(order=True)
class SimEvent:
    time: int
    seq: int
    kind: str = field(compare=False)
    payload: dict = field(compare=False, default_factory=dict)


def _default(o):
    if isinstance(o, Enum):
        return o.value
    if isinstance(o, (set, frozenset)):
        return sorted(o)
    if isinstance(o, float) and not math.isfinite(o):
        return str(o)
    raise TypeError(f"not serializable: {type(o).__name__}")


def canonical(doc: Any) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), default=_default,
                      allow_nan=False)


def _finite(x: float) -> float | str:
    return x if math.isfinite(x) else "inf"


@dataclass
class AppState:
    app: ApplicationGroup
    state: str = "pending"  # pending | queued | committed | failed
    neighborhood: Neighborhood | None = None
    plan: AssignmentPlan | None = None
    desired: AssignmentPlan | None = None
    eligible: dict[str, set[str]] = field(default_factory=dict)
    phases: list[dict] = field(default_factory=list)
    failure: dict | None = None
    migrations: int = 0
    rollbacks: int = 0
    conflicts: int = 0


@dataclass
class RunResult:
    trace: list[dict]
    metrics: list[tuple]
    status: dict[str, dict]
    summary: dict[str, Any]
    violations: list[str]
    sim: "Simulation"

    def trace_bytes(self) -> bytes:
        return trace_to_jsonl(self.trace)


def trace_to_jsonl(trace: list[dict]) -> bytes:
    return b"".join(canonical(r).encode() + b"\n" for r in trace)


class Simulation:
    def __init__(self, scenario: Scenario, seed: int = 0):
        violations = validate_scenario(scenario)
        if violations:
            raise ScenarioInvalid(violations)
        self.scenario = copy.deepcopy(scenario)
        self.seed = seed
        self.params = {**DEFAULTS, **self.scenario.parameters}
        p = self.params
        self.rng = random.Random(seed)
        self.federation = Federation(self.scenario.clusters, self.scenario.inter_links)
        self.base_bandwidth = {k: ln.bandwidth_bps
                               for k, ln in self.federation.inter_links.items()}
        self.base_intra_bw = {ln.key: ln.bandwidth_bps
                              for c in self.federation.clusters.values()
                              for ln in c.intra_links}
        self.monitor = NetworkMonitor(
            self.federation, alpha=p["alpha"],
            energy_model=LinearEnergyModel(p["energy_per_byte"], p["energy_per_packet"]),
            overhead_ns=p["tunnel_overhead_ns"], packets_per_sample=p["packets_per_sample"],
            jitter=p["latency_jitter"], rng=self.rng)
        self.tunnels = TunnelManager(self.federation, self.scenario.tunnel_mode)
        self.cost_maps = CostMapService()
        self.store = RecordStore()
        for kind, typ in (("partitioning", cnc.Partitioning), ("neighborhood", Neighborhood),
                          ("recommendation", Recommendation), ("bid", pdlc.Bid),
                          ("plan", AssignmentPlan), ("placement", dict),
                          ("summary", dict), ("status", dict)):
            self.store.register(kind, typ)
        self.mdm = mdm.MdmDirectory(p["mdm_instances"])
        self.connectors = {k: mdm.Connector(f"{k}-connector", k)
                           for k in ("compliance", "kubernetes", "metrics")}
        self.mdm_dirty = True

        self.apps = {a.group_id: AppState(a) for a in self.scenario.applications}
        self.partitioning: cnc.Partitioning | None = None
        self.connectivity = {c: "connected" for c in sorted(self.federation.clusters)}
        self.outbox: dict[str, list[tuple]] = defaultdict(list)
        self.queued_deploys: list[str] = []
        self.partition_windows: list[list] = []
        self.armed_faults: set[str] = set()
        self.history: dict[tuple[str, str], deque] = {}
        self.node_net_energy: dict[str, float] = {}
        self.flow_node_energy: dict[tuple[str, str], float] = {}
        self.summaries: dict[str, dict] = {}
        self.hub_cache: dict[str, dict] = {}

        self.now = 0
        self.trace: list[dict] = []
        self.metrics: list[tuple] = []
        self.violations: list[str] = []
        self._queue: list[SimEvent] = []
        self._seq = itertools.count()
        self._trace_seq = itertools.count()

    # trace ----------------------------------------------------------------

    def record(self, kind: str, actor: str, payload: dict | None = None) -> dict:
        text = canonical(payload or {})
        rec = {
            "seq": next(self._trace_seq),
            "t": self.now,
            "kind": kind,
            "actor": actor,
            "payload": json.loads(text),
            "digest": hashlib.sha256(text.encode()).hexdigest()[:16],
        }
        self.trace.append(rec)
        return rec

    # store access with hub/cluster partition semantics ---------------------

    def connected(self, cluster_id: str) -> bool:
        return self.connectivity[cluster_id] == "connected"

    def hub_put(self, kind: str, key: str, value: Any) -> None:
        self.store.put(kind, key, value, writer=HUB, scope=HUB, actor=HUB)

    def send(self, cluster_id: str, kind: str, key: str, value: Any) -> None:
        """Hub to cluster dissemination; held back while partitioned."""
        if self.connected(cluster_id):
            self.store.put(kind, key, value, writer=HUB, scope=cluster_id, actor=HUB)
        else:
            self.outbox[cluster_id].append((kind, key, value))

    def local_put(self, cluster_id: str, kind: str, key: str, value: Any,
                  writer: str | None = None) -> None:
        self.store.put(kind, key, value, writer=writer or f"agent:{cluster_id}",
                       scope=cluster_id, actor=cluster_id)

    def hub_read(self, cluster_id: str, kind: str, key: str) -> Any:
        if not self.connected(cluster_id):
            return None
        try:
            return self.store.get(kind, key, scope=cluster_id, actor=HUB)
        except RecordNotFound:
            return None

    # events -----------------------------------------------------------------

    def push(self, time: int, kind: str, payload: dict | None = None) -> None:
        heapq.heappush(self._queue, SimEvent(int(time), next(self._seq), kind, payload or {}))

    def horizon(self) -> int:
        if self.params["horizon_s"] is not None:
            return int(self.params["horizon_s"] * SECOND)
        if not self.scenario.events:
            return 0
        last = max(int(e.get("at_ns", 0)) for e in self.scenario.events)
        return last + 2 * int(self.params["adaptation_period_s"] * SECOND)

    def run(self) -> RunResult:
        self.install()
        for ev in self.scenario.events:
            self.push(ev.get("at_ns", 0), ev["kind"],
                      {k: v for k, v in ev.items() if k not in ("kind", "at_ns")})
        end = self.horizon()
        sample = int(self.params["sample_period_s"] * SECOND)
        adapt = int(self.params["adaptation_period_s"] * SECOND)
        t = sample
        while t <= end:
            self.push(t, "metric_sample")
            if t % adapt == 0:
                self.push(t, "adaptation_check")
            t += sample
        while self._queue:
            ev = heapq.heappop(self._queue)
            self.now = ev.time
            self.dispatch(ev)
            self.check_invariants(ev)
        return self.finish()

    def dispatch(self, ev: SimEvent) -> None:
        p = ev.payload
        if ev.kind == "metric_sample":
            self.sample()
        elif ev.kind == "adaptation_check":
            self.adaptation_tick()
        elif ev.kind == "deploy_request":
            self.record("deploy_request", HUB, {"app": p["app"]})
            self.deploy_application(p["app"])
        elif ev.kind == "hub_disconnect":
            self.partition_hub(p.get("clusters", []))
        elif ev.kind == "hub_reconnect":
            self.heal_hub(p.get("clusters", []))
        else:
            self.inject_fault(ev.kind, p)

    def check_invariants(self, ev: SimEvent) -> None:
        problems = capacity_violations(self.federation) + self.tunnels.inconsistencies()
        if problems:
            self.violations.extend(f"t={self.now} after {ev.kind}: {x}" for x in problems)
            self.record("invariant_violation", HUB, {"after": ev.kind, "problems": problems})

    # install ------------------------------------------------------------------

    def install(self) -> None:
        fed = self.federation
        for cid in sorted(fed.clusters):
            self.record("install", cid, {
                "components": ["acm-agent", "netma", "pdlc", "swm-agent", "mdm-connector"],
                "nodes": len(fed.clusters[cid].nodes)})
        up = self.tunnels.install()
        self.record("tunnels_installed", HUB, {
            "mode": self.scenario.tunnel_mode, "up": [link_label(k) for k in up]})
        features = {cid: c.feature_vector or [0.0] for cid, c in fed.clusters.items()}
        self.partitioning = cnc.partition_clusters(features, self.params["partition_threshold"])
        self.hub_put("partitioning", "current", self.partitioning)
        self.record("partitioned", HUB, {"generation": self.partitioning.generation,
                                         "classes": [sorted(c) for c in self.partitioning.classes]})
        self.sync_mdm()
        self.sample(install=True)

    # monitoring ---------------------------------------------------------------

    def flows(self) -> list[tuple[str, list]]:
        out = []
        for aid, st in sorted(self.apps.items()):
            if st.state != "committed":
                continue
            for cid, b in sorted(st.plan.channel_bindings.items()):
                out.append((f"{aid}/{cid}", channel_hops(self.federation, b)))
        return out

    def node_metrics(self, cluster_id: str) -> dict[str, dict[str, float]]:
        fed = self.federation
        cluster = fed.clusters[cluster_id]
        idle = self.params["idle_power_fraction"]
        out = {}
        for node in cluster.nodes:
            n = node.node_id
            if n in cluster.cordoned:
                continue
            cpu, mem = cluster.allocations[n]
            util = cpu / node.cpu_capacity
            gw = fed.latency_to_gateway(n)
            out[n] = {
                "cpu_util": util,
                "mem_util": mem / node.mem_capacity,
                "free_cpu": float(node.cpu_capacity - cpu),
                "node_energy": node.node_energy * (idle + (1 - idle) * util),
                "network_energy": self.node_net_energy.get(n, 0.0),
                "gateway_latency_ns": gw if math.isfinite(gw) else 1e12,
                "net_failures": float(self.monitor.node_failures[n] + sum(
                    ln.failures for ln in cluster.intra_links if ln.src_node == n)),
            }
        return out

    def publish_summary(self, cluster_id: str) -> None:
        nodes = self.node_metrics(cluster_id)
        summary = {m: (math.fsum(v[m] for v in nodes.values()) / len(nodes) if nodes else 0.0)
                   for m in NODE_METRICS}
        summary["schedulable_nodes"] = len(nodes)
        self.summaries[cluster_id] = summary
        self.local_put(cluster_id, "summary", cluster_id, summary)

    def sample(self, install: bool = False) -> None:
        report = self.monitor.sample(self.now, self.flows())
        alpha = self.params["alpha"]
        for n, e in report.node_network_energy.items():
            old = self.node_net_energy.get(n)
            self.node_net_energy[n] = e if old is None else alpha * e + (1 - alpha) * old
        for flow, by_node in report.flow_node_energy.items():
            for n, e in by_node.items():
                old = self.flow_node_energy.get((flow, n))
                self.flow_node_energy[(flow, n)] = e if old is None else \
                    alpha * e + (1 - alpha) * old
        t_s = self.now / SECOND
        for cid in sorted(self.federation.clusters):
            for n, vals in self.node_metrics(cid).items():
                for m, v in vals.items():
                    self.history.setdefault((n, m), deque(maxlen=12)).append((t_s, v))
            self.publish_summary(cid)
        if self.params["record_metrics"]:
            wanted = set(self.scenario.report.get("metrics", MONITOR_METRICS))
            self.metrics.extend((self.now, m, s, v) for m, s, v in report.rows if m in wanted)
        self.record("metric_sample", HUB if install else "netma", {
            "link_energy": dict(sorted(report.link_energy.items())),
            "flow_energy": dict(sorted(report.flow_energy.items())),
        })

    # metadata ---------------------------------------------------------------

    def sync_mdm(self) -> None:
        if not self.mdm_dirty:
            return
        fed = self.federation
        snaps = {
            "compliance": mdm.compliance_snapshot(
                {cid: c.compliance_score for cid, c in fed.clusters.items()}),
            "kubernetes": mdm.kubernetes_snapshot(
                [(c, n) for n, c in fed.node_cluster.items()],
                [(c, aid, wid, node) for aid, st in self.apps.items()
                 if st.state == "committed" for wid, (c, node) in st.plan.placements.items()]),
            "metrics": mdm.metrics_snapshot(
                [(d.cluster_id, d.name, d.freshness_s) for d in self.scenario.datastores]),
        }
        count = 0
        for kind in ("compliance", "kubernetes", "metrics"):
            events = self.connectors[kind].sync(snaps[kind])
            self.mdm.publish(events)
            count += len(events)
        self.mdm_dirty = False
        if count:
            self.record("mdm_sync", "mdm", {"events": count})

    def eligibility(self, app: ApplicationGroup, neighborhood_id: str
                    ) -> tuple[dict[str, set[str]], list[tuple[str, set[str]]]]:
        """Per-workload eligible clusters and the app-level selection filter."""
        self.mdm.assign(neighborhood_id)
        every = set(self.federation.clusters)
        eligible: dict[str, set[str]] = {}
        for w in app.workloads:
            found = self.mdm.query(neighborhood_id, w, self.params["compliance_threshold"])
            if not found:
                continue
            try:
                eligible[w.workload_id] = cnc.eligible_clusters(every, found)
            except cnc.SelectionError as exc:
                raise cnc.SelectionError(f"workload {w.workload_id}: {exc}",
                                         exc.constraint) from None
        union = set().union(*eligible.values()) if eligible else every
        if len(eligible) < len(app.workloads):
            union = every
        return eligible, [("data", union)]

    # scoring ----------------------------------------------------------------

    def cluster_scores(self, app: ApplicationGroup) -> dict[str, float]:
        """Hub view of per-cluster scores from cluster summaries."""
        for cid in sorted(self.federation.clusters):
            s = self.hub_read(cid, "summary", cid)
            if s is not None:
                self.hub_cache[cid] = s
        raw = {cid: {m: s[m] for m in NODE_METRICS}
               for cid, s in self.hub_cache.items() if s.get("schedulable_nodes")}
        scores = {cid: c.compliance_score for cid, c in self.federation.clusters.items()}
        profile = app.profile
        if raw and profile is not None:
            orient = {m: profile.orientation[m] for m in profile.weights}
            scores.update(pdlc.score(profile, pdlc.normalize(raw, orient)))
        return scores

    def forecasts(self, members: Iterable[str], metrics_used: Iterable[str]
                  ) -> dict[str, dict[str, float]]:
        fc = pdlc.LinearTrendForecaster()
        horizon = self.params["forecast_horizon_min"]
        out: dict[str, dict[str, float]] = {}
        for cid in sorted(members):
            for node in self.federation.clusters[cid].nodes:
                for m in metrics_used:
                    series = self.history.get((node.node_id, m))
                    if series and len(series) >= 2:
                        f = fc.predict(list(series), horizon)
                        lo = 0.0
                        hi = 1.0 if m.endswith("_util") else math.inf
                        out.setdefault(node.node_id, {})[m] = min(max(f.value, lo), hi)
        return out

    def recommendations(self, st: AppState, members: Iterable[str] | None = None,
                        exchange: bool = True) -> list[Recommendation]:
        """Per-cluster PDLC scoring plus the bid auction over the neighborhood."""
        app = st.app
        nh = st.neighborhood
        if members is not None:
            nh = Neighborhood(nh.neighborhood_id, nh.application_group, frozenset(members),
                              max(nh.bound_k, len(members)), nh.revision)
        profile = app.profile
        metrics = {cid: self.node_metrics(cid) for cid in sorted(nh.members)}
        forecasts = self.forecasts(nh.members, profile.weights)
        min_cpu = min(w.cpu_req for w in app.workloads)

        def feasible(cand: tuple[str, str]) -> bool:
            return self.federation.free(cand[1])[0] >= min_cpu

        recs, bids = pdlc.recommend(nh, profile, metrics, forecasts,
                                    self.params["forecast_weight"], feasible, self.now)
        if exchange:
            for r in recs:
                if r.scope == "node":
                    self.local_put(r.cluster_id, "recommendation", f"{app.group_id}/{r.target_id}",
                                   r, writer=f"pdlc:{r.cluster_id}")
            for b in bids:
                self.local_put(b.cluster_id, "bid", app.group_id, b, writer=f"pdlc:{b.cluster_id}")
                self.hub_read(b.cluster_id, "bid", app.group_id)
                self.record("message", b.cluster_id, {
                    "record": "Bid", "to": HUB, "app": app.group_id,
                    "value": b.value, "masked": b.masked})
            for r in recs:
                if r.scope == "cluster":
                    self.store.put("recommendation", f"{app.group_id}/{r.target_id}", r,
                                   writer="pdlc:auction", scope=HUB, actor=HUB)
                    self.record("message", HUB, {
                        "record": "Recommendation", "to": r.target_id, "app": app.group_id,
                        "score": r.score, "stability": r.stability})
        return recs

    # deployment pipeline ----------------------------------------------------

    def deploy_application(self, app_id: str, replan: bool = False) -> bool:
        st = self.apps[app_id]
        app = st.app
        stage = "cam_validate"
        try:
            problems = app.problems() + [p for w in app.workloads for p in w.problems()] + \
                [p for c in app.channels for p in c.problems()]
            if app.profile is None:
                problems.append("no performance profile")
            if problems:
                raise StageFailure(stage, "; ".join(problems))
            self.stage_ok(st, stage)

            stage = "neighborhood"
            revision = st.neighborhood.revision + 1 if st.neighborhood else 0
            eligible, constraints = self.eligibility(app, f"{app_id}/nh{revision}")
            scores = self.cluster_scores(app)
            if replan and st.neighborhood is not None:
                nh = cnc.reevaluate_neighborhood(st.neighborhood, app, self.partitioning,
                                                 scores, constraints,
                                                 cover=list(eligible.values()))
            else:
                nh = cnc.select_neighborhood(app, self.partitioning, scores,
                                             self.params["k"], constraints, revision,
                                             cover=list(eligible.values()))
            self.mdm.assign(nh.neighborhood_id)
            blocked = sorted(c for c in nh.members if not self.connected(c))
            if blocked:
                if app_id not in self.queued_deploys:
                    self.queued_deploys.append(app_id)
                st.state = "queued"
                self.record("deploy_queued", HUB, {"app": app_id, "partitioned": blocked})
                return False
            for w, allowed in eligible.items():
                if not allowed & nh.members:
                    raise StageFailure(stage, f"no neighborhood member satisfies the data "
                                              f"constraints of {w}")
            st.neighborhood = nh
            st.eligible = eligible
            self.hub_put("neighborhood", app_id, nh)
            self.stage_ok(st, stage, members=sorted(nh.members), id=nh.neighborhood_id,
                          spans_classes=nh.spans_classes)

            stage = "recommend"
            recs = self.recommendations(st)
            cost = self.cost_maps.build(nh, self.federation.inter_links.values(), "latency")
            self.stage_ok(st, stage, recommendations=len(recs), cost_map={
                "generation": cost.generation,
                "latency_ns": {f"{a}|{b}": v for (a, b), v in cost.costs.items()}})

            stage = "schedule"
            swm_trace: list = []
            try:
                plan = plan_application(app, nh, recs, self.federation, eligible,
                                        trace=swm_trace)
            except SchedulingFailure as exc:
                self.emit_swm(app_id, swm_trace)
                raise StageFailure(stage, f"unplaced {', '.join(exc.plan.unplaced)}") from None
            self.emit_swm(app_id, swm_trace)
            self.stage_ok(st, stage, placements=len(plan.placements))

            stage = "execute"
            fail = {c for c in plan.clusters() if c in self.armed_faults}
            swm_trace = []
            status = execute(plan, app, self.federation, fail_clusters=fail, trace=swm_trace)
            self.emit_swm(app_id, swm_trace)
            if fail:
                visited = plan.clusters()
                first = next(c for c in visited if c in fail)
                self.armed_faults.discard(first)
            if status is not PlanStatus.COMMITTED:
                st.rollbacks += 1
                raise StageFailure(stage, swm_trace[-1][1]["reason"])
            st.plan = plan
            self.stage_ok(st, stage)

            stage = "network"
            up = self.bind_tunnels(app_id, plan)
            self.stage_ok(st, stage, tunnels_up=up)
        except (StageFailure, cnc.SelectionError) as exc:
            reason = exc.reason if isinstance(exc, StageFailure) else str(exc)
            st.state = "failed"
            st.failure = {"stage": stage, "reason": reason}
            st.phases.append({"stage": stage, "ok": False, "t": self.now, "reason": reason})
            self.record("deploy_failed", HUB, {"app": app_id, "stage": stage, "reason": reason})
            st.desired = None
            self.hub_put("status", app_id, self.status_doc(app_id))
            return False

        st.state = "committed"
        st.failure = None
        self.commit_desired(st)
        self.record("deployed", HUB, {"app": app_id, "plan": plan.to_dict()})
        self.mdm_dirty = True
        for c in plan.clusters():
            self.publish_summary(c)
        return True

    def stage_ok(self, st: AppState, stage: str, **info) -> None:
        st.phases.append({"stage": stage, "ok": True, "t": self.now, **info})
        self.record("stage", HUB, {"app": st.app.group_id, "stage": stage, "ok": True, **info})

    def emit_swm(self, app_id: str, swm_trace: list) -> None:
        for kind, info in swm_trace:
            self.record(kind, "swm", {"app": app_id, **info})

    def commit_desired(self, st: AppState) -> None:
        st.desired = st.plan.copy()
        self.hub_put("plan", st.app.group_id, st.desired)
        for c in sorted({c for c, _ in st.desired.placements.values()}):
            self.send(c, "placement", st.app.group_id, self.cluster_slice(st.desired, c))
        self.hub_put("status", st.app.group_id, self.status_doc(st.app.group_id))

    @staticmethod
    def cluster_slice(plan: AssignmentPlan, cluster_id: str) -> dict:
        return {w: node for w, (c, node) in sorted(plan.placements.items()) if c == cluster_id}

    def bind_tunnels(self, app_id: str, plan: AssignmentPlan) -> list[str]:
        up = []
        for cid, b in sorted(plan.channel_bindings.items()):
            if b.link is not None and self.tunnels.bind(b.link, f"{app_id}/{cid}"):
                up.append(link_label(b.link))
        return up

    def unbind_tunnels(self, app_id: str, plan: AssignmentPlan) -> list[str]:
        down = []
        for cid, b in sorted(plan.channel_bindings.items()):
            if b.link is not None and self.tunnels.unbind(b.link, f"{app_id}/{cid}"):
                down.append(link_label(b.link))
        return down

    def teardown(self, st: AppState) -> None:
        down = self.unbind_tunnels(st.app.group_id, st.plan)
        release_plan(st.plan, self.federation)
        self.record("released", HUB, {"app": st.app.group_id, "tunnels_down": down})
        for c in {c for c, _ in st.plan.placements.values()}:
            self.publish_summary(c)
        st.state = "pending"
        self.mdm_dirty = True

    def reschedule(self, app_id: str, reason: str, actor: str = HUB) -> bool:
        st = self.apps[app_id]
        self.record("reschedule", actor, {"app": app_id, "reason": reason})
        if st.state == "committed":
            self.teardown(st)
        return self.deploy_application(app_id, replan=True)

    # adaptation -------------------------------------------------------------

    def invalid_channels(self, st: AppState) -> list[str]:
        out = []
        fed = self.federation
        for cid, b in sorted(st.plan.channel_bindings.items()):
            ch = next(c for c in st.app.channels if c.channel_id == cid)
            link = fed.inter_links.get(b.link) if b.link else None
            check = validate_channel(fed, b.src, b.dst, link, ch,
                                     credit_bps=b.bandwidth_bps if link else 0)
            if not check.feasible:
                out.append(f"{cid}: {'; '.join(check.violations)}")
        return out

    def involved(self, st: AppState) -> set[str]:
        out = set(st.neighborhood.members) if st.neighborhood else set()
        if st.plan is not None:
            out |= {c for c, _ in st.plan.placements.values()}
        return out

    def adaptation_tick(self) -> None:
        actions = 0
        for app_id, st in sorted(self.apps.items()):
            if st.state != "committed":
                continue
            if not all(self.connected(c) for c in self.involved(st)):
                continue
            failed_nodes = sorted({n for _, n in st.plan.placements.values()
                                   if not self.federation.schedulable(n)})
            if failed_nodes:
                actions += 1
                self.evacuate(app_id, failed_nodes)
                continue
            broken = self.invalid_channels(st)
            if broken:
                actions += 1
                self.reschedule(app_id, "channel invalidated: " + " | ".join(broken))
                continue
            if self.try_migration(st):
                actions += 1
        for cid in sorted(self.connectivity):
            if not self.connected(cid):
                actions += self.local_tick(cid)
        self.mdm_dirty = self.mdm_dirty or actions > 0
        self.record("adaptation_check", HUB, {"actions": actions})
        self.sync_mdm()

    def candidate_nodes(self, st: AppState, wid: str, clusters: Iterable[str]) -> list[str]:
        w = st.app.workload(wid)
        allowed = st.eligible.get(wid)
        out = []
        for c in sorted(clusters):
            if allowed is not None and c not in allowed:
                continue
            for node in self.federation.clusters[c].nodes:
                n = node.node_id
                free_cpu, free_mem = self.federation.free(n)
                if self.federation.schedulable(n) and free_cpu >= w.cpu_req \
                        and free_mem >= w.mem_req:
                    out.append(n)
        return out

    def move_scores(self, st: AppState, wid: str, target: str,
                    members: Iterable[str]) -> tuple[float, float]:
        """Score of the hosting node now, and of ``target`` once it hosts ``wid``.

        Both come from current (unforecast) metrics so the comparison is like
        for like; a move that merely shifts load around scores no gain.
        """
        fed = self.federation
        w = st.app.workload(wid)
        metrics = {}
        for c in sorted(members):
            metrics.update(self.node_metrics(c))
        profile = st.app.profile
        orient = {m: profile.orientation[m] for m in profile.weights}
        src = st.plan.placements[wid][1]
        before = pdlc.score(profile, pdlc.normalize(metrics, orient)).get(src, 0.0)
        # traffic the workload originates follows it to the new node
        share = math.fsum(self.flow_node_energy.get((f"{st.app.group_id}/{ch.channel_id}", src), 0.0)
                          for ch in st.app.channels_of(wid))
        for n, sign in ((src, -1), (target, 1)):
            if n not in metrics:
                continue
            node = fed.nodes[n]
            cpu, mem = fed.clusters[node.cluster_id].allocations[n]
            cpu += sign * w.cpu_req
            mem += sign * w.mem_req
            util = cpu / node.cpu_capacity
            idle = self.params["idle_power_fraction"]
            metrics[n].update(cpu_util=util, mem_util=mem / node.mem_capacity,
                              free_cpu=float(node.cpu_capacity - cpu),
                              node_energy=node.node_energy * (idle + (1 - idle) * util),
                              network_energy=max(0.0, metrics[n]["network_energy"] + sign * share))
        return before, pdlc.score(profile, pdlc.normalize(metrics, orient)).get(target, 0.0)

    def best_move(self, st: AppState, members: Iterable[str], recs: list[Recommendation]
                  ) -> tuple[str, tuple[str, str], float, float] | None:
        members = sorted(members)
        node_score = {r.target_id: r.score for r in recs if r.scope == "node"}
        hysteresis = self.params["hysteresis"]
        for wid, (c, node) in sorted(st.plan.placements.items()):
            if c not in members:
                continue
            current = node_score.get(node, 0.0)
            cands = [n for n in self.candidate_nodes(st, wid, members) if n != node]
            if not cands:
                continue
            best = min(cands, key=lambda n: (-node_score.get(n, 0.0), n))
            if not should_migrate(current, node_score.get(best, 0.0), hysteresis):
                continue
            before, after = self.move_scores(st, wid, best, members)
            if should_migrate(before, after, hysteresis):
                return wid, (self.federation.node_cluster[best], best), before, after
        return None

    def try_migration(self, st: AppState) -> bool:
        recs = self.recommendations(st, exchange=False)
        move = self.best_move(st, st.neighborhood.members, recs)
        if move is None:
            return False
        wid, target, cur, cand = move
        return self.do_migrate(st, wid, target, HUB, f"score {cur:.3f} -> {cand:.3f}")

    def do_migrate(self, st: AppState, wid: str, target: tuple[str, str], actor: str,
                   reason: str) -> bool:
        app_id = st.app.group_id
        before = dict(st.plan.channel_bindings)
        old = st.plan.placements[wid]
        try:
            res = migrate(st.app, st.plan, wid, target, self.federation,
                          members=st.neighborhood.members)
        except MigrationRejected as exc:
            self.record("migration_rejected", actor, {"app": app_id, "workload": wid,
                                                      "target": list(target), "reason": str(exc)})
            return False
        if not res.migrated:
            return False
        st.migrations += 1
        for cid, prev, new in res.rebinds:
            if prev != new:
                if new is not None:
                    self.tunnels.bind(new, f"{app_id}/{cid}")
                if prev is not None:
                    self.tunnels.unbind(prev, f"{app_id}/{cid}")
            elif cid not in before and new is not None:
                self.tunnels.bind(new, f"{app_id}/{cid}")
        self.record("migrated", actor, {
            "app": app_id, "workload": wid, "from": list(old), "to": list(target),
            "reason": reason, "timeline": [list(s) for s in res.timeline]})
        for c in {old[0], target[0]}:
            self.publish_summary(c)
        if actor == HUB:
            self.commit_desired(st)
        else:
            self.local_put(target[0], "placement", app_id, self.cluster_slice(st.plan, target[0]))
        self.mdm_dirty = True
        return True

    def evacuate(self, app_id: str, nodes: list[str], actor: str = HUB) -> None:
        """Move workloads off unschedulable nodes, replanning if a move fails."""
        st = self.apps[app_id]
        scope = (st.neighborhood.members if actor == HUB else {actor})
        for wid, (c, n) in sorted(st.plan.placements.items()):
            if n not in nodes:
                continue
            recs = self.recommendations(st, members=scope if actor != HUB else None,
                                        exchange=False)
            score = {r.target_id: r.score for r in recs if r.scope == "node"}
            cands = self.candidate_nodes(st, wid, scope)
            moved = False
            for target in sorted(cands, key=lambda x: (-score.get(x, 0.0), x)):
                if self.do_migrate(st, wid, (self.federation.node_cluster[target], target),
                                   actor, f"node {n} unschedulable"):
                    moved = True
                    break
            if not moved:
                if actor == HUB:
                    self.reschedule(app_id, f"node {n} failed")
                return

    def local_tick(self, cluster_id: str) -> int:
        """Autonomous adaptation inside a partitioned cluster using cached state."""
        actions = 0
        for app_id, st in sorted(self.apps.items()):
            if st.state != "committed":
                continue
            mine = {w: n for w, (c, n) in st.plan.placements.items() if c == cluster_id}
            if not mine:
                continue
            failed = sorted({n for n in mine.values() if not self.federation.schedulable(n)})
            if failed:
                self.evacuate(app_id, failed, actor=cluster_id)
                actions += 1
                continue
            recs = self.recommendations(st, members=[cluster_id], exchange=False)
            move = self.best_move(st, [cluster_id], recs)
            if move is not None:
                wid, target, cur, cand = move
                if self.do_migrate(st, wid, target, cluster_id,
                                   f"local score {cur:.3f} -> {cand:.3f}"):
                    actions += 1
        return actions

    # hub partition ------------------------------------------------------------

    def partition_hub(self, cluster_ids: list[str]) -> None:
        for c in sorted(cluster_ids):
            if self.connected(c):
                self.connectivity[c] = "partitioned"
                self.partition_windows.append([c, len(self.store.access_log), None])
        self.record("hub_disconnect", HUB, {"clusters": sorted(cluster_ids)})

    def heal_hub(self, cluster_ids: list[str]) -> None:
        healed = []
        for c in sorted(cluster_ids):
            if not self.connected(c):
                self.connectivity[c] = "connected"
                healed.append(c)
                for w in self.partition_windows:
                    if w[0] == c and w[2] is None:
                        w[2] = len(self.store.access_log)
        applied = []
        for c in healed:
            for kind, key, value in self.outbox.pop(c, []):
                self.send(c, kind, key, value)
                applied.append(f"{kind}/{key}")
        reconciled = []
        for app_id, st in sorted(self.apps.items()):
            if st.state == "committed" and self.involved(st) & set(healed):
                if self.reconcile(app_id, healed):
                    reconciled.append(app_id)
        self.record("hub_reconnect", HUB, {"clusters": healed, "applied": applied,
                                           "reconciled": reconciled})
        ready = list(self.queued_deploys) if healed else []
        for app_id in ready:
            self.queued_deploys.remove(app_id)
            self.record("deploy_applied", HUB, {"app": app_id})
            self.deploy_application(app_id)

    def reconcile(self, app_id: str, healed: list[str]) -> bool:
        """Hub desired state wins over local drift."""
        st = self.apps[app_id]
        actual = {}
        for c in healed:
            got = self.hub_read(c, "placement", app_id)
            if got:
                actual.update({w: (c, n) for w, n in got.items()})
        drift = sorted(w for w, p in st.plan.placements.items()
                       if st.desired is not None and st.desired.placements.get(w) != p)
        if not drift:
            return False
        for wid in drift:
            st.conflicts += 1
            self.record("conflict", HUB, {
                "app": app_id, "workload": wid,
                "desired": list(st.desired.placements[wid]),
                "actual": list(st.plan.placements[wid]),
                "reported": list(actual[wid]) if wid in actual else None,
                "policy": "hub_wins"})
        for wid in drift:
            target = st.desired.placements[wid]
            if not self.do_migrate(st, wid, target, HUB, "reconcile to desired state"):
                self.reschedule(app_id, "reconciliation conflict")
                break
        self.record("reconciled", HUB, {
            "app": app_id, "state": self.apps[app_id].state,
            "consistent": self.consistent(app_id)})
        return True

    def consistent(self, app_id: str) -> bool:
        st = self.apps[app_id]
        if st.state != "committed":
            return st.state == "failed"
        return st.desired is not None and st.desired.placements == st.plan.placements

    # faults -----------------------------------------------------------------

    def inject_fault(self, kind: str, p: dict) -> None:
        fed = self.federation
        if kind in ("node_fail", "node_recover"):
            node = p.get("node")
            if node not in fed.nodes:
                raise KeyError(f"unknown node {node!r}")
            cluster = fed.clusters[fed.node_cluster[node]]
            if kind == "node_fail":
                cluster.cordoned.add(node)
                self.monitor.node_failures[node] += 1
                self.record("node_fail", cluster.cluster_id, {"node": node})
                for app_id, st in sorted(self.apps.items()):
                    if st.state == "committed" and any(
                            n == node for _, n in st.plan.placements.values()):
                        if self.connected(cluster.cluster_id) and all(
                                self.connected(c) for c in self.involved(st)):
                            self.evacuate(app_id, [node])
                        else:
                            self.evacuate(app_id, [node], actor=cluster.cluster_id)
            else:
                cluster.cordoned.discard(node)
                self.record("node_recover", cluster.cluster_id, {"node": node})
            self.publish_summary(cluster.cluster_id)
            self.mdm_dirty = True
        elif kind in ("link_degrade", "link_recover"):
            self.link_event(kind, p)
        elif kind == "exec_fault":
            c = p.get("cluster")
            if c not in fed.clusters:
                raise KeyError(f"unknown cluster {c!r}")
            self.armed_faults.add(c)
            self.record("exec_fault_armed", c, {"cluster": c})
        else:
            raise ValueError(f"unknown event kind {kind!r}")

    def link_keys(self, target: list[str]) -> list[tuple]:
        fed = self.federation
        if len(target) == 2 and all(t in fed.clusters for t in target):
            keys = [ln.key for ln in fed.links_between(*target)]
        elif len(target) == 2 and all(t in fed.nodes for t in target):
            keys = [k for k in ((target[0], target[1]), (target[1], target[0]))
                    if fed.intra_link(*k) is not None]
        else:
            keys = []
        if not keys:
            raise KeyError(f"unknown link {target!r}")
        return keys

    def link_event(self, kind: str, p: dict) -> None:
        fed = self.federation
        keys = self.link_keys(p.get("link", []))
        for key in keys:
            inter = len(key) == 3
            if kind == "link_degrade":
                self.monitor.set_degradation(
                    key, p.get("latency_factor", 1.0), p.get("extra_latency_ns", 0.0),
                    p.get("loss"))
                bw = p.get("bandwidth_bps")
                if bw is not None:
                    self.set_bandwidth(key, int(bw))
                if inter:
                    fed.inter_links[key].failures += 1
                else:
                    ln = fed.intra_link(*key)
                    fed.update_intra_link(*key, failures=ln.failures + 1)
            else:
                self.monitor.clear_degradation(key)
                base = self.base_bandwidth[key] if inter else self.base_intra_bw[key]
                self.set_bandwidth(key, base)
        self.record(kind, HUB, {"links": [link_label(k) for k in keys],
                                **{k: v for k, v in p.items() if k != "link"}})

    def set_bandwidth(self, key: tuple, bps: int) -> None:
        fed = self.federation
        if len(key) == 2:
            fed.update_intra_link(*key, bandwidth_bps=bps)
            return
        link = fed.inter_links[key]
        link.bandwidth_bps = bps
        # evict channels until reservations fit the degraded capacity
        evicted = []
        for app_id, st in sorted(self.apps.items()):
            if link.bandwidth_reserved <= link.bandwidth_bps:
                break
            if st.state == "committed" and any(
                    b.link == key for b in st.plan.channel_bindings.values()):
                self.teardown(st)
                evicted.append(app_id)
        for app_id in evicted:
            self.reschedule(app_id, f"bandwidth on {link_label(key)} dropped to {bps}")

    # outputs ----------------------------------------------------------------

    def status_doc(self, app_id: str) -> dict:
        st = self.apps[app_id]
        app = st.app
        status: dict[str, Any] = {
            "state": st.state,
            "neighborhood": st.neighborhood.neighborhood_id if st.neighborhood else None,
            "members": sorted(st.neighborhood.members) if st.neighborhood else [],
            "spans_classes": bool(st.neighborhood and st.neighborhood.spans_classes),
            "phases": list(st.phases),
            "failure": st.failure,
            "migrations": st.migrations,
            "rollbacks": st.rollbacks,
            "conflicts": st.conflicts,
        }
        if st.state == "committed":
            status["placements"] = {w: list(p) for w, p in sorted(st.plan.placements.items())}
            bindings = {}
            for cid, b in sorted(st.plan.channel_bindings.items()):
                ch = next(c for c in app.channels if c.channel_id == cid)
                bindings[cid] = {
                    "src": list(b.src), "dst": list(b.dst),
                    "link": link_label(b.link) if b.link else None,
                    "latency_ns": _finite(b.latency_ns),
                    "slack_ns": _finite(ch.latency_bound_ns - b.latency_ns),
                    "bandwidth_bps": b.bandwidth_bps,
                }
            status["channel_bindings"] = bindings
        return {
            "spec": {
                "group_id": app_id,
                "profile": app.profile.name if app.profile else None,
                "workloads": [w.workload_id for w in app.workloads],
                "channels": [c.channel_id for c in app.channels],
            },
            "status": status,
        }

    def finish(self) -> RunResult:
        self.sync_mdm()
        status = {a: self.status_doc(a) for a in sorted(self.apps)}
        counts = defaultdict(int)
        for st in self.apps.values():
            counts[st.state] += 1
        summary = {
            "scenario": self.scenario.name,
            "seed": self.seed,
            "applications": len(self.apps),
            "scheduled": counts["committed"],
            "failed": counts["failed"],
            "queued": counts["queued"],
            "pending": counts["pending"],
            "migrated": sum(st.migrations for st in self.apps.values()),
            "rolled_back": sum(st.rollbacks for st in self.apps.values()),
            "conflicts": sum(st.conflicts for st in self.apps.values()),
            "invariant_violations": len(self.violations),
        }
        slack = {a: doc["status"].get("channel_bindings", {}) for a, doc in status.items()}
        self.record("final", HUB, {
            "summary": summary,
            "apps": {a: {"state": doc["status"]["state"],
                         "slack_ns": {c: b["slack_ns"] for c, b in slack[a].items()}}
                     for a, doc in status.items()},
        })
        self.trace.insert(0, {"schema": TRACE_SCHEMA, "scenario": self.scenario.name,
                              "seed": self.seed})
        return RunResult(self.trace, self.metrics, status, summary, self.violations, self)


def run(scenario: Scenario, seed: int = 0) -> RunResult:
    return Simulation(scenario, seed).run()


def partition_crossings(result: RunResult) -> list:
    """Store accesses that crossed a hub/cluster partition boundary."""
    log = result.sim.store.access_log
    out = []
    for cluster, start, end in result.sim.partition_windows:
        stop = len(log) if end is None else end
        for a in log[start:stop]:
            if (a.actor == cluster and a.scope == HUB) or \
                    (a.actor == HUB and a.scope == cluster):
                out.append((cluster, a))
    return out


def trace_grammar(trace: list[dict], app_id: str) -> list[str]:
    """Kinds of the scheduler phase records emitted for one application."""
    phases = ("ordered", "solved", "reconsidered", "verified", "executed", "rolled_back")
    return [r["kind"] for r in trace
            if r.get("kind") in phases and r["payload"].get("app") == app_id]
