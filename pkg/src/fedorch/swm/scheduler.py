"""Two-layer sequential federated scheduling.

The hub orders the neighborhood's clusters, then visits them one at a time.
Each visited cluster places what it can on its own nodes and tentatively
hands the rest to aggregate views of the clusters not yet visited.  Nothing
is allocated here; :mod:`.execution` applies a finished plan.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from ..infra import Federation
from ..model import (
    ApplicationGroup, AssignmentPlan, Channel, ChannelBinding, InterClusterLink,
    Neighborhood, PlanStatus, Recommendation, Workload,
)
from .channels import ChannelCheck, validate_channel


class SchedulingFailure(RuntimeError):
    def __init__(self, plan: AssignmentPlan, reason: str = ""):
        self.plan = plan
        self.unplaced = sorted(plan.unplaced)
        super().__init__(reason or f"unplaced workloads: {', '.join(self.unplaced)}")


@dataclass(frozen=True)
class ClusterAggregate:
    cluster_id: str
    free_cpu: int
    free_mem: int
    node_count: int
    best_score: float
    largest_free_cpu: int = 0
    largest_free_mem: int = 0


@dataclass(frozen=True)
class RelaxationPolicy:
    drop_soft_preferences: bool = True
    widen_candidates: bool = True


STRICT = RelaxationPolicy(False, False)


@dataclass
class RecommendationView:
    node: dict[str, float]
    cluster: dict[str, float]
    clusters_with_node_recs: set[str]

    @classmethod
    def build(cls, recs: Iterable[Recommendation]) -> "RecommendationView":
        node: dict[str, float] = {}
        cluster: dict[str, float] = {}
        with_recs: set[str] = set()
        for r in recs:
            if r.scope == "node":
                node[r.target_id] = max(r.score, node.get(r.target_id, 0.0))
                if r.cluster_id:
                    with_recs.add(r.cluster_id)
            else:
                cluster[r.target_id] = max(r.score, cluster.get(r.target_id, 0.0))
        return cls(node, cluster, with_recs)

    def cluster_score(self, cluster_id: str, federation: Federation) -> float:
        if cluster_id in self.cluster:
            return self.cluster[cluster_id]
        scores = [self.node[n.node_id] for n in federation.clusters[cluster_id].nodes
                  if n.node_id in self.node]
        return max(scores, default=0.0)


def order_clusters(neighborhood: Neighborhood | Iterable[str],
                   recommendations: Iterable[Recommendation] | RecommendationView,
                   inter_links: Iterable[InterClusterLink],
                   federation: Federation | None = None) -> list[str]:
    """Visit order: recommended first, then by score, then by fastest link."""
    members = set(neighborhood.members if isinstance(neighborhood, Neighborhood)
                  else neighborhood)
    view = (recommendations if isinstance(recommendations, RecommendationView)
            else RecommendationView.build(recommendations))
    min_lat = {c: math.inf for c in members}
    for ln in inter_links:
        if ln.cluster_a in members and ln.cluster_b in members:
            for c in ln.pair:
                min_lat[c] = min(min_lat[c], ln.latency_ns)

    def score_of(c: str) -> float:
        if c in view.cluster:
            return view.cluster[c]
        if federation is not None:
            return view.cluster_score(c, federation)
        return 0.0

    def has_rec(c: str) -> bool:
        return c in view.clusters_with_node_recs or c in view.cluster

    return sorted(members, key=lambda c: (not has_rec(c), -score_of(c), min_lat[c], c))


class _Context:
    """Working state of one plan: capacity copy and pending reservations."""

    def __init__(self, app: ApplicationGroup, federation: Federation,
                 members: Iterable[str], recs: RecommendationView,
                 eligible: Mapping[str, set[str]] | None):
        self.app = app
        self.fed = federation
        self.members = set(members)
        self.recs = recs
        self.eligible = dict(eligible or {})
        self.free: dict[str, list[int]] = {}
        for c in sorted(self.members):
            for n in federation.clusters[c].nodes:
                self.free[n.node_id] = list(federation.free(n.node_id))
        self.pending_bps: dict[tuple[str, str, str], int] = {}
        self.channels = {w.workload_id: app.channels_of(w.workload_id) for w in app.workloads}

    @classmethod
    def from_plan(cls, plan: AssignmentPlan, app, federation, members, recs, eligible):
        ctx = cls(app, federation, members, recs, eligible)
        for wid, (_, node) in plan.placements.items():
            w = app.workload(wid)
            ctx.free[node][0] -= w.cpu_req
            ctx.free[node][1] -= w.mem_req
        for b in plan.channel_bindings.values():
            if b.link is not None:
                ctx.pending_bps[b.link] = ctx.pending_bps.get(b.link, 0) + b.bandwidth_bps
        return ctx

    def allowed_cluster(self, w: Workload, cluster_id: str) -> bool:
        if cluster_id not in self.members:
            return False
        allowed = self.eligible.get(w.workload_id)
        return allowed is None or cluster_id in allowed

    def link_for(self, a: str, b: str, channel: Channel) -> InterClusterLink | None:
        link = self.fed.direct_link(a, b, channel.service_class)
        if link is None:
            others = self.fed.links_between(a, b)
            link = others[0] if others else None
        return link

    def check(self, channel: Channel, src: tuple[str, str], dst: tuple[str, str]) -> ChannelCheck:
        link = None if src[0] == dst[0] else self.link_for(src[0], dst[0], channel)
        return validate_channel(self.fed, src, dst, link, channel, self.pending_bps)

    def endpoints(self, channel: Channel, wid: str, target: tuple[str, str],
                  plan: AssignmentPlan):
        peer = channel.dst_workload if channel.src_workload == wid else channel.src_workload
        if peer not in plan.placements:
            return None
        if channel.src_workload == wid:
            return target, plan.placements[peer]
        return plan.placements[peer], target

    def node_ok(self, w: Workload, node_id: str, plan: AssignmentPlan,
                relax: bool, widen: bool) -> bool:
        cluster_id = self.fed.node_cluster[node_id]
        if not self.allowed_cluster(w, cluster_id) or not self.fed.schedulable(node_id):
            return False
        cpu, mem = self.free[node_id]
        if w.cpu_req > cpu or w.mem_req > mem:
            return False
        if not widen and cluster_id in self.recs.clusters_with_node_recs \
                and node_id not in self.recs.node:
            return False
        if not relax:
            prefs = w.soft_preferences
            if prefs.min_score is not None and self.recs.node.get(node_id, 0.0) < prefs.min_score:
                return False
            for other, (_, n) in plan.placements.items():
                if n == node_id and (
                        other in prefs.anti_affinity
                        or w.workload_id in self.app.workload(other).soft_preferences.anti_affinity):
                    return False
        for ch in self.channels[w.workload_id]:
            ends = self.endpoints(ch, w.workload_id, (cluster_id, node_id), plan)
            if ends is None:
                if not self.peer_reachable(ch, w.workload_id, cluster_id, node_id):
                    return False
            elif not self.check(ch, *ends).feasible:
                return False
        return True

    def peer_reachable(self, channel: Channel, wid: str, cluster_id: str, node_id: str) -> bool:
        """Can an unplaced peer restricted to eligible clusters still meet ``channel``?

        Only a necessary condition: same cluster, or a direct link of the
        channel's class whose one-sided latency already fits the bound.
        """
        peer = channel.dst_workload if channel.src_workload == wid else channel.src_workload
        allowed = self.eligible.get(peer)
        if allowed is None:
            return True
        if channel.src_workload == wid:
            near = self.fed.latency_to_gateway(node_id)
        else:
            near = self.fed.latency_from_gateway(node_id)
        for c in allowed & self.members:
            if c == cluster_id:
                return True
            link = self.fed.direct_link(cluster_id, c, channel.service_class)
            if link is not None and near + link.latency_ns <= channel.latency_bound_ns:
                return True
        return False

    def cross_latency(self, w: Workload, node_id: str, plan: AssignmentPlan) -> float:
        """Node-to-gateway latency summed over channels leaving the cluster."""
        cluster_id = self.fed.node_cluster[node_id]
        total = 0.0
        for ch in self.channels[w.workload_id]:
            peer = ch.dst_workload if ch.src_workload == w.workload_id else ch.src_workload
            peer_cluster = (plan.placements[peer][0] if peer in plan.placements
                            else plan.tentative.get(peer))
            if peer_cluster is None or peer_cluster == cluster_id:
                continue
            if ch.src_workload == w.workload_id:
                total += self.fed.latency_to_gateway(node_id)
            else:
                total += self.fed.latency_from_gateway(node_id)
        return total

    def place(self, w: Workload, node_id: str, plan: AssignmentPlan) -> None:
        cluster_id = self.fed.node_cluster[node_id]
        target = (cluster_id, node_id)
        for ch in self.channels[w.workload_id]:
            ends = self.endpoints(ch, w.workload_id, target, plan)
            if ends is None:
                continue
            result = self.check(ch, *ends)
            assert result.feasible, result.violations
            plan.channel_bindings[ch.channel_id] = ChannelBinding(
                ch.channel_id, ends[0], ends[1], result.link, result.latency_ns,
                ch.bandwidth_req_bps)
            if result.link is not None:
                self.pending_bps[result.link] = (self.pending_bps.get(result.link, 0)
                                                 + ch.bandwidth_req_bps)
        self.free[node_id][0] -= w.cpu_req
        self.free[node_id][1] -= w.mem_req
        plan.placements[w.workload_id] = target
        plan.tentative.pop(w.workload_id, None)

    def best_node(self, w: Workload, cluster_id: str, plan: AssignmentPlan,
                  relax: bool, widen: bool) -> str | None:
        best = None
        for n in self.fed.clusters[cluster_id].nodes:
            if not self.node_ok(w, n.node_id, plan, relax, widen):
                continue
            key = (self.cross_latency(w, n.node_id, plan),
                   -self.recs.node.get(n.node_id, 0.0),
                   -self.free[n.node_id][0], n.node_id)
            if best is None or key < best[0]:
                best = (key, n.node_id)
        return best[1] if best else None

    def aggregate(self, cluster_id: str, demand: tuple[int, int]) -> ClusterAggregate:
        nodes = [n.node_id for n in self.fed.clusters[cluster_id].nodes
                 if self.fed.schedulable(n.node_id)]
        free_cpu = sum(self.free[n][0] for n in nodes) - demand[0]
        free_mem = sum(self.free[n][1] for n in nodes) - demand[1]
        return ClusterAggregate(
            cluster_id, free_cpu, free_mem, len(nodes),
            self.recs.cluster_score(cluster_id, self.fed),
            max((self.free[n][0] for n in nodes), default=0),
            max((self.free[n][1] for n in nodes), default=0),
        )


def _by_size(workloads: Iterable[Workload]) -> list[Workload]:
    return sorted(workloads, key=lambda w: (-w.cpu_req, w.workload_id))


def solve_l2(ctx: _Context, cluster_id: str, pending: Sequence[Workload],
             later: Sequence[str], plan: AssignmentPlan,
             relax: bool = False, widen: bool = False) -> AssignmentPlan:
    """Place what fits locally; hand the rest to aggregates of ``later`` clusters."""
    overflow = []
    for w in _by_size(pending):
        node = ctx.best_node(w, cluster_id, plan, relax, widen)
        if node is None:
            overflow.append(w)
        else:
            ctx.place(w, node, plan)

    demand: dict[str, tuple[int, int]] = {c: (0, 0) for c in later}
    for w in overflow:
        fits = []
        for rank, c in enumerate(later):
            if not ctx.allowed_cluster(w, c):
                continue
            agg = ctx.aggregate(c, demand[c])
            if (w.cpu_req <= agg.largest_free_cpu and w.mem_req <= agg.largest_free_mem
                    and w.cpu_req <= agg.free_cpu and w.mem_req <= agg.free_mem):
                fits.append(((-agg.best_score, -agg.free_cpu, rank), c))
        if fits:
            target = min(fits)[1]
            plan.tentative[w.workload_id] = target
            d = demand[target]
            demand[target] = (d[0] + w.cpu_req, d[1] + w.mem_req)
        else:
            plan.tentative.pop(w.workload_id, None)
            if w.workload_id not in plan.unplaced:
                plan.unplaced.append(w.workload_id)
    return plan


def schedule(app: ApplicationGroup, neighborhood: Neighborhood,
             recs: Iterable[Recommendation], federation: Federation,
             eligible: Mapping[str, set[str]] | None = None,
             trace: list | None = None) -> AssignmentPlan:
    """Round one: ordered sequential L2 solving.  Unplaced workloads stay listed."""
    view = RecommendationView.build(recs)
    order = order_clusters(neighborhood, view, federation.inter_links.values(), federation)
    plan = AssignmentPlan(app.group_id, neighborhood.neighborhood_id, visit_order=order,
                          status=PlanStatus.TENTATIVE)
    ctx = _Context(app, federation, neighborhood.members, view, eligible)
    if trace is not None:
        trace.append(("ordered", {"order": order}))
    for i, cluster_id in enumerate(order):
        pending = [w for w in app.workloads
                   if w.workload_id not in plan.placements and w.workload_id not in plan.unplaced]
        if not pending:
            break
        before = set(plan.placements)
        solve_l2(ctx, cluster_id, pending, order[i + 1:], plan)
        if trace is not None:
            trace.append(("solved", {
                "cluster": cluster_id,
                "placed": sorted(set(plan.placements) - before),
                "tentative": dict(sorted(plan.tentative.items())),
            }))
    for wid in sorted(plan.tentative):
        if wid not in plan.unplaced:
            plan.unplaced.append(wid)
    plan.tentative.clear()
    plan.unplaced.sort()
    plan.status = PlanStatus.DRAFT
    _verify(plan, ctx, trace)
    return plan


def reconsider(plan: AssignmentPlan, app: ApplicationGroup, neighborhood: Neighborhood,
               recs: Iterable[Recommendation], federation: Federation,
               policy: RelaxationPolicy = RelaxationPolicy(),
               eligible: Mapping[str, set[str]] | None = None,
               trace: list | None = None) -> AssignmentPlan:
    """Round two: retry only unplaced workloads over the same visit order."""
    if not plan.unplaced:
        return plan
    out = plan.copy()
    view = RecommendationView.build(recs)
    ctx = _Context.from_plan(out, app, federation, neighborhood.members, view, eligible)
    for cluster_id in out.visit_order:
        for w in _by_size(app.workload(wid) for wid in out.unplaced):
            node = ctx.best_node(w, cluster_id, out, policy.drop_soft_preferences,
                                 policy.widen_candidates)
            if node is not None:
                ctx.place(w, node, out)
                out.unplaced.remove(w.workload_id)
    if trace is not None:
        trace.append(("reconsidered", {
            "placed": sorted(set(out.placements) - set(plan.placements)),
            "unplaced": list(out.unplaced),
        }))
    _verify(out, ctx, trace)
    return out


def _verify(plan: AssignmentPlan, ctx: _Context, trace: list | None) -> None:
    for ch in ctx.app.channels:
        bound = ch.channel_id in plan.channel_bindings
        placed = ch.src_workload in plan.placements and ch.dst_workload in plan.placements
        if bound != placed:
            raise AssertionError(f"channel {ch.channel_id} binding out of sync")
    if trace is not None:
        trace.append(("verified", {"channels": sorted(plan.channel_bindings),
                                   "unplaced": list(plan.unplaced)}))


def plan_application(app: ApplicationGroup, neighborhood: Neighborhood,
                     recs: Sequence[Recommendation], federation: Federation,
                     eligible: Mapping[str, set[str]] | None = None,
                     policy: RelaxationPolicy | None = RelaxationPolicy(),
                     trace: list | None = None) -> AssignmentPlan:
    """Both scheduling rounds; raises SchedulingFailure if anything stays unplaced."""
    plan = schedule(app, neighborhood, recs, federation, eligible, trace)
    if plan.unplaced and policy is not None:
        plan = reconsider(plan, app, neighborhood, recs, federation, policy, eligible, trace)
    if plan.unplaced:
        raise SchedulingFailure(plan)
    return plan
