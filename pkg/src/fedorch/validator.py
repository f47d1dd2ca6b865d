"""Independent capacity and channel validator.

Shares no path or feasibility code with the scheduler: intra-cluster
latencies come from networkx over the current link table.
"""

from __future__ import annotations

from typing import Iterable, Mapping

import networkx as nx

from .infra import Federation
from .model import ApplicationGroup, AssignmentPlan

EPS_NS = 1e-6


def capacity_violations(federation: Federation) -> list[str]:
    out = []
    for cid, cluster in sorted(federation.clusters.items()):
        for node in cluster.nodes:
            cpu, mem = cluster.allocations.get(node.node_id, (0, 0))
            if cpu > node.cpu_capacity or mem > node.mem_capacity:
                out.append(f"{node.node_id}: allocation {cpu}m/{mem}Mi exceeds capacity")
            if cpu < 0 or mem < 0:
                out.append(f"{node.node_id}: negative allocation")
    for key, ln in sorted(federation.inter_links.items()):
        if ln.bandwidth_reserved > ln.bandwidth_bps:
            out.append(f"{'|'.join(key)}: reserved {ln.bandwidth_reserved} "
                       f"exceeds {ln.bandwidth_bps}")
        if ln.bandwidth_reserved < 0:
            out.append(f"{'|'.join(key)}: negative reservation")
    return out


def _graph(federation: Federation, cluster_id: str, min_bps: int = 0) -> nx.DiGraph:
    g = nx.DiGraph()
    g.add_nodes_from(n.node_id for n in federation.clusters[cluster_id].nodes)
    for ln in federation.clusters[cluster_id].intra_links:
        if ln.bandwidth_bps >= min_bps:
            g.add_edge(ln.src_node, ln.dst_node, weight=ln.latency_ns)
    return g


def _latency(g: nx.DiGraph, a: str, b: str) -> float:
    if a == b:
        return 0.0
    try:
        return nx.dijkstra_path_length(g, a, b)
    except nx.NetworkXNoPath:
        return float("inf")


def plan_violations(plan: AssignmentPlan, app: ApplicationGroup, federation: Federation,
                    members: Iterable[str] | None = None,
                    eligible: Mapping[str, set[str]] | None = None) -> list[str]:
    """Structural, placement and channel violations of one plan."""
    out = []
    members = set(members) if members is not None else None
    eligible = eligible or {}
    for w in app.workloads:
        where = plan.placements.get(w.workload_id)
        if where is None:
            out.append(f"{w.workload_id}: not placed")
            continue
        cluster_id, node_id = where
        if federation.node_cluster.get(node_id) != cluster_id:
            out.append(f"{w.workload_id}: node {node_id} is not in {cluster_id}")
            continue
        if members is not None and cluster_id not in members:
            out.append(f"{w.workload_id}: {cluster_id} outside neighborhood")
        allowed = eligible.get(w.workload_id)
        if allowed is not None and cluster_id not in allowed:
            out.append(f"{w.workload_id}: {cluster_id} violates data constraints")

    per_link: dict[tuple, int] = {}
    graphs: dict[tuple[str, int], nx.DiGraph] = {}

    def graph(c: str, bps: int = 0) -> nx.DiGraph:
        if (c, bps) not in graphs:
            graphs[(c, bps)] = _graph(federation, c, bps)
        return graphs[(c, bps)]

    for ch in app.channels:
        src = plan.placements.get(ch.src_workload)
        dst = plan.placements.get(ch.dst_workload)
        if src is None or dst is None:
            continue
        binding = plan.channel_bindings.get(ch.channel_id)
        if binding is None:
            out.append(f"{ch.channel_id}: not bound")
            continue
        if src[0] == dst[0]:
            if binding.link is not None:
                out.append(f"{ch.channel_id}: intra-cluster channel bound to inter link")
            lat = _latency(graph(src[0], ch.bandwidth_req_bps), src[1], dst[1])
            if lat > ch.latency_bound_ns + EPS_NS:
                out.append(f"{ch.channel_id}: latency {lat} exceeds {ch.latency_bound_ns}")
            continue
        if binding.link is None:
            out.append(f"{ch.channel_id}: cross-cluster channel without link")
            continue
        link = federation.inter_links.get(binding.link)
        if link is None or set(link.pair) != {src[0], dst[0]}:
            out.append(f"{ch.channel_id}: link {binding.link} is not a direct link")
            continue
        if link.service_class != ch.service_class:
            out.append(f"{ch.channel_id}: service class mismatch")
        gw_a = federation.clusters[src[0]].gateway.node_id
        gw_b = federation.clusters[dst[0]].gateway.node_id
        lat = (_latency(graph(src[0]), src[1], gw_a) + link.latency_ns
               + _latency(graph(dst[0]), gw_b, dst[1]))
        if lat > ch.latency_bound_ns + EPS_NS:
            out.append(f"{ch.channel_id}: latency {lat} exceeds {ch.latency_bound_ns}")
        per_link[link.key] = per_link.get(link.key, 0) + ch.bandwidth_req_bps
    for key, bps in sorted(per_link.items()):
        if bps > federation.inter_links[key].bandwidth_bps:
            out.append(f"{'|'.join(key)}: channels need {bps} B/s over capacity")
    return out


def committed_violations(plan: AssignmentPlan, app: ApplicationGroup,
                         federation: Federation, members: Iterable[str] | None = None,
                         eligible: Mapping[str, set[str]] | None = None) -> list[str]:
    """Plan checks plus global capacity, and reservations covering the channels."""
    out = plan_violations(plan, app, federation, members, eligible)
    out.extend(capacity_violations(federation))
    for b in plan.channel_bindings.values():
        if b.link is not None and federation.inter_links[b.link].bandwidth_reserved < b.bandwidth_bps:
            out.append(f"{b.channel_id}: bandwidth not reserved on {'|'.join(b.link)}")
    return out
