"""Mutable infrastructure state shared by the scheduler and the simulator."""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import replace
from typing import Iterable

from .model import ClusterState, InterClusterLink, LinkSpec, NodeSpec, ServiceClass


class CapacityError(RuntimeError):
    pass


class Federation:
    def __init__(self, clusters: Iterable[ClusterState],
                 inter_links: Iterable[InterClusterLink] = ()):
        self.clusters: dict[str, ClusterState] = {c.cluster_id: c for c in clusters}
        self.inter_links: dict[tuple[str, str, str], InterClusterLink] = {
            ln.key: ln for ln in inter_links}
        self.node_cluster: dict[str, str] = {}
        self.nodes: dict[str, NodeSpec] = {}
        for c in self.clusters.values():
            for n in c.nodes:
                self.node_cluster[n.node_id] = c.cluster_id
                self.nodes[n.node_id] = n
                c.allocations.setdefault(n.node_id, [0, 0])
        # cluster -> (direction, origin, min bandwidth) -> shortest-path table
        self._paths: dict[str, dict[tuple[bool, str, int], dict]] = {}

    # capacity -----------------------------------------------------------

    def free(self, node_id: str) -> tuple[int, int]:
        node = self.nodes[node_id]
        cpu, mem = self.clusters[node.cluster_id].allocations[node_id]
        return node.cpu_capacity - cpu, node.mem_capacity - mem

    def schedulable(self, node_id: str) -> bool:
        return node_id not in self.clusters[self.node_cluster[node_id]].cordoned

    def allocate(self, node_id: str, cpu: int, mem: int) -> None:
        free_cpu, free_mem = self.free(node_id)
        if cpu > free_cpu or mem > free_mem:
            raise CapacityError(f"node {node_id} lacks capacity for {cpu}m/{mem}Mi")
        alloc = self.clusters[self.node_cluster[node_id]].allocations[node_id]
        alloc[0] += cpu
        alloc[1] += mem

    def release(self, node_id: str, cpu: int, mem: int) -> None:
        alloc = self.clusters[self.node_cluster[node_id]].allocations[node_id]
        alloc[0] -= cpu
        alloc[1] -= mem
        if alloc[0] < 0 or alloc[1] < 0:
            raise CapacityError(f"release below zero on {node_id}")

    def reserve_bandwidth(self, key: tuple[str, str, str], bps: int) -> None:
        link = self.inter_links[key]
        if bps > link.available_bps:
            raise CapacityError(f"link {key} lacks {bps} B/s")
        link.bandwidth_reserved += bps

    def release_bandwidth(self, key: tuple[str, str, str], bps: int) -> None:
        self.inter_links[key].bandwidth_reserved -= bps

    # topology -----------------------------------------------------------

    def gateway(self, cluster_id: str) -> str:
        return self.clusters[cluster_id].gateway.node_id

    def links_between(self, a: str, b: str) -> list[InterClusterLink]:
        lo, hi = sorted((a, b))
        return [ln for k, ln in sorted(self.inter_links.items()) if k[:2] == (lo, hi)]

    def direct_link(self, a: str, b: str,
                    service_class: ServiceClass | str) -> InterClusterLink | None:
        lo, hi = sorted((a, b))
        return self.inter_links.get((lo, hi, ServiceClass(service_class).value))

    def incident_links(self, cluster_id: str) -> list[InterClusterLink]:
        return [ln for _, ln in sorted(self.inter_links.items())
                if cluster_id in ln.pair]

    def intra_link(self, src: str, dst: str) -> LinkSpec | None:
        cluster = self.clusters[self.node_cluster[src]]
        for ln in cluster.intra_links:
            if ln.src_node == src and ln.dst_node == dst:
                return ln
        return None

    def update_intra_link(self, src: str, dst: str, **changes) -> LinkSpec:
        cluster = self.clusters[self.node_cluster[src]]
        for i, ln in enumerate(cluster.intra_links):
            if ln.src_node == src and ln.dst_node == dst:
                if all(getattr(ln, k) == v for k, v in changes.items()):
                    return ln
                cluster.intra_links[i] = replace(ln, **changes)
                if "latency_ns" in changes or "bandwidth_bps" in changes:
                    self._invalidate(cluster.cluster_id)
                return cluster.intra_links[i]
        raise KeyError((src, dst))

    def _invalidate(self, cluster_id: str) -> None:
        self._paths.pop(cluster_id, None)

    def _shortest(self, cluster_id: str, origin: str, reverse: bool = False,
                  min_bps: int = 0) -> dict[str, tuple[float, int, tuple]]:
        """Dijkstra over intra-cluster EMA latencies from (or, reversed, to) ``origin``.

        Links narrower than ``min_bps`` are skipped.  Maps reachable node ->
        (latency, bottleneck bandwidth, hop keys).  Ties on latency resolve by
        node id through the heap ordering.
        """
        cache = self._paths.setdefault(cluster_id, {})
        cached = cache.get((reverse, origin, min_bps))
        if cached is not None:
            return cached
        adj: dict[str, list[tuple[str, LinkSpec]]] = {}
        for ln in self.clusters[cluster_id].intra_links:
            if ln.bandwidth_bps < min_bps:
                continue
            a, b = (ln.dst_node, ln.src_node) if reverse else (ln.src_node, ln.dst_node)
            adj.setdefault(a, []).append((b, ln))
        for edges in adj.values():
            edges.sort(key=lambda e: e[0])
        best: dict[str, tuple[float, int, tuple]] = {}
        heap: list[tuple[float, str, int, tuple]] = [(0.0, origin, 2**62, ())]
        while heap:
            lat, node, bw, hops = heapq.heappop(heap)
            if node in best:
                continue
            best[node] = (lat, bw, hops)
            for nxt, ln in adj.get(node, ()):
                if nxt not in best:
                    hop = (ln.key,) + hops if reverse else hops + (ln.key,)
                    heapq.heappush(heap, (lat + ln.latency_ns, nxt,
                                          min(bw, ln.bandwidth_bps), hop))
        cache[(reverse, origin, min_bps)] = best
        return best

    def path(self, src: str, dst: str, min_bps: int = 0) -> tuple[float, int, tuple]:
        """(latency_ns, bottleneck_bps, hop keys) between two nodes of one cluster.

        Only links of at least ``min_bps`` are used.  Unreachable pairs report
        infinite latency and zero bandwidth.
        """
        if src == dst:
            return 0.0, 2**62, ()
        cluster_id = self.node_cluster[src]
        if self.node_cluster[dst] != cluster_id:
            raise ValueError(f"{src} and {dst} are in different clusters")
        return self._shortest(cluster_id, src, min_bps=min_bps).get(dst, (math.inf, 0, ()))

    def latency_to_gateway(self, node_id: str) -> float:
        cluster_id = self.node_cluster[node_id]
        table = self._shortest(cluster_id, self.gateway(cluster_id), reverse=True)
        return table.get(node_id, (math.inf,))[0]

    def latency_from_gateway(self, node_id: str) -> float:
        return self.path(self.gateway(self.node_cluster[node_id]), node_id)[0]

    # snapshots ----------------------------------------------------------

    def snapshot(self) -> bytes:
        """Canonical bytes of all mutable allocation state."""
        doc = {
            "allocations": {
                cid: {n: list(a) for n, a in sorted(c.allocations.items())}
                for cid, c in sorted(self.clusters.items())
            },
            "cordoned": {cid: sorted(c.cordoned) for cid, c in sorted(self.clusters.items())},
            "reserved": {"|".join(k): ln.bandwidth_reserved
                         for k, ln in sorted(self.inter_links.items())},
            "tunnels": {"|".join(k): ln.tunnel.value
                        for k, ln in sorted(self.inter_links.items())},
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
