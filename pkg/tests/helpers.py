"""Small builders for hand-made federations and applications."""

from __future__ import annotations

from fedorch.infra import Federation
from fedorch.model import (
    ApplicationGroup, Channel, ClusterState, ConstraintRef, InterClusterLink, LinkSpec,
    Neighborhood, NodeSpec, SoftPreferences, Workload,
)
from fedorch.pdlc import PROFILES

MS = 1_000_000


def cluster(cid: str, nodes: int = 2, cpu: int = 4000, mem: int = 8192,
            hop_ms: float = 1.0, compliance: float = 1.0, features=(0.0,),
            energy: float = 1.0, caps: list[tuple[int, int]] | None = None) -> ClusterState:
    """Star topology around gateway ``{cid}0``; links in both directions."""
    caps = caps or [(cpu, mem)] * nodes
    specs = [NodeSpec(f"{cid}{i}", cid, c, m, energy, gateway=(i == 0))
             for i, (c, m) in enumerate(caps)]
    links = []
    for s in specs[1:]:
        links.append(LinkSpec(specs[0].node_id, s.node_id, hop_ms * MS, 10**9))
        links.append(LinkSpec(s.node_id, specs[0].node_id, hop_ms * MS, 10**9))
    return ClusterState(cid, specs, links, tuple(features), compliance)


def federation(clusters, links=()) -> Federation:
    """``links``: (a, b, latency_ms, bandwidth_bps[, service_class])."""
    inter = []
    for spec in links:
        a, b, lat, bw, *rest = spec
        inter.append(InterClusterLink(a, b, rest[0] if rest else "assured", lat * MS, bw))
    return Federation(clusters, inter)


def workload(wid: str, cpu: int = 500, mem: int = 256, constraints=(), anti=(),
             min_score=None) -> Workload:
    return Workload(wid, cpu, mem, tuple(constraints),
                    SoftPreferences(tuple(anti), min_score))


def channel(cid: str, src: str, dst: str, bound_ms: float = 20.0, bps: int = 1000,
            cls: str = "assured") -> Channel:
    return Channel(cid, src, dst, bound_ms * MS, bps, cls)


def application(gid: str, workloads, channels=(), profile: str = "greenness") -> ApplicationGroup:
    return ApplicationGroup(gid, tuple(workloads), tuple(channels), PROFILES[profile])


def neighborhood(gid: str, members, k: int | None = None) -> Neighborhood:
    members = frozenset(members)
    return Neighborhood(f"{gid}/nh0", gid, members, k or len(members))


__all__ = ["MS", "ConstraintRef", "application", "channel", "cluster", "federation",
           "neighborhood", "workload"]
