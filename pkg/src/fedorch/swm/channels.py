"""Channel feasibility for intra- and cross-cluster placements."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

from ..infra import Federation
from ..model import Channel, InterClusterLink


@dataclass(frozen=True)
class ChannelCheck:
    feasible: bool
    latency_ns: float
    violations: tuple[str, ...] = field(default=())
    link: tuple[str, str, str] | None = None


def three_term_latency(latency_in_a: float, link_latency: float, latency_in_b: float) -> float:
    return latency_in_a + link_latency + latency_in_b


def validate_channel(federation: Federation, src: tuple[str, str], dst: tuple[str, str],
                     link: InterClusterLink | None, channel: Channel,
                     pending_bps: Mapping[tuple[str, str, str], int] | None = None,
                     credit_bps: int = 0) -> ChannelCheck:
    """Check one channel between placed endpoints ``(cluster, node)``.

    ``pending_bps`` holds reservations made by the plan under construction
    but not yet applied; ``credit_bps`` is bandwidth already held on the link
    by this same channel (used when re-validating during migration).
    """
    problems = []
    src_cluster, src_node = src
    dst_cluster, dst_node = dst
    bound = channel.latency_bound_ns
    if src_cluster == dst_cluster:
        latency, _, _ = federation.path(src_node, dst_node, channel.bandwidth_req_bps)
        if latency == float("inf"):
            problems.append(f"no path with {channel.bandwidth_req_bps} B/s")
        elif latency > bound:
            problems.append(f"latency {latency} exceeds bound {bound}")
        return ChannelCheck(not problems, latency, tuple(problems))

    if link is None or {link.cluster_a, link.cluster_b} != {src_cluster, dst_cluster}:
        return ChannelCheck(False, float("inf"),
                            (f"no direct link {src_cluster}-{dst_cluster}",))
    lat_a = federation.latency_to_gateway(src_node)
    lat_b = federation.latency_from_gateway(dst_node)
    latency = three_term_latency(lat_a, link.latency_ns, lat_b)
    if latency > bound:
        problems.append(f"latency {lat_a}+{link.latency_ns}+{lat_b} exceeds bound {bound}")
    if link.service_class != channel.service_class:
        problems.append(f"service class {link.service_class.value} does not match "
                        f"{channel.service_class.value}")
    available = link.available_bps - (pending_bps or {}).get(link.key, 0) + credit_bps
    if available < channel.bandwidth_req_bps:
        problems.append(f"link bandwidth {available} below {channel.bandwidth_req_bps}")
    return ChannelCheck(not problems, latency, tuple(problems), link.key)
