"""Network state monitoring, energy accounting, cost maps and tunnels."""

from __future__ import annotations

import random
from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Protocol, Sequence

from .infra import Federation
from .model import InterClusterLink, MetricWindow, Neighborhood, TunnelState

# Metric names exported by the network monitor.
U_LATENCY = "uLatencyNanos"
U_LINK_ENERGY = "uLinkEnergy"
U_FLOW_ENERGY = "uFlowEnergy"
U_NODE_BANDWIDTH = "uNodeBandwidth"
U_NODE_DEGREE = "uNodeDegree"
U_PACKET_LOSS = "uPacketLoss"
U_LINK_FAILURE = "uLinkFailure"
U_NODE_NET_FAILURE = "uNodeNetFailure"
MONITOR_METRICS = (U_LATENCY, U_LINK_ENERGY, U_FLOW_ENERGY, U_NODE_BANDWIDTH,
                  U_NODE_DEGREE, U_PACKET_LOSS, U_LINK_FAILURE, U_NODE_NET_FAILURE)

DEFAULT_ALPHA = 0.2
COST_METRICS = ("latency", "bandwidth", "loss", "energy")


def ema_update(window: MetricWindow, sample: float) -> MetricWindow:
    if window.samples_seen == 0:
        value = float(sample)
    else:
        old = window.ema_value
        value = window.alpha * sample + (1.0 - window.alpha) * old
        # guard against last-ulp drift outside [old, sample]
        value = min(max(value, min(old, sample)), max(old, sample))
    return replace(window, ema_value=value, samples_seen=window.samples_seen + 1)


# energy ----------------------------------------------------------------

@dataclass(frozen=True)
class PacketRecord:
    link: tuple[str, str]
    size: int
    timestamp: int = 0
    flow_id: str = ""

    def __post_init__(self):
        if self.size <= 0:
            raise ValueError("packet size must be positive")


class EnergyModel(Protocol):
    def energy(self, pkt: PacketRecord) -> float: ...


@dataclass(frozen=True)
class LinearEnergyModel:
    """Per-packet energy as a baseline plus a size-proportional term."""

    per_byte_cost: float = 1e-6
    baseline_cost: float = 1e-4

    def __post_init__(self):
        if self.per_byte_cost < 0 or self.baseline_cost < 0:
            raise ValueError("energy coefficients must be non-negative")

    def energy(self, pkt: PacketRecord) -> float:
        return self.per_byte_cost * pkt.size + self.baseline_cost


def packet_energy(pkt: PacketRecord, model: EnergyModel) -> float:
    return model.energy(pkt)


def link_energy_window(packets: Sequence[PacketRecord], model: EnergyModel) -> float:
    links = {p.link for p in packets}
    if len(links) > 1:
        raise ValueError(f"window mixes packets from {len(links)} links")
    total = 0.0
    for p in packets:
        total += model.energy(p)
    return total


def node_network_energy(link_energies: Mapping[str, float] | Iterable[float]) -> float:
    """Network energy of a node: the sum of its egress link energies.

    Mappings are summed in key order so the result is reproducible.
    """
    if isinstance(link_energies, Mapping):
        values = [link_energies[k] for k in sorted(link_energies)]
    else:
        values = list(link_energies)
    total = 0.0
    for v in values:
        total += v
    return total


def flow_energy_by_node(flow_id: str, packets: Iterable[PacketRecord],
                        model: EnergyModel) -> dict[str, float]:
    out: dict[str, float] = {}
    for p in packets:
        if p.flow_id == flow_id:
            out[p.link[0]] = out.get(p.link[0], 0.0) + model.energy(p)
    return out


def flow_energy(flow_id: str, packets: Iterable[PacketRecord], model: EnergyModel,
                origin: str | None = None) -> float:
    by_node = flow_energy_by_node(flow_id, packets, model)
    if origin is not None:
        return by_node.get(origin, 0.0)
    return sum(by_node[k] for k in sorted(by_node))


# cost maps --------------------------------------------------------------

@dataclass(frozen=True)
class CostMap:
    scope: str
    metric: str
    costs: dict[tuple[str, str], float]
    generation: int


def _link_cost(link: InterClusterLink, metric: str) -> float:
    if metric == "latency":
        return link.latency_ns
    if metric == "bandwidth":
        return float(link.available_bps)
    if metric == "loss":
        return link.loss_rate
    return link.link_energy


def build_cost_map(neighborhood: Neighborhood | Iterable[str],
                   links: Iterable[InterClusterLink], metric: str,
                   generation: int = 1, scope: str | None = None) -> CostMap:
    """One entry per directly linked member pair; no transitive entries.

    With several service classes on one pair the best value wins (highest
    bandwidth, lowest anything else).
    """
    if metric not in COST_METRICS:
        raise ValueError(f"unknown cost metric {metric!r}")
    if isinstance(neighborhood, Neighborhood):
        members = set(neighborhood.members)
        scope = scope or neighborhood.neighborhood_id
    else:
        members = set(neighborhood)
    if not members:
        raise ValueError("cost map needs a non-empty neighborhood")
    pick = max if metric == "bandwidth" else min
    costs: dict[tuple[str, str], float] = {}
    for ln in links:
        if ln.cluster_a in members and ln.cluster_b in members:
            value = _link_cost(ln, metric)
            costs[ln.pair] = pick(costs[ln.pair], value) if ln.pair in costs else value
    return CostMap(scope or ",".join(sorted(members)), metric,
                   dict(sorted(costs.items())), generation)


class CostMapService:
    """Hands out cost maps with strictly increasing generations per scope."""

    def __init__(self) -> None:
        self._generation: dict[str, int] = defaultdict(int)

    def build(self, neighborhood: Neighborhood, links: Iterable[InterClusterLink],
              metric: str) -> CostMap:
        self._generation[neighborhood.neighborhood_id] += 1
        return build_cost_map(neighborhood, links, metric,
                              self._generation[neighborhood.neighborhood_id])


# tunnels ---------------------------------------------------------------

class TunnelError(RuntimeError):
    pass


class TunnelManager:
    """Abstract overlay tunnel lifecycle per inter-cluster link.

    Pre-created tunnels are up from installation.  On-demand tunnels are up
    exactly while at least one committed channel binds the link.
    """

    def __init__(self, federation: Federation, mode: str = "on_demand",
                 per_link: Mapping[tuple[str, str, str], str] | None = None):
        if mode not in ("pre_created", "on_demand"):
            raise ValueError(f"unknown tunnel mode {mode!r}")
        self.federation = federation
        self.modes = {k: (per_link or {}).get(k, mode) for k in federation.inter_links}
        self.bindings: dict[tuple[str, str, str], set[str]] = defaultdict(set)

    def install(self) -> list[tuple[str, str, str]]:
        up = []
        for key in sorted(self.modes):
            if self.modes[key] == "pre_created":
                self.federation.inter_links[key].tunnel = TunnelState.PRE_CREATED
                up.append(key)
        return up

    def tunnel_set(self, key: tuple[str, str, str], mode: str) -> TunnelState:
        self.modes[key] = mode
        link = self.federation.inter_links[key]
        if mode == "pre_created":
            link.tunnel = TunnelState.PRE_CREATED
        elif self.bindings[key]:
            link.tunnel = TunnelState.ON_DEMAND_UP
        else:
            link.tunnel = TunnelState.NONE
        return link.tunnel

    def tunnel_teardown(self, key: tuple[str, str, str]) -> None:
        if self.bindings[key]:
            raise TunnelError(f"tunnel {key} still carries {len(self.bindings[key])} channel(s)")
        self.federation.inter_links[key].tunnel = TunnelState.NONE

    def bind(self, key: tuple[str, str, str], ref: str) -> bool:
        """Attach a committed channel; True when this brought a tunnel up."""
        self.bindings[key].add(ref)
        link = self.federation.inter_links[key]
        if self.modes[key] == "on_demand" and link.tunnel is TunnelState.NONE:
            link.tunnel = TunnelState.ON_DEMAND_UP
            return True
        return False

    def unbind(self, key: tuple[str, str, str], ref: str) -> bool:
        """Detach a channel; True when this took an on-demand tunnel down."""
        self.bindings[key].discard(ref)
        link = self.federation.inter_links[key]
        if (self.modes[key] == "on_demand" and not self.bindings[key]
                and link.tunnel is TunnelState.ON_DEMAND_UP):
            link.tunnel = TunnelState.NONE
            return True
        return False

    def inconsistencies(self) -> list[str]:
        out = []
        for key, mode in sorted(self.modes.items()):
            if mode != "on_demand":
                continue
            up = self.federation.inter_links[key].tunnel is TunnelState.ON_DEMAND_UP
            if up != bool(self.bindings[key]):
                out.append(f"tunnel {key} up={up} bindings={len(self.bindings[key])}")
        return out


def measure_overlay(link: InterClusterLink, overhead_ns: float = 0.0) -> tuple[float, float]:
    if link.tunnel is TunnelState.NONE:
        raise TunnelError(f"no tunnel on {link.label()}")
    return 2 * link.latency_ns + overhead_ns, link.loss_rate


# periodic monitoring -----------------------------------------------------

def link_label(key: tuple) -> str:
    if len(key) == 3:
        return f"{key[0]}<->{key[1]}/{key[2]}"
    return f"{key[0]}->{key[1]}"


@dataclass
class SampleReport:
    rows: list[tuple[str, str, float]] = field(default_factory=list)
    # per-link window energy, only links that carried packets
    link_energy: dict[str, float] = field(default_factory=dict)
    node_network_energy: dict[str, float] = field(default_factory=dict)
    flow_energy: dict[str, float] = field(default_factory=dict)
    # flow -> originating node -> energy
    flow_node_energy: dict[str, dict[str, float]] = field(default_factory=dict)
    overlay_errors: list[str] = field(default_factory=list)


class NetworkMonitor:
    """Samples underlay/overlay state each period and keeps EMA windows.

    Link latency/loss inputs come from the scenario base values scaled by any
    active degradation.  Traffic is synthesized per committed flow.
    """

    def __init__(self, federation: Federation, *, alpha: float = DEFAULT_ALPHA,
                 energy_model: EnergyModel | None = None, overhead_ns: float = 0.0,
                 packets_per_sample: int = 4, jitter: float = 0.05,
                 rng: random.Random | None = None):
        self.federation = federation
        self.alpha = alpha
        self.energy_model = energy_model or LinearEnergyModel()
        self.overhead_ns = overhead_ns
        self.packets_per_sample = packets_per_sample
        self.jitter = jitter
        self.rng = rng or random.Random(0)
        self.windows: dict[tuple[str, str], MetricWindow] = {}
        self.base: dict[tuple, tuple[float, float]] = {}
        self.degrade: dict[tuple, tuple[float, float, float]] = {}
        for c in sorted(federation.clusters):
            for ln in federation.clusters[c].intra_links:
                self.base[ln.key] = (ln.latency_ns, ln.loss_rate)
        for key, ln in sorted(federation.inter_links.items()):
            self.base[key] = (ln.latency_ns, ln.loss_rate)
        self.node_failures: dict[str, int] = defaultdict(int)

    def _ema(self, metric: str, subject: str, sample: float) -> float:
        w = self.windows.get((metric, subject))
        if w is None:
            w = MetricWindow(metric, subject, alpha=self.alpha)
        w = ema_update(w, sample)
        self.windows[(metric, subject)] = w
        return w.ema_value

    def set_degradation(self, key: tuple, latency_factor: float = 1.0,
                        extra_latency_ns: float = 0.0, loss: float | None = None) -> None:
        base_loss = self.base[key][1]
        self.degrade[key] = (latency_factor, extra_latency_ns,
                             base_loss if loss is None else loss)

    def clear_degradation(self, key: tuple) -> None:
        self.degrade.pop(key, None)

    def _latency_sample(self, key: tuple) -> tuple[float, float]:
        base_lat, base_loss = self.base[key]
        factor, extra, loss = self.degrade.get(key, (1.0, 0.0, base_loss))
        noise = 1.0 + self.jitter * self.rng.uniform(-1.0, 1.0) if self.jitter else 1.0
        return max(0.0, (base_lat * factor + extra) * noise), loss

    def sample(self, now: int, flows: Sequence[tuple[str, Sequence[tuple[str, str]]]] = ()
               ) -> SampleReport:
        fed = self.federation
        report = SampleReport()
        rows = report.rows

        for cid in sorted(fed.clusters):
            for ln in list(fed.clusters[cid].intra_links):
                lat, loss = self._latency_sample(ln.key)
                label = link_label(ln.key)
                ema = self._ema(U_LATENCY, label, lat)
                fed.update_intra_link(ln.src_node, ln.dst_node, latency_ns=ema, loss_rate=loss)
                rows.append((U_LATENCY, label, ema))
                rows.append((U_PACKET_LOSS, label, loss))
                rows.append((U_LINK_FAILURE, label, float(ln.failures)))
        for key, ln in sorted(fed.inter_links.items()):
            lat, loss = self._latency_sample(key)
            label = link_label(key)
            ln.latency_ns = self._ema(U_LATENCY, label, lat)
            ln.loss_rate = loss
            rows.append((U_LATENCY, label, ln.latency_ns))
            rows.append((U_PACKET_LOSS, label, loss))
            if ln.tunnel is not TunnelState.NONE:
                rtt, oloss = measure_overlay(ln, self.overhead_ns)
                ln.overlay_rtt_ns = self._ema("overlayRttNanos", label, rtt)
                ln.overlay_loss = self._ema("overlayLoss", label, oloss)
                rows.append(("overlayRttNanos", label, ln.overlay_rtt_ns))

        by_link: dict[tuple[str, str], list[PacketRecord]] = defaultdict(list)
        for flow_id, hops in flows:
            for _ in range(self.packets_per_sample):
                size = self.rng.randint(64, 1500)
                for hop in hops:
                    by_link[hop].append(PacketRecord(hop, size, now, flow_id))

        egress: dict[str, dict[str, float]] = defaultdict(dict)
        egress_bytes: dict[str, int] = defaultdict(int)
        for hop in sorted(by_link):
            pkts = by_link[hop]
            energy = link_energy_window(pkts, self.energy_model)
            label = link_label(hop)
            report.link_energy[label] = energy
            egress[hop[0]][hop[1]] = energy
            egress_bytes[hop[0]] += sum(p.size for p in pkts)
            ema = self._ema(U_LINK_ENERGY, label, energy)
            rows.append((U_LINK_ENERGY, label, ema))
            if hop[0] in fed.nodes and fed.node_cluster[hop[0]] == fed.node_cluster.get(hop[1]):
                fed.update_intra_link(hop[0], hop[1], link_energy=ema)
            else:
                a, b = fed.node_cluster[hop[0]], fed.node_cluster[hop[1]]
                for ln in fed.links_between(a, b):
                    ln.link_energy = ema

        all_packets = [p for hop in sorted(by_link) for p in by_link[hop]]
        for flow_id in sorted({f for f, _ in flows}):
            by_node = flow_energy_by_node(flow_id, all_packets, self.energy_model)
            total = sum(by_node[k] for k in sorted(by_node))
            report.flow_energy[flow_id] = total
            report.flow_node_energy[flow_id] = dict(sorted(by_node.items()))
            rows.append((U_FLOW_ENERGY, flow_id, self._ema(U_FLOW_ENERGY, flow_id, total)))

        period_s = 1.0
        for node_id in sorted(fed.nodes):
            report.node_network_energy[node_id] = node_network_energy(egress.get(node_id, {}))
            links_out = [ln for ln in fed.clusters[fed.node_cluster[node_id]].intra_links
                         if ln.src_node == node_id]
            degree = sum(1 for ln in links_out if ln.failures == 0)
            failures = sum(ln.failures for ln in links_out) + self.node_failures[node_id]
            rows.append((U_NODE_BANDWIDTH, node_id, egress_bytes.get(node_id, 0) / period_s))
            rows.append((U_NODE_DEGREE, node_id, float(degree)))
            rows.append((U_NODE_NET_FAILURE, node_id, float(failures)))
        return report


def channel_hops(federation: Federation, binding) -> list[tuple[str, str]]:
    """Directed node-level hops traversed by a bound channel."""
    src_node, dst_node = binding.src[1], binding.dst[1]
    if binding.link is None:
        return [tuple(h) for h in
                federation.path(src_node, dst_node, binding.bandwidth_bps)[2]]
    gw_a = federation.gateway(binding.src[0])
    gw_b = federation.gateway(binding.dst[0])
    hops = [tuple(h) for h in federation.path(src_node, gw_a)[2]]
    hops.append((gw_a, gw_b))
    hops.extend(tuple(h) for h in federation.path(gw_b, dst_node)[2])
    return hops
