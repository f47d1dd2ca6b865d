"""Reference implementations used as test oracles.

Each one is written from the rule it checks, without importing the code
under test, so agreement means two independent routes reached the same
answer.  They favour clarity over speed.
"""

from __future__ import annotations

import itertools
import math
from typing import Mapping

INF = math.inf


# paths ------------------------------------------------------------------

def floyd_warshall(nodes, links, min_bps: int = 0) -> dict[str, dict[str, float]]:
    """All-pairs shortest latency over directed links with enough bandwidth."""
    d = {a: {b: (0.0 if a == b else INF) for b in nodes} for a in nodes}
    for ln in links:
        if ln.bandwidth_bps >= min_bps and ln.latency_ns < d[ln.src_node][ln.dst_node]:
            d[ln.src_node][ln.dst_node] = float(ln.latency_ns)
    for k in nodes:
        dk = d[k]
        for i in nodes:
            dik = d[i][k]
            if dik == INF:
                continue
            di = d[i]
            for j in nodes:
                if dik + dk[j] < di[j]:
                    di[j] = dik + dk[j]
    return d


# exhaustive placement ----------------------------------------------------

class PlacementOracle:
    """Backtracking search for any placement meeting every hard constraint.

    Hard constraints: node capacity, schedulability, neighborhood membership,
    per-workload eligible clusters, channel latency bounds (intra path or
    gateway-link-gateway), a direct link of the channel's service class and
    aggregate link bandwidth.  Soft preferences are ignored.
    """

    def __init__(self, app, fed, members, eligible: Mapping[str, set] | None = None):
        self.app = app
        self.members = set(members)
        self.eligible = dict(eligible or {})
        self.gateway = {}
        self.node_cluster = {}
        self.cap = {}
        self.free = {}
        self.dist: dict[tuple[str, int], dict] = {}
        self.clusters = {}
        for cid in sorted(self.members):
            cl = fed.clusters[cid]
            self.clusters[cid] = cl
            for n in cl.nodes:
                self.node_cluster[n.node_id] = cid
                if n.gateway:
                    self.gateway[cid] = n.node_id
                if n.node_id in cl.cordoned:
                    continue
                used = cl.allocations.get(n.node_id, (0, 0))
                self.free[n.node_id] = [n.cpu_capacity - used[0], n.mem_capacity - used[1]]
        self.links = {}
        for ln in fed.inter_links.values():
            key = (min(ln.cluster_a, ln.cluster_b), max(ln.cluster_a, ln.cluster_b),
                   ln.service_class.value)
            self.links[key] = (float(ln.latency_ns), ln.bandwidth_bps - ln.bandwidth_reserved)
        self.channels = list(app.channels)
        self.workloads = {w.workload_id: w for w in app.workloads}

    def _d(self, cid: str, bps: int):
        key = (cid, bps)
        if key not in self.dist:
            cl = self.clusters[cid]
            self.dist[key] = floyd_warshall([n.node_id for n in cl.nodes], cl.intra_links, bps)
        return self.dist[key]

    def channel_ok(self, ch, src, dst):
        """(feasible, link key or None) for one channel between placed ends."""
        (ca, na), (cb, nb) = src, dst
        if ca == cb:
            return self._d(ca, ch.bandwidth_req_bps)[na][nb] <= ch.latency_bound_ns, None
        key = (min(ca, cb), max(ca, cb), ch.service_class.value)
        if key not in self.links:
            return False, None
        lat = (self._d(ca, 0)[na][self.gateway[ca]] + self.links[key][0]
               + self._d(cb, 0)[self.gateway[cb]][nb])
        return lat <= ch.latency_bound_ns, key

    def domain(self, wid):
        allowed = self.eligible.get(wid)
        w = self.workloads[wid]
        out = []
        for n, (cpu, mem) in sorted(self.free.items()):
            c = self.node_cluster[n]
            if allowed is not None and c not in allowed:
                continue
            if cpu >= w.cpu_req and mem >= w.mem_req:
                out.append((c, n))
        return out

    def solve(self, fixed: Mapping[str, tuple[str, str]] | None = None):
        """A complete feasible assignment extending ``fixed``, or None."""
        fixed = dict(fixed or {})
        free = {n: list(v) for n, v in self.free.items()}
        used_bw: dict[tuple, int] = {}
        assign: dict[str, tuple[str, str]] = {}

        def touching(wid):
            return [c for c in self.channels if wid in (c.src_workload, c.dst_workload)]

        def compatible(wid, target, assign):
            """Channel checks of ``wid`` at ``target`` against assigned peers."""
            need: dict[tuple, int] = {}
            for ch in touching(wid):
                peer = ch.dst_workload if ch.src_workload == wid else ch.src_workload
                if peer not in assign:
                    continue
                src, dst = (target, assign[peer]) if ch.src_workload == wid \
                    else (assign[peer], target)
                ok, key = self.channel_ok(ch, src, dst)
                if not ok:
                    return None
                if key is not None:
                    need[key] = need.get(key, 0) + ch.bandwidth_req_bps
            for key, bps in need.items():
                if used_bw.get(key, 0) + bps > self.links[key][1]:
                    return None
            return need

        def put(wid, target, need, sign):
            w = self.workloads[wid]
            free[target[1]][0] -= sign * w.cpu_req
            free[target[1]][1] -= sign * w.mem_req
            for key, bps in need.items():
                used_bw[key] = used_bw.get(key, 0) + sign * bps

        for wid, target in sorted(fixed.items()):
            if target[1] not in free:
                return None
            need = compatible(wid, target, assign)
            if need is None:
                return None
            put(wid, target, need, 1)
            assign[wid] = target
        if any(v < 0 for pair in free.values() for v in pair):
            return None

        domains = {wid: self.domain(wid) for wid in self.workloads if wid not in fixed}
        degree = {wid: len(touching(wid)) for wid in domains}
        order = sorted(domains, key=lambda w: (len(domains[w]), -degree[w], w))

        def fits(wid, target):
            w = self.workloads[wid]
            cpu, mem = free[target[1]]
            return w.cpu_req <= cpu and w.mem_req <= mem

        def forward_ok(rest):
            for u in rest:
                if not any(fits(u, t) and compatible(u, t, assign) is not None
                           for t in domains[u]):
                    return False
            nodes = {t[1] for u in rest for t in domains[u]}
            need_cpu = sum(self.workloads[u].cpu_req for u in rest)
            need_mem = sum(self.workloads[u].mem_req for u in rest)
            return (need_cpu <= sum(free[n][0] for n in nodes)
                    and need_mem <= sum(free[n][1] for n in nodes))

        def search(i):
            if i == len(order):
                return True
            wid = order[i]
            for target in domains[wid]:
                if not fits(wid, target):
                    continue
                need = compatible(wid, target, assign)
                if need is None:
                    continue
                put(wid, target, need, 1)
                assign[wid] = target
                if forward_ok(order[i + 1:]) and search(i + 1):
                    return True
                del assign[wid]
                put(wid, target, need, -1)
            return False

        if order and not forward_ok(order):
            return None
        return dict(assign) if search(0) else None


# clustering and selection ------------------------------------------------

def single_linkage(features: Mapping[str, list[float]], threshold: float) -> list[tuple[str, ...]]:
    """Naive agglomeration: repeatedly merge the closest pair of classes."""
    ids = sorted(features)
    dims = len(features[ids[0]])
    lo = [min(features[c][k] for c in ids) for k in range(dims)]
    hi = [max(features[c][k] for c in ids) for k in range(dims)]
    norm = {c: [(features[c][k] - lo[k]) / (hi[k] - lo[k]) if hi[k] > lo[k] else 0.0
                for k in range(dims)] for c in ids}

    def dist(a, b):
        return math.sqrt(sum((x - y) ** 2 for x, y in zip(norm[a], norm[b])))

    classes = [[c] for c in ids]
    while len(classes) > 1:
        best = None
        for i in range(len(classes)):
            for j in range(i + 1, len(classes)):
                d = min(dist(a, b) for a in classes[i] for b in classes[j])
                if best is None or d < best[0]:
                    best = (d, i, j)
        if best[0] >= threshold:
            break
        _, i, j = best
        classes[i] = classes[i] + classes[j]
        del classes[j]
    return sorted(tuple(sorted(c)) for c in classes)


def select_oracle(classes, scores: Mapping[str, float], k: int, eligible: set[str]) -> set[str]:
    """Brute force over all subsets of the bounded size.

    Classes are ranked by the mean score of their eligible members (ties to
    the smallest member).  The winner is the subset whose members, listed by
    (class rank, score desc, id), form the smallest sequence.
    """
    ranked = []
    for cls in classes:
        members = [c for c in cls if c in eligible]
        if members:
            mean = sum(scores.get(c, 0.0) for c in members) / len(members)
            ranked.append((-mean, min(members), members))
    ranked.sort()
    rank_of = {c: i for i, (_, _, members) in enumerate(ranked) for c in members}
    pool = sorted(rank_of)
    size = min(k, len(pool))

    def key(c):
        return (rank_of[c], -scores.get(c, 0.0), c)

    best = None
    for subset in itertools.combinations(pool, size):
        seq = sorted(key(c) for c in subset)
        if best is None or seq < best[0]:
            best = (seq, set(subset))
    return best[1] if best else set()


def greedy_local(workloads, nodes, free: Mapping[str, tuple[int, int]],
                 node_score: Mapping[str, float]):
    """Largest workload first onto the best-scoring node that fits it."""
    free = {n: list(v) for n, v in free.items()}
    placed, overflow = {}, []
    for w in sorted(workloads, key=lambda w: (-w.cpu_req, w.workload_id)):
        fitting = [n for n in nodes if free[n][0] >= w.cpu_req and free[n][1] >= w.mem_req]
        if not fitting:
            overflow.append(w.workload_id)
            continue
        n = sorted(fitting, key=lambda n: (-node_score.get(n, 0.0), -free[n][0], n))[0]
        free[n][0] -= w.cpu_req
        free[n][1] -= w.mem_req
        placed[w.workload_id] = n
    return placed, overflow


# scoring -----------------------------------------------------------------

def minmax_scores(raw: Mapping[str, Mapping[str, float]], weights: Mapping[str, float],
                  lower_better: set[str]) -> dict[str, float]:
    """Weighted mean of min-max scaled metrics, 1.0 best, constant columns 1.0."""
    subjects = sorted(raw)
    total = sum(weights.values())
    out = {}
    for s in subjects:
        acc = 0.0
        for m, w in weights.items():
            col = [raw[x][m] for x in subjects]
            lo, hi = min(col), max(col)
            v = 1.0 if hi == lo else (raw[s][m] - lo) / (hi - lo)
            if hi != lo and m in lower_better:
                v = 1.0 - v
            acc += w * v
        out[s] = acc / total
    return out


def argmax_auction(bids: Mapping[str, float]):
    """(winner, stability) by sorting; stability 1 - gap of the top two."""
    ranked = sorted(bids.items(), key=lambda kv: (-kv[1], kv[0]))
    if len(ranked) == 1:
        return ranked[0][0], 1.0
    return ranked[0][0], 1.0 - (ranked[0][1] - ranked[1][1])


# metadata ------------------------------------------------------------------

def replay_events(events):
    """Fold an event log into (entities, relationships) the naive way."""
    ents: dict[str, tuple] = {}
    rels: dict[str, tuple] = {}
    for ev in events:
        p = ev.payload
        if ev.target == "entity":
            gid = p["global_id"]
            if ev.kind == "insert":
                ents[gid] = (p["type"], dict(p.get("attributes", {})))
            elif ev.kind == "update":
                attrs = dict(ents[gid][1])
                for k, v in p.get("attributes", {}).items():
                    if v is None:
                        attrs.pop(k, None)
                    else:
                        attrs[k] = v
                ents[gid] = (ents[gid][0], attrs)
            else:
                del ents[gid]
                rels = {r: v for r, v in rels.items() if gid not in (v[1], v[2])}
        else:
            rid = p["rel_id"]
            if ev.kind == "insert":
                rels[rid] = (p["type"], p["src"], p["dst"], dict(p.get("attributes", {})))
            elif ev.kind == "update":
                t, s, d, attrs = rels[rid]
                attrs = dict(attrs)
                for k, v in p.get("attributes", {}).items():
                    if v is None:
                        attrs.pop(k, None)
                    else:
                        attrs[k] = v
                rels[rid] = (t, s, d, attrs)
            else:
                rels.pop(rid, None)
    return ents, rels
