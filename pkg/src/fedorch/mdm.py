"""Event-sourced typed property graph for data-aware placement."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any, Iterable, Mapping

from .model import ConstraintKind, Workload

# entity type -> stable attributes its identity derives from
SCHEMA: dict[str, tuple[str, ...]] = {
    "cluster": ("cluster_id",),
    "node": ("cluster_id", "name"),
    "namespace": ("cluster_id", "name"),
    "workload": ("cluster_id", "namespace", "name"),
    "datastore": ("cluster_id", "name"),
}
RELATIONSHIP_TYPES = frozenset({"contains", "hosts", "reads"})
DEFAULT_COMPLIANCE_THRESHOLD = 0.8


class MetadataError(ValueError):
    pass


class ScopeError(KeyError):
    pass


def _digest(doc: Any) -> str:
    raw = json.dumps(doc, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(raw.encode()).hexdigest()[:24]


def global_id(type_: str, stable_attrs: Mapping[str, Any]) -> str:
    """Content-addressed identity; attribute order never matters."""
    declared = SCHEMA.get(type_)
    if declared is None:
        raise MetadataError(f"entity type {type_!r} is not in the schema")
    missing = [a for a in declared if a not in stable_attrs]
    if missing:
        raise MetadataError(f"{type_} identity needs {', '.join(missing)}")
    key = tuple(stable_attrs[a] for a in sorted(declared))
    try:
        return _cached_id(type_, key)
    except TypeError:  # unhashable attribute values
        return _cached_id.__wrapped__(type_, key)


@lru_cache(maxsize=65536)
def _cached_id(type_: str, values: tuple) -> str:
    names = sorted(SCHEMA[type_])
    return f"{type_}:{_digest([type_, [[a, v] for a, v in zip(names, values)]])}"


def relationship_id(type_: str, src: str, dst: str) -> str:
    return f"{type_}:{_digest([type_, src, dst])}"


@dataclass
class Entity:
    global_id: str
    type: str
    attributes: dict[str, Any]
    owner: str


@dataclass
class Relationship:
    rel_id: str
    type: str
    src_entity: str
    dst_entity: str
    attributes: dict[str, Any]
    owner: str


@dataclass(frozen=True)
class MetadataEvent:
    kind: str  # insert | update | delete
    target: str  # entity | relationship
    payload: dict[str, Any]
    connector_id: str
    sequence: int


class MetadataGraph:
    def __init__(self) -> None:
        self.entities: dict[str, Entity] = {}
        self.relationships: dict[str, Relationship] = {}
        self.last_sequence: dict[str, int] = {}
        self.log: list[MetadataEvent] = []

    def apply(self, event: MetadataEvent) -> "MetadataGraph":
        last = self.last_sequence.get(event.connector_id, 0)
        if event.sequence <= last:
            raise MetadataError(f"{event.connector_id} sequence {event.sequence} "
                                f"does not follow {last}")
        if event.kind not in ("insert", "update", "delete"):
            raise MetadataError(f"unknown event kind {event.kind!r}")
        if event.target == "entity":
            self._apply_entity(event)
        elif event.target == "relationship":
            self._apply_relationship(event)
        else:
            raise MetadataError(f"unknown event target {event.target!r}")
        self.last_sequence[event.connector_id] = event.sequence
        self.log.append(event)
        return self

    def _owned(self, obj, connector: str) -> None:
        if obj.owner != connector:
            raise MetadataError(f"{connector} may not mutate {obj.owner}'s record")

    def _apply_entity(self, ev: MetadataEvent) -> None:
        p = ev.payload
        gid = p["global_id"]
        current = self.entities.get(gid)
        if ev.kind == "insert":
            if p["type"] not in SCHEMA:
                raise MetadataError(f"entity type {p['type']!r} is not in the schema")
            if current is not None:
                raise MetadataError(f"entity {gid} already exists")
            self.entities[gid] = Entity(gid, p["type"], dict(p.get("attributes", {})),
                                        ev.connector_id)
            return
        if current is None:
            raise MetadataError(f"entity {gid} does not exist")
        self._owned(current, ev.connector_id)
        if ev.kind == "update":
            _merge(current.attributes, p.get("attributes", {}))
        else:
            del self.entities[gid]
            for rid in [r for r, rel in self.relationships.items()
                        if gid in (rel.src_entity, rel.dst_entity)]:
                del self.relationships[rid]

    def _apply_relationship(self, ev: MetadataEvent) -> None:
        p = ev.payload
        rid = p["rel_id"]
        current = self.relationships.get(rid)
        if ev.kind == "insert":
            if p["type"] not in RELATIONSHIP_TYPES:
                raise MetadataError(f"relationship type {p['type']!r} is not in the schema")
            for end in (p["src"], p["dst"]):
                if end not in self.entities:
                    raise MetadataError(f"relationship {rid} endpoint {end} does not exist")
            if current is not None:
                raise MetadataError(f"relationship {rid} already exists")
            self.relationships[rid] = Relationship(rid, p["type"], p["src"], p["dst"],
                                                   dict(p.get("attributes", {})),
                                                   ev.connector_id)
            return
        if current is None:
            if ev.kind == "delete":
                # removed with an endpoint entity already
                return
            raise MetadataError(f"relationship {rid} does not exist")
        self._owned(current, ev.connector_id)
        if ev.kind == "update":
            _merge(current.attributes, p.get("attributes", {}))
        else:
            del self.relationships[rid]

    # queries -------------------------------------------------------------

    def of_type(self, type_: str) -> list[Entity]:
        return [e for _, e in sorted(self.entities.items()) if e.type == type_]

    def hosting_clusters(self, datastore: str) -> dict[str, Entity]:
        """cluster_id -> datastore entity for every cluster hosting ``datastore``."""
        out = {}
        for rel in self.relationships.values():
            if rel.type != "hosts":
                continue
            ds = self.entities[rel.dst_entity]
            cl = self.entities[rel.src_entity]
            if ds.type == "datastore" and ds.attributes.get("name") == datastore:
                out[cl.attributes["cluster_id"]] = ds
        return out

    def dump(self) -> dict[str, list]:
        return {
            "nodes": [{"id": e.global_id, "type": e.type, "owner": e.owner,
                       "attributes": dict(sorted(e.attributes.items()))}
                      for _, e in sorted(self.entities.items())],
            "edges": [{"id": r.rel_id, "type": r.type, "src": r.src_entity,
                       "dst": r.dst_entity, "owner": r.owner}
                      for _, r in sorted(self.relationships.items())],
        }

    def state(self) -> tuple[dict, dict]:
        """Comparable (entities, relationships) content without ownership."""
        ents = {g: (e.type, dict(e.attributes)) for g, e in self.entities.items()}
        rels = {r: (x.type, x.src_entity, x.dst_entity, dict(x.attributes))
                for r, x in self.relationships.items()}
        return ents, rels


def _merge(attrs: dict, changes: Mapping[str, Any]) -> None:
    for k, v in changes.items():
        if v is None:
            attrs.pop(k, None)
        else:
            attrs[k] = v


def apply_event(graph: MetadataGraph, event: MetadataEvent) -> MetadataGraph:
    return graph.apply(event)


def query_constraints(workload: Workload, graph: MetadataGraph,
                      compliance_threshold: float = DEFAULT_COMPLIANCE_THRESHOLD
                      ) -> list[tuple[str, set[str]]]:
    """Eligible cluster set per hard data constraint of ``workload``.

    Unresolvable references yield an empty set, never an omission.
    """
    out = []
    clusters = {e.attributes["cluster_id"]: e for e in graph.of_type("cluster")}
    for c in workload.data_constraints:
        if c.kind is ConstraintKind.LOCALITY:
            out.append(("locality", set(graph.hosting_clusters(c.datastore))))
        elif c.kind is ConstraintKind.COMPLIANCE:
            threshold = compliance_threshold if c.threshold is None else c.threshold
            out.append(("compliance", {cid for cid, e in clusters.items()
                                       if e.attributes.get("compliance_score", 0.0) >= threshold}))
        elif c.kind is ConstraintKind.FRESHNESS:
            hosts = graph.hosting_clusters(c.datastore)
            limit = c.max_age_s if c.max_age_s is not None else float("inf")
            out.append(("freshness", {cid for cid, ds in hosts.items()
                                      if ds.attributes.get("freshness_s", float("inf")) <= limit}))
    return out


# connectors ------------------------------------------------------------

@dataclass
class Snapshot:
    entities: dict[str, tuple[str, dict[str, Any]]] = field(default_factory=dict)
    relationships: dict[str, tuple[str, str, str, dict[str, Any]]] = field(default_factory=dict)

    def add_entity(self, type_: str, attrs: Mapping[str, Any]) -> str:
        gid = global_id(type_, attrs)
        self.entities[gid] = (type_, dict(attrs))
        return gid

    def add_relationship(self, type_: str, src: str, dst: str,
                         attrs: Mapping[str, Any] | None = None) -> str:
        rid = relationship_id(type_, src, dst)
        self.relationships[rid] = (type_, src, dst, dict(attrs or {}))
        return rid


class Connector:
    """Reflects a native system into the graph as a minimal event diff."""

    KINDS = ("kubernetes", "metrics", "compliance")

    def __init__(self, connector_id: str, kind: str):
        if kind not in self.KINDS:
            raise ValueError(f"unknown connector kind {kind!r}")
        self.connector_id = connector_id
        self.kind = kind
        self.reflected = Snapshot()
        self.sequence = 0

    def _event(self, kind: str, target: str, payload: dict) -> MetadataEvent:
        self.sequence += 1
        return MetadataEvent(kind, target, payload, self.connector_id, self.sequence)

    def sync(self, snapshot: Snapshot) -> list[MetadataEvent]:
        prior = self.reflected
        events = []
        for rid in sorted(set(prior.relationships) - set(snapshot.relationships)):
            events.append(self._event("delete", "relationship", {"rel_id": rid}))
        for gid in sorted(set(prior.entities) - set(snapshot.entities)):
            events.append(self._event("delete", "entity", {"global_id": gid}))
        for gid, (type_, attrs) in sorted(snapshot.entities.items()):
            if gid not in prior.entities:
                events.append(self._event("insert", "entity", {
                    "global_id": gid, "type": type_, "attributes": dict(attrs)}))
            else:
                delta = _delta(prior.entities[gid][1], attrs)
                if delta:
                    events.append(self._event("update", "entity",
                                              {"global_id": gid, "attributes": delta}))
        for rid, (type_, src, dst, attrs) in sorted(snapshot.relationships.items()):
            if rid not in prior.relationships:
                events.append(self._event("insert", "relationship", {
                    "rel_id": rid, "type": type_, "src": src, "dst": dst,
                    "attributes": dict(attrs)}))
            else:
                delta = _delta(prior.relationships[rid][3], attrs)
                if delta:
                    events.append(self._event("update", "relationship",
                                              {"rel_id": rid, "attributes": delta}))
        self.reflected = Snapshot(dict(snapshot.entities), dict(snapshot.relationships))
        return events


def connector_sync(connector: Connector, snapshot: Snapshot) -> list[MetadataEvent]:
    return connector.sync(snapshot)


def _delta(old: Mapping[str, Any], new: Mapping[str, Any]) -> dict[str, Any]:
    out = {k: v for k, v in new.items() if old.get(k) != v}
    out.update({k: None for k in old if k not in new})
    return out


def portability(restart_count: int) -> float:
    """Pod restarts as a portability proxy: fewer restarts, more portable."""
    return 1.0 / (1.0 + restart_count)


def compliance_snapshot(scores: Mapping[str, float]) -> Snapshot:
    snap = Snapshot()
    for cid, s in sorted(scores.items()):
        snap.add_entity("cluster", {"cluster_id": cid, "compliance_score": s})
    return snap


def kubernetes_snapshot(nodes: Iterable[tuple[str, str]],
                        workloads: Iterable[tuple[str, str, str, str]],
                        restarts: Mapping[str, int] | None = None) -> Snapshot:
    """``nodes``: (cluster, node); ``workloads``: (cluster, namespace, name, node)."""
    restarts = restarts or {}
    snap = Snapshot()
    for cid, node in sorted(nodes):
        n = snap.add_entity("node", {"cluster_id": cid, "name": node})
        snap.add_relationship("contains", global_id("cluster", {"cluster_id": cid}), n)
    for cid, ns, name, node in sorted(workloads):
        nsid = snap.add_entity("namespace", {"cluster_id": cid, "name": ns})
        snap.add_relationship("contains", global_id("cluster", {"cluster_id": cid}), nsid)
        count = restarts.get(name, 0)
        wid = snap.add_entity("workload", {
            "cluster_id": cid, "namespace": ns, "name": name, "node": node,
            "restart_count": count, "portability": portability(count)})
        snap.add_relationship("contains", nsid, wid)
    return snap


def metrics_snapshot(datastores: Iterable[tuple[str, str, float]]) -> Snapshot:
    """``datastores``: (cluster, name, freshness age in seconds)."""
    snap = Snapshot()
    for cid, name, age in sorted(datastores):
        ds = snap.add_entity("datastore", {"cluster_id": cid, "name": name, "freshness_s": age})
        snap.add_relationship("hosts", global_id("cluster", {"cluster_id": cid}), ds)
    return snap


class MdmDirectory:
    """Maps neighborhoods onto a small set of metadata graph instances.

    Connectors report to every instance; queries must name a neighborhood
    that was assigned.
    """

    def __init__(self, instances: int = 1):
        if instances < 1:
            raise ValueError("need at least one instance")
        self.instances = [MetadataGraph() for _ in range(instances)]
        self.mapping: dict[str, int] = {}

    def assign(self, neighborhood_id: str) -> int:
        idx = int(hashlib.sha256(neighborhood_id.encode()).hexdigest(), 16) % len(self.instances)
        self.mapping[neighborhood_id] = idx
        return idx

    def instance_for(self, neighborhood_id: str) -> MetadataGraph:
        try:
            return self.instances[self.mapping[neighborhood_id]]
        except KeyError:
            raise ScopeError(f"neighborhood {neighborhood_id} is not mapped") from None

    def publish(self, events: Iterable[MetadataEvent]) -> None:
        for ev in events:
            for g in self.instances:
                g.apply(ev)

    def query(self, neighborhood_id: str, workload: Workload,
              compliance_threshold: float = DEFAULT_COMPLIANCE_THRESHOLD):
        return query_constraints(workload, self.instance_for(neighborhood_id),
                                 compliance_threshold)
