"""Declarative scenario documents (YAML) to in-memory scenarios."""

from __future__ import annotations

from pathlib import Path
from typing import Any, Mapping

import yaml

from .model import (
    ApplicationGroup, Channel, ClusterState, ConstraintKind, ConstraintRef, Datastore,
    InterClusterLink, LinkSpec, NodeSpec, Orientation, PerformanceProfile, Scenario,
    SoftPreferences, Workload, lenient,
)
from .pdlc import METRIC_ORIENTATION, PROFILES

SCHEMA = "fedorch/1"
_UNITS = (("_ns", 1), ("_us", 1_000), ("_ms", 1_000_000), ("_s", 1_000_000_000))


class ScenarioParseError(ValueError):
    pass


def _ns(doc: Mapping, base: str, default: float | None = None) -> float:
    for suffix, scale in _UNITS:
        if base + suffix in doc:
            return float(doc[base + suffix]) * scale
    if default is None:
        raise ScenarioParseError(f"missing {base}_ns/_us/_ms/_s in {dict(doc)}")
    return default


def _req(doc: Mapping, key: str, where: str) -> Any:
    if key not in doc:
        raise ScenarioParseError(f"{where}: missing field {key!r}")
    return doc[key]


def _profile(spec: Any, where: str) -> PerformanceProfile:
    if isinstance(spec, str):
        if spec not in PROFILES:
            raise ScenarioParseError(f"{where}: unknown profile {spec!r}")
        return PROFILES[spec]
    if not isinstance(spec, Mapping):
        raise ScenarioParseError(f"{where}: profile must be a name or a mapping")
    weights = {str(k): float(v) for k, v in _req(spec, "weights", where).items()}
    orientation = {m: METRIC_ORIENTATION[m] for m in weights if m in METRIC_ORIENTATION}
    orientation.update({str(k): Orientation(v)
                        for k, v in (spec.get("orientation") or {}).items()})
    return PerformanceProfile(str(spec.get("name", "custom")), weights, orientation)


def _cluster(doc: Mapping) -> ClusterState:
    cid = str(_req(doc, "id", "cluster"))
    nodes = [NodeSpec(str(_req(n, "id", f"cluster {cid} node")), cid,
                      int(_req(n, "cpu", f"node {n.get('id')}")),
                      int(_req(n, "mem", f"node {n.get('id')}")),
                      float(n.get("energy", 0.0)), bool(n.get("gateway", False)),
                      {str(k): str(v) for k, v in (n.get("labels") or {}).items()})
             for n in doc.get("nodes") or []]
    links = []
    for ln in doc.get("links") or []:
        src, dst = str(_req(ln, "src", "link")), str(_req(ln, "dst", "link"))
        args = (_ns(ln, "latency"), int(float(_req(ln, "bandwidth_bps", "link"))),
                float(ln.get("loss", 0.0)))
        links.append(LinkSpec(src, dst, *args))
        if ln.get("bidirectional", True):
            links.append(LinkSpec(dst, src, *args))
    cluster = ClusterState(cid, nodes, links,
                           tuple(float(x) for x in doc.get("features") or ()),
                           float(doc.get("compliance", 1.0)))
    return cluster


def _workload(doc: Mapping) -> Workload:
    wid = str(_req(doc, "id", "workload"))
    constraints = []
    for c in doc.get("constraints") or []:
        constraints.append(ConstraintRef(
            ConstraintKind(_req(c, "kind", f"workload {wid} constraint")),
            c.get("datastore"),
            None if c.get("threshold") is None else float(c["threshold"]),
            None if c.get("max_age_s") is None else float(c["max_age_s"])))
    prefs = doc.get("preferences") or {}
    return Workload(wid, int(_req(doc, "cpu", f"workload {wid}")),
                    int(_req(doc, "mem", f"workload {wid}")), tuple(constraints),
                    SoftPreferences(tuple(str(x) for x in prefs.get("anti_affinity", ())),
                                    prefs.get("min_score")))


def _application(doc: Mapping) -> ApplicationGroup:
    aid = str(_req(doc, "id", "application"))
    channels = tuple(
        Channel(str(_req(c, "id", f"application {aid} channel")),
                str(_req(c, "src", f"channel {c.get('id')}")),
                str(_req(c, "dst", f"channel {c.get('id')}")),
                _ns(c, "latency"), int(float(c.get("bandwidth_bps", 0))),
                c.get("class", "assured"))
        for c in doc.get("channels") or [])
    return ApplicationGroup(aid, tuple(_workload(w) for w in doc.get("workloads") or []),
                            channels, _profile(doc.get("profile", "greenness"), aid))


def _event(doc: Mapping) -> dict:
    ev = {str(k): v for k, v in doc.items() if k not in ("at_s", "at_ms", "at_ns")}
    _req(doc, "kind", "event")
    ev["at_ns"] = int(_ns(doc, "at", 0.0))
    if "link" in ev:
        ev["link"] = [str(x) for x in ev["link"]]
    for unit, scale in (("extra_latency_ms", 1_000_000), ("extra_latency_us", 1_000)):
        if unit in ev:
            ev["extra_latency_ns"] = float(ev.pop(unit)) * scale
    return ev


def from_dict(doc: Any) -> Scenario:
    """Build a scenario without enforcing invariants; validate separately."""
    if not isinstance(doc, Mapping):
        raise ScenarioParseError("scenario document must be a mapping")
    if doc.get("schema") != SCHEMA:
        raise ScenarioParseError(f"unsupported schema {doc.get('schema')!r}, expected {SCHEMA}")
    try:
        with lenient():
            fed = doc.get("federation") or {}
            clusters = [_cluster(c) for c in fed.get("clusters") or []]
            inter = [InterClusterLink(str(_req(ln, "a", "inter link")),
                                      str(_req(ln, "b", "inter link")),
                                      ln.get("class", "assured"), _ns(ln, "latency"),
                                      int(float(_req(ln, "bandwidth_bps", "inter link"))),
                                      loss_rate=float(ln.get("loss", 0.0)))
                     for ln in fed.get("inter_links") or []]
            apps = [_application(a) for a in doc.get("applications") or []]
            stores = [Datastore(str(_req(d, "name", "datastore")),
                                str(_req(d, "cluster", "datastore")),
                                float(d.get("freshness_s", 0.0)))
                      for d in doc.get("datastores") or []]
            events = [_event(e) for e in doc.get("events") or []]
    except ScenarioParseError:
        raise
    except (TypeError, ValueError, AttributeError, KeyError) as exc:
        raise ScenarioParseError(f"malformed scenario: {exc}") from exc

    requested = {e.get("app") for e in events if e["kind"] == "deploy_request"}
    auto = [{"kind": "deploy_request", "at_ns": 0, "app": a.group_id}
            for a, raw in zip(apps, doc.get("applications") or [])
            if a.group_id not in requested and raw.get("deploy", "auto") == "auto"]
    events = auto + events
    events.sort(key=lambda e: e["at_ns"])
    return Scenario(
        name=str(doc.get("name", "scenario")),
        clusters=clusters,
        inter_links=inter,
        applications=apps,
        datastores=stores,
        events=events,
        parameters=dict(doc.get("parameters") or {}),
        tunnel_mode=str(fed.get("tunnels", "on_demand")),
        report=dict(doc.get("report") or {}),
    )


def load_text(text: str) -> Scenario:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioParseError(f"unparsable document: {exc}") from exc
    return from_dict(doc)


def load(path: str | Path) -> Scenario:
    try:
        text = Path(path).read_text()
    except (OSError, UnicodeDecodeError) as exc:
        raise ScenarioParseError(f"cannot read {path}: {exc}") from exc
    return load_text(text)


def fixture_path(name: str) -> Path:
    """Path of a bundled scenario fixture, e.g. ``two_cluster``."""
    return Path(__file__).parent / "fixtures" / f"{name}.yaml"


def load_fixture(name: str) -> Scenario:
    return load(fixture_path(name))
