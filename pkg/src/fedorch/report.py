"""Aggregate run traces into comparison rows."""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path
from typing import Iterable

from .harness import TRACE_SCHEMA

COLUMNS = ("trace", "scenario", "seed", "placement_success_rate", "mean_channel_slack_ns",
           "total_network_energy_j", "migrations", "rollbacks")


class TraceError(ValueError):
    pass


def read_trace(path: str | Path) -> list[dict]:
    try:
        lines = Path(path).read_text().splitlines()
        records = [json.loads(line) for line in lines if line.strip()]
    except (OSError, json.JSONDecodeError) as exc:
        raise TraceError(f"cannot read trace {path}: {exc}") from exc
    if not records or "schema" not in records[0]:
        raise TraceError(f"{path}: missing trace header")
    return records


def summarize(records: list[dict], name: str = "") -> dict:
    """One report row; a pure fold over the trace records."""
    header, body = records[0], records[1:]
    energy = 0.0
    migrations = rollbacks = 0
    final = None
    for r in body:
        kind = r["kind"]
        if kind == "metric_sample":
            for v in r["payload"].get("link_energy", {}).values():
                energy += v
        elif kind == "migrated":
            migrations += 1
        elif kind == "rolled_back":
            rollbacks += 1
        elif kind == "final":
            final = r["payload"]
    if final is None:
        raise TraceError(f"{name or 'trace'}: no final record")
    apps = final["summary"]["applications"]
    slacks = [s for a in final["apps"].values() for s in a["slack_ns"].values()
              if isinstance(s, (int, float)) and math.isfinite(s)]
    return {
        "trace": name,
        "scenario": header.get("scenario", ""),
        "seed": header.get("seed", ""),
        "placement_success_rate": final["summary"]["scheduled"] / apps if apps else "",
        "mean_channel_slack_ns": math.fsum(slacks) / len(slacks) if slacks else "",
        "total_network_energy_j": energy,
        "migrations": migrations,
        "rollbacks": rollbacks,
    }


def report(paths: Iterable[str | Path]) -> list[dict]:
    traces = [(str(p), read_trace(p)) for p in paths]
    schemas = {t[0].get("schema") for _, t in traces}
    if len(schemas) > 1:
        raise TraceError(f"mixed trace schemas: {', '.join(sorted(map(str, schemas)))}")
    if schemas and schemas != {TRACE_SCHEMA}:
        raise TraceError(f"unsupported trace schema {schemas.pop()!r}")
    return [summarize(records, name) for name, records in traces]


def to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()
