"""Neighborhood composition: similarity partitioning and bounded selection."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .model import ApplicationGroup, Neighborhood

DEFAULT_K = 3


class SelectionError(RuntimeError):
    def __init__(self, message: str, constraint: str | None = None):
        super().__init__(message)
        self.constraint = constraint


@dataclass(frozen=True)
class Partitioning:
    generation: int
    classes: tuple[tuple[str, ...], ...]
    feature_schema: tuple[str, ...] = ()

    def class_of(self, cluster_id: str) -> int:
        for i, cls in enumerate(self.classes):
            if cluster_id in cls:
                return i
        raise KeyError(cluster_id)

    @property
    def clusters(self) -> set[str]:
        return {c for cls in self.classes for c in cls}


def normalized_features(features: Mapping[str, Sequence[float]]) -> tuple[list[str], np.ndarray]:
    ids = sorted(features)
    mat = np.array([list(features[c]) for c in ids], dtype=float)
    if mat.ndim != 2:
        raise ValueError("feature vectors must share one length")
    lo = mat.min(axis=0)
    span = mat.max(axis=0) - lo
    span[span == 0] = 1.0
    return ids, (mat - lo) / span


def partition_clusters(features: Mapping[str, Sequence[float]], threshold: float,
                       generation: int = 1,
                       feature_schema: Sequence[str] = ()) -> Partitioning:
    """Single-linkage agglomeration on min-max normalized feature vectors.

    Classes merge while the closest pair of classes is nearer than
    ``threshold``.  Output classes are sorted and listed by first member.
    """
    if not features:
        raise ValueError("no clusters to partition")
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    if len({len(v) for v in features.values()}) != 1:
        raise ValueError("feature vectors must share one length")
    ids, mat = normalized_features(features)
    n = len(ids)
    dist = np.sqrt(((mat[:, None, :] - mat[None, :, :]) ** 2).sum(axis=2))

    # Kruskal over edges shorter than the threshold; single-linkage merges
    # happen in exactly this order.
    parent = list(range(n))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    edges = sorted((dist[i, j], i, j) for i in range(n) for j in range(i + 1, n)
                   if dist[i, j] < threshold)
    for _, i, j in edges:
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)

    groups: dict[int, list[str]] = {}
    for i, cid in enumerate(ids):
        groups.setdefault(find(i), []).append(cid)
    classes = tuple(sorted(tuple(sorted(g)) for g in groups.values()))
    return Partitioning(generation, classes, tuple(feature_schema))


def eligible_clusters(all_clusters: Iterable[str],
                      constraints: Sequence[tuple[str, set[str]]] = ()) -> set[str]:
    """Intersect hard-constraint results; raise naming the emptying constraint."""
    eligible = set(all_clusters)
    for kind, allowed in constraints:
        eligible &= set(allowed)
        if not eligible:
            raise SelectionError(f"no cluster satisfies {kind} constraint", kind)
    return eligible


def _rank(members: Iterable[str], scores: Mapping[str, float]) -> list[str]:
    return sorted(members, key=lambda c: (-scores.get(c, 0.0), c))


def select_neighborhood(app: ApplicationGroup, partitioning: Partitioning,
                        scores: Mapping[str, float], k: int = DEFAULT_K,
                        constraints: Sequence[tuple[str, set[str]]] = (),
                        revision: int = 0,
                        cover: Sequence[set[str]] = ()) -> Neighborhood:
    """Top-k eligible clusters from the best class, spilling into next classes.

    Classes rank by mean score of their eligible members (ties: smallest
    member id).  Members rank by (score desc, id asc).  Each set in ``cover``
    (typically one per workload) must meet the result; an uncovered set swaps
    its best cluster in for the lowest-ranked member no other set relies on.
    """
    if k < 1:
        raise ValueError("k must be a positive integer")
    if not partitioning.classes:
        raise SelectionError("no clusters registered")
    eligible = eligible_clusters(partitioning.clusters, constraints)

    ranked_classes = []
    for cls in partitioning.classes:
        members = [c for c in cls if c in eligible]
        if members:
            mean = math.fsum(scores.get(c, 0.0) for c in members) / len(members)
            ranked_classes.append((-mean, min(members), members))
    ranked_classes.sort()

    chosen: list[str] = []
    for _, _, members in ranked_classes:
        if len(chosen) >= k:
            break
        take = _rank(members, scores)[: k - len(chosen)]
        chosen.extend(take)
    chosen = _repair_cover(chosen, [set(c) & eligible for c in cover], scores, k)
    used_classes = sum(1 for cls in partitioning.classes if set(cls) & set(chosen))
    return Neighborhood(
        neighborhood_id=f"{app.group_id}/nh{revision}",
        application_group=app.group_id,
        members=frozenset(chosen),
        bound_k=k,
        revision=revision,
        spans_classes=used_classes > 1,
    )


def _repair_cover(chosen: list[str], cover: list[set[str]], scores: Mapping[str, float],
                  k: int) -> list[str]:
    chosen = list(chosen)
    done: list[set[str]] = []
    for need in sorted(cover, key=lambda c: (len(c), sorted(c))):
        if not need:
            continue
        if need & set(chosen):
            done.append(need)
            continue
        best = _rank(sorted(need), scores)[0]
        if len(chosen) < k:
            chosen.append(best)
        else:
            for victim in reversed(chosen):
                rest = set(chosen) - {victim}
                if all(d & rest for d in done):
                    chosen[chosen.index(victim)] = best
                    break
            else:
                continue
        done.append(need)
    return chosen


def reevaluate_neighborhood(current: Neighborhood, app: ApplicationGroup,
                            partitioning: Partitioning, scores: Mapping[str, float],
                            constraints: Sequence[tuple[str, set[str]]] = (),
                            cover: Sequence[set[str]] = ()) -> Neighborhood:
    """Re-run selection; keep the id when membership is unchanged."""
    if not partitioning.clusters:
        raise SelectionError("no clusters registered")
    fresh = select_neighborhood(app, partitioning, scores, current.bound_k, constraints,
                                revision=current.revision + 1, cover=cover)
    if fresh.members == current.members:
        return current
    return fresh
