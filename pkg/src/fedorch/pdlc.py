"""Context scoring, baseline forecasting and auction-based recommendations.

Everything here is advisory: functions return scores, bids and
recommendations and never touch placements.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Protocol, Sequence

import numpy as np

from .model import Neighborhood, Orientation, PerformanceProfile, Recommendation

LOWER = Orientation.LOWER_IS_BETTER
HIGHER = Orientation.HIGHER_IS_BETTER

# Built-in node metrics produced by the simulator, with their orientation.
METRIC_ORIENTATION: dict[str, Orientation] = {
    "cpu_util": LOWER,
    "mem_util": LOWER,
    "node_energy": LOWER,
    "network_energy": LOWER,
    "gateway_latency_ns": LOWER,
    "net_failures": LOWER,
    "free_cpu": HIGHER,
}

PROFILES: dict[str, PerformanceProfile] = {
    "greenness": PerformanceProfile(
        "greenness", {"node_energy": 0.6, "network_energy": 0.4},
        {"node_energy": LOWER, "network_energy": LOWER}),
    "resilience": PerformanceProfile(
        "resilience", {"net_failures": 0.5, "cpu_util": 0.25, "mem_util": 0.25},
        {"net_failures": LOWER, "cpu_util": LOWER, "mem_util": LOWER}),
    "latency": PerformanceProfile(
        "latency", {"gateway_latency_ns": 0.7, "cpu_util": 0.3},
        {"gateway_latency_ns": LOWER, "cpu_util": LOWER}),
}

MAX_NODES = 20
HORIZONS_MIN = (5, 15, 30)
DEFAULT_FORECAST_WEIGHT = 0.3


@dataclass
class NormalizedMetricSet:
    values: dict[str, dict[str, float]]
    excluded: dict[str, list[str]] = field(default_factory=dict)

    @property
    def subjects(self) -> list[str]:
        return sorted(self.values)


def normalize(raw: Mapping[str, Mapping[str, float]],
              orientations: Mapping[str, Orientation | str]) -> NormalizedMetricSet:
    """Per-metric min-max scaling over the subject set, 1.0 meaning best.

    Subjects lacking any oriented metric are dropped and listed in
    ``excluded`` with the missing metric names.
    """
    if not raw:
        raise ValueError("normalize needs at least one subject")
    metrics = sorted(orientations)
    excluded = {}
    kept = {}
    for subject in sorted(raw):
        missing = [m for m in metrics if m not in raw[subject]]
        if missing:
            excluded[subject] = missing
        else:
            kept[subject] = raw[subject]
    values: dict[str, dict[str, float]] = {s: {} for s in kept}
    for m in metrics:
        if not kept:
            break
        col = [kept[s][m] for s in kept]
        lo, hi = min(col), max(col)
        lower = Orientation(orientations[m]) is LOWER
        for s in kept:
            if hi == lo:
                v = 1.0
            else:
                v = (kept[s][m] - lo) / (hi - lo)
                if lower:
                    v = 1.0 - v
            values[s][m] = v
    return NormalizedMetricSet(values, excluded)


def score(profile: PerformanceProfile, normalized: NormalizedMetricSet) -> dict[str, float]:
    total = math.fsum(profile.weights.values())
    if total <= 0:
        raise ValueError(f"profile {profile.name} has zero total weight")
    out = {}
    for subject, vals in sorted(normalized.values.items()):
        missing = [m for m in profile.weights if m not in vals]
        if missing:
            raise KeyError(f"profile {profile.name} needs metrics {missing}")
        s = math.fsum(w * vals[m] for m, w in sorted(profile.weights.items())) / total
        out[subject] = min(1.0, max(0.0, s))
    return out


# forecasting -------------------------------------------------------------

@dataclass(frozen=True)
class Forecast:
    value: float
    cold: bool = False


class Forecaster(Protocol):
    def predict(self, series: Sequence[tuple[float, float]], horizon_min: int) -> Forecast: ...


@dataclass(frozen=True)
class LinearTrendForecaster:
    """Least-squares line over the last ``window`` samples, extrapolated.

    Series are (time in seconds, value) pairs.
    """

    window: int = 12
    lower: float = -math.inf
    upper: float = math.inf

    def predict(self, series: Sequence[tuple[float, float]], horizon_min: int) -> Forecast:
        if horizon_min not in HORIZONS_MIN:
            raise ValueError(f"horizon must be one of {HORIZONS_MIN} minutes")
        if not series:
            raise ValueError("empty series")
        if len(series) < 2:
            return Forecast(series[-1][1], cold=True)
        tail = series[-self.window:]
        t0 = tail[-1][0]
        dt = [p[0] - t0 for p in tail]
        ys = [float(p[1]) for p in tail]
        n = len(tail)
        mt = math.fsum(dt) / n
        my = math.fsum(ys) / n
        sxx = math.fsum((t - mt) ** 2 for t in dt)
        if sxx == 0:
            return Forecast(ys[-1], cold=True)
        slope = math.fsum((t - mt) * (y - my) for t, y in zip(dt, ys)) / sxx
        value = my + slope * (horizon_min * 60.0 - mt)
        return Forecast(float(min(self.upper, max(self.lower, value))))


def forecast(series: Sequence[tuple[float, float]], horizon_min: int = 5,
             forecaster: Forecaster | None = None) -> Forecast:
    return (forecaster or LinearTrendForecaster()).predict(series, horizon_min)


# protocol shape: padding, masking, auction ------------------------------

def pad_observation(node_values: Sequence[float], max_nodes: int = MAX_NODES
                    ) -> tuple[np.ndarray, np.ndarray]:
    if len(node_values) > max_nodes:
        raise ValueError(f"{len(node_values)} nodes exceed the padding bound of {max_nodes}")
    obs = np.zeros(max_nodes, dtype=float)
    mask = np.zeros(max_nodes, dtype=bool)
    obs[: len(node_values)] = node_values
    mask[: len(node_values)] = True
    return obs, mask


def mask_actions(candidates: Iterable[tuple[str, str]],
                 feasible: Callable[[tuple[str, str]], bool]) -> list[tuple[str, str]]:
    return [c for c in candidates if feasible(c)]


@dataclass(frozen=True)
class Bid:
    cluster_id: str
    workload_id: str
    value: float
    masked: bool = False

    def __post_init__(self):
        if not 0.0 <= self.value <= 1.0:
            raise ValueError("bid value must lie in [0, 1]")
        if self.masked and self.value != 0.0:
            raise ValueError("masked bids carry value 0")


@dataclass(frozen=True)
class AuctionResult:
    winner: str
    recommendation: Recommendation
    ranking: tuple[str, ...]


def run_auction(workload_id: str, bids: Sequence[Bid], profile: str = "",
                timestamp: int = 0) -> AuctionResult | None:
    """Highest unmasked bid wins; ties go to the smallest cluster id.

    Stability is one minus the gap between the two best bids (1.0 for a lone
    bidder).  Returns None when every bid is masked.
    """
    live = sorted((b for b in bids if not b.masked), key=lambda b: (-b.value, b.cluster_id))
    if not live:
        return None
    top = live[0]
    stability = 1.0 - (top.value - live[1].value) if len(live) > 1 else 1.0
    rec = Recommendation("cluster", top.cluster_id, top.value,
                         min(1.0, max(0.0, stability)), profile, timestamp,
                         cluster_id=top.cluster_id)
    return AuctionResult(top.cluster_id, rec, tuple(b.cluster_id for b in live))


def blend_metrics(current: Mapping[str, Mapping[str, float]],
                  forecasts: Mapping[str, Mapping[str, float]] | None,
                  weight: float) -> dict[str, dict[str, float]]:
    if not forecasts or weight == 0:
        return {s: dict(v) for s, v in current.items()}
    out = {}
    for s, vals in current.items():
        fc = forecasts.get(s, {})
        out[s] = {m: (1 - weight) * v + weight * fc[m] if m in fc else v
                  for m, v in vals.items()}
    return out


def recommend(neighborhood: Neighborhood, profile: PerformanceProfile,
              metrics: Mapping[str, Mapping[str, Mapping[str, float]]],
              forecasts: Mapping[str, Mapping[str, float]] | None = None,
              forecast_weight: float = DEFAULT_FORECAST_WEIGHT,
              feasible: Callable[[tuple[str, str]], bool] | None = None,
              timestamp: int = 0) -> tuple[list[Recommendation], list[Bid]]:
    """Node and cluster recommendations for one neighborhood.

    ``metrics`` is cluster -> node -> metric -> raw value, one snapshot per
    member cluster.  Node scores come from the profile over blended,
    neighborhood-normalized metrics; each cluster bids its best feasible
    node score and one cluster recommendation per live bidder is emitted,
    all sharing the auction's stability.
    """
    if not neighborhood.members:
        raise ValueError("empty neighborhood")
    flat: dict[str, dict[str, float]] = {}
    owner: dict[str, str] = {}
    for cid in sorted(neighborhood.members):
        for node, vals in sorted(metrics.get(cid, {}).items()):
            flat[node] = dict(vals)
            owner[node] = cid
    recs: list[Recommendation] = []
    bids: list[Bid] = []
    if not flat:
        return recs, bids
    blended = blend_metrics(flat, forecasts, forecast_weight)
    oriented = {m: profile.orientation[m] for m in profile.weights}
    node_scores = score(profile, normalize(blended, oriented))
    for node, s in node_scores.items():
        recs.append(Recommendation("node", node, s, 1.0, profile.name, timestamp,
                                   cluster_id=owner[node]))
    for cid in sorted(neighborhood.members):
        cand = [(cid, n) for n in sorted(node_scores) if owner[n] == cid]
        if feasible is not None:
            cand = mask_actions(cand, feasible)
        if cand:
            bids.append(Bid(cid, neighborhood.application_group,
                            max(node_scores[n] for _, n in cand)))
        else:
            bids.append(Bid(cid, neighborhood.application_group, 0.0, masked=True))
    result = run_auction(neighborhood.application_group, bids, profile.name, timestamp)
    if result is not None:
        for b in bids:
            if not b.masked:
                recs.append(Recommendation("cluster", b.cluster_id, b.value,
                                           result.recommendation.stability, profile.name,
                                           timestamp, cluster_id=b.cluster_id))
    return recs, bids
