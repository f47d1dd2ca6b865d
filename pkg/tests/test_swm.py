import copy
import dataclasses
import random

import pytest
from hypothesis import given, settings, strategies as st

from fedorch.model import AssignmentPlan, PlanStatus, Recommendation
from fedorch.swm import (
    MigrationRejected, RecommendationView, RelaxationPolicy, SchedulingFailure, execute,
    migrate, order_clusters, plan_application, reconsider, release_plan, replay, schedule,
    should_migrate, solve_l2, three_term_latency, validate_channel,
)
from fedorch.swm.scheduler import _Context
from fedorch.validator import committed_violations, plan_violations

from gen import sched_instance
from helpers import MS, application, channel, cluster, federation, neighborhood, workload
from oracles import PlacementOracle, greedy_local


def rec(scope, target, value, cluster_id):
    return Recommendation(scope, target, value, 1.0, "greenness", cluster_id=cluster_id)


def allocations(fed):
    return {n: tuple(c.allocations.get(n, (0, 0))) for c in fed.clusters.values()
            for n in (x.node_id for x in c.nodes)}


# ordering -------------------------------------------------------------------

def test_order_singleton_and_recommended_first():
    assert order_clusters(["A"], [], []) == ["A"]
    fed = federation([cluster("A"), cluster("B"), cluster("C")],
                     [("A", "B", 1, 10**6), ("B", "C", 5, 10**6)])
    got = order_clusters(["A", "B", "C"], [rec("node", "C1", 0.2, "C")],
                         fed.inter_links.values(), fed)
    assert got[0] == "C"
    # without recommendations the fastest link decides, ties by id
    assert order_clusters(["A", "B", "C"], [], fed.inter_links.values(), fed) == ["A", "B", "C"]


def test_order_is_pairwise_consistent():
    rng = random.Random(3)
    for _ in range(50):
        cids = ["A", "B", "C", "D"]
        fed = federation([cluster(c) for c in cids],
                         [(a, b, rng.randint(1, 9), 10**6)
                          for i, a in enumerate(cids) for b in cids[i + 1:] if rng.random() < 0.6])
        recs = [rec("cluster", c, round(rng.random(), 1), c) for c in cids if rng.random() < 0.5]
        order = order_clusters(cids, recs, fed.inter_links.values(), fed)
        scored = {r.target_id: r.score for r in recs}
        lat = {c: min((ln.latency_ns for ln in fed.inter_links.values() if c in ln.pair),
                      default=float("inf")) for c in cids}
        assert sorted(order) == cids
        for i, a in enumerate(order):
            for b in order[i + 1:]:
                ka = (a not in scored, -scored.get(a, 0.0), lat[a], a)
                kb = (b not in scored, -scored.get(b, 0.0), lat[b], b)
                assert ka < kb


# layer-two solving -------------------------------------------------------------

def ctx_for(app, fed, members, recs=()):
    return _Context(app, fed, members, RecommendationView.build(recs), None)


def test_solve_l2_single_node_fits_all():
    app = application("g", [workload("w0", 500), workload("w1", 700), workload("w2", 100)])
    fed = federation([cluster("A", nodes=1)])
    plan = solve_l2(ctx_for(app, fed, ["A"]), "A", app.workloads, [], AssignmentPlan("g"))
    assert plan.placements == {w: ("A", "A0") for w in ("w0", "w1", "w2")}
    assert not plan.unplaced and not plan.tentative


def test_solve_l2_overflow_goes_tentative():
    app = application("g", [workload("w0", 800), workload("w1", 800)])
    fed = federation([cluster("A", nodes=1, cpu=1000), cluster("B", nodes=1)])
    plan = solve_l2(ctx_for(app, fed, ["A", "B"]), "A", app.workloads, ["B"],
                    AssignmentPlan("g"))
    assert plan.placements == {"w0": ("A", "A0")}
    assert plan.tentative == {"w1": "B"}


def test_solve_l2_matches_greedy_oracle():
    rng = random.Random(11)
    for _ in range(40):
        caps = [(rng.choice((1000, 2000, 3000)), 8192) for _ in range(4)]
        fed = federation([cluster("A", caps=caps)])
        ws = [workload(f"w{i}", rng.choice((300, 700, 1200, 1900))) for i in range(6)]
        app = application("g", ws)
        recs = [rec("node", f"A{i}", round(rng.random(), 2), "A") for i in range(4)]
        plan = solve_l2(ctx_for(app, fed, ["A"], recs), "A", ws, [], AssignmentPlan("g"))
        placed, overflow = greedy_local(
            ws, [f"A{i}" for i in range(4)], {f"A{i}": caps[i] for i in range(4)},
            {r.target_id: r.score for r in recs})
        assert {w: n for w, (_, n) in plan.placements.items()} == placed
        assert sorted(plan.unplaced) == sorted(overflow)


# channels -------------------------------------------------------------------

def three_hop_fed():
    return federation([cluster("A", hop_ms=3), cluster("B", hop_ms=2)], [("A", "B", 5, 10**6)])


def test_validate_channel_three_terms():
    fed = three_hop_fed()
    link = fed.links_between("A", "B")[0]
    ok = validate_channel(fed, ("A", "A1"), ("B", "B1"), link, channel("c", "x", "y", 10))
    assert ok.feasible and ok.latency_ns == three_term_latency(3 * MS, 5 * MS, 2 * MS)
    bad = validate_channel(fed, ("A", "A1"), ("B", "B1"), link, channel("c", "x", "y", 9))
    assert not bad.feasible and "exceeds bound" in bad.violations[0]
    none = validate_channel(fed, ("A", "A1"), ("B", "B1"), None, channel("c", "x", "y", 10))
    assert none.violations == ("no direct link A-B",)


def test_validate_channel_class_and_bandwidth():
    fed = federation([cluster("A"), cluster("B")], [("A", "B", 1, 500, "best-effort")])
    link = fed.links_between("A", "B")[0]
    got = validate_channel(fed, ("A", "A0"), ("B", "B0"), link,
                           channel("c", "x", "y", 10, bps=1000))
    assert not got.feasible
    assert any("service class" in v for v in got.violations)
    assert any("bandwidth" in v for v in got.violations)


# scheduling rounds ------------------------------------------------------------

def test_schedule_fits_first_cluster():
    app = application("g", [workload("w0"), workload("w1")], [channel("c", "w0", "w1")])
    fed = federation([cluster("A"), cluster("B")], [("A", "B", 1, 10**6)])
    plan = schedule(app, neighborhood("g", "AB"), [], fed)
    assert {c for c, _ in plan.placements.values()} == {"A"}
    assert plan.channel_bindings["c"].link is None


def test_schedule_splits_across_two_clusters():
    app = application("g", [workload("w0", 3000), workload("w1", 3000)],
                      [channel("c", "w0", "w1", bound_ms=10)])
    fed = federation([cluster("A", nodes=1), cluster("B", nodes=1)], [("A", "B", 4, 10**6)])
    assert PlacementOracle(app, fed, "AB").solve() is not None
    plan = plan_application(app, neighborhood("g", "AB"), [], fed)
    assert {c for c, _ in plan.placements.values()} == {"A", "B"}
    assert plan.channel_bindings["c"].latency_ns == 4 * MS
    assert plan_violations(plan, app, fed, "AB") == []


def test_schedule_too_tight_bound_fails():
    app = application("g", [workload("w0", 3000), workload("w1", 3000)],
                      [channel("c", "w0", "w1", bound_ms=3)])
    fed = federation([cluster("A", nodes=1), cluster("B", nodes=1)], [("A", "B", 4, 10**6)])
    assert PlacementOracle(app, fed, "AB").solve() is None
    with pytest.raises(SchedulingFailure) as info:
        plan_application(app, neighborhood("g", "AB"), [], fed)
    assert info.value.unplaced == ["w1"]


def test_reconsider_identity_and_relaxation():
    app = application("g", [workload("w0"), workload("w1", anti=("w0",))])
    fed = federation([cluster("A", nodes=1)])
    nh = neighborhood("g", "A")
    first = schedule(app, nh, [], fed)
    assert first.unplaced == ["w1"]
    again = reconsider(first, app, nh, [], fed, RelaxationPolicy(False, False))
    assert again.unplaced == ["w1"]
    second = reconsider(first, app, nh, [], fed)
    assert second.unplaced == [] and second.placements["w1"] == ("A", "A0")
    assert first.unplaced == ["w1"]  # input plan untouched
    assert reconsider(second, app, nh, [], fed) is second


def test_reconsider_widens_past_recommendations():
    app = application("g", [workload("w0", 3000), workload("w1", 3000)])
    fed = federation([cluster("A", nodes=2)])
    nh = neighborhood("g", "A")
    recs = [rec("node", "A0", 0.9, "A")]
    first = schedule(app, nh, recs, fed)
    assert first.unplaced == ["w1"]
    plan = plan_application(app, nh, recs, fed)
    assert sorted(n for _, n in plan.placements.values()) == ["A0", "A1"]


def test_peer_pinned_elsewhere_is_not_stranded():
    # w0 may only run in C; nothing links A to C, so w1 must not settle in A
    app = application("g", [workload("w0", 300), workload("w1", 900)],
                      [channel("c", "w0", "w1", bound_ms=10)])
    fed = federation([cluster("A"), cluster("C")])
    nh = neighborhood("g", "AC")
    recs = [rec("cluster", "A", 0.9, "A")]
    eligible = {"w0": {"C"}}
    assert PlacementOracle(app, fed, "AC", eligible).solve() is not None
    plan = plan_application(app, nh, recs, fed, eligible)
    assert plan.visit_order == ["A", "C"]
    assert {c for c, _ in plan.placements.values()} == {"C"}
    # the same check also honors a pinned peer reachable over a fast link
    fed = federation([cluster("A"), cluster("C")], [("A", "C", 2, 10**6)])
    plan = plan_application(app, nh, recs, fed, eligible)
    assert plan.placements["w1"][0] == "A" and plan.placements["w0"][0] == "C"


# execution ------------------------------------------------------------------

def three_cluster_plan():
    fed = federation([cluster(c, nodes=1, cpu=1000) for c in "ABC"],
                     [("A", "B", 1, 10**6), ("B", "C", 1, 10**6), ("A", "C", 1, 10**6)])
    app = application("g", [workload(f"w{i}", 800) for i in range(3)],
                      [channel("c01", "w0", "w1", bps=500), channel("c12", "w1", "w2", bps=500)])
    plan = plan_application(app, neighborhood("g", "ABC"), [], fed)
    assert len(plan.clusters()) == 3
    return app, fed, plan


def test_execute_commits_and_journal_replays():
    app, fed, plan = three_cluster_plan()
    assert execute(plan, app, fed) is PlanStatus.COMMITTED
    expected = {}
    for wid, (_, node) in plan.placements.items():
        w = app.workload(wid)
        cur = expected.setdefault(node, [0, 0])
        cur[0] += w.cpu_req
        cur[1] += w.mem_req
    nodes, links = replay(plan.journal)
    assert nodes == expected
    assert {n: list(v) for n, v in allocations(fed).items() if v != (0, 0)} == expected
    assert links == {b.link: b.bandwidth_bps for b in plan.channel_bindings.values()}
    assert committed_violations(plan, app, fed, "ABC") == []
    release_plan(plan, fed)
    assert set(allocations(fed).values()) == {(0, 0)}


def test_execute_fault_in_second_cluster_rolls_back():
    app, fed, plan = three_cluster_plan()
    before = fed.snapshot()
    trace = []
    status = execute(plan, app, fed, fail_clusters={plan.clusters()[1]}, trace=trace)
    assert status is PlanStatus.ROLLED_BACK
    assert fed.snapshot() == before
    assert trace[-1][0] == "rolled_back" and trace[-1][1]["undone"] > 0


def test_execute_empty_plan_and_unplaced():
    fed = federation([cluster("A")])
    before = fed.snapshot()
    app = application("g", [workload("w0")])
    assert execute(AssignmentPlan("g"), app, fed) is PlanStatus.COMMITTED
    assert fed.snapshot() == before
    with pytest.raises(ValueError):
        execute(AssignmentPlan("g", unplaced=["w0"]), app, fed)


# migration ------------------------------------------------------------------

def committed_pair():
    fed = federation([cluster("A", nodes=2, cpu=2000), cluster("B", nodes=2, cpu=2000)],
                     [("A", "B", 2, 10**6)])
    app = application("g", [workload("w0", 1500), workload("w1", 400)],
                      [channel("c", "w0", "w1", bps=1000)])
    plan = plan_application(app, neighborhood("g", "AB"), [], fed)
    execute(plan, app, fed)
    return app, fed, plan


def test_migrate_identical_target_is_noop():
    app, fed, plan = committed_pair()
    before = fed.snapshot()
    res = migrate(app, plan, "w0", plan.placements["w0"], fed)
    assert not res.migrated and res.timeline == [("noop", 1)]
    assert fed.snapshot() == before


def test_migrate_rejects_without_capacity():
    app, fed, plan = committed_pair()
    src = plan.placements["w0"]
    other = next(n for n in ("A0", "A1", "B0", "B1") if n != src[1])
    fed.allocate(other, 1000, 0)
    before, snap = copy.deepcopy(plan.to_dict()), fed.snapshot()
    with pytest.raises(MigrationRejected):
        migrate(app, plan, "w0", (fed.node_cluster[other], other), fed)
    assert plan.to_dict() == before and fed.snapshot() == snap


def test_migrate_success_keeps_a_slot_throughout():
    app, fed, plan = committed_pair()
    target = ("B", "B1") if plan.placements["w0"][0] == "A" else ("A", "A1")
    res = migrate(app, plan, "w0", target, fed)
    assert res.migrated and plan.placements["w0"] == target
    assert all(slots >= 1 for _, slots in res.timeline)
    assert max(slots for _, slots in res.timeline) == 2
    assert committed_violations(plan, app, fed, "AB") == []


def test_migrate_fault_at_start_new_keeps_old():
    app, fed, plan = committed_pair()
    old = plan.placements["w0"]
    snap = fed.snapshot()
    target = ("B", "B1") if old[0] == "A" else ("A", "A1")
    res = migrate(app, plan, "w0", target, fed, fail_step="start_new")
    assert res.failed_step == "start_new" and not res.migrated
    assert plan.placements["w0"] == old and fed.snapshot() == snap
    assert res.timeline[-1] == ("rollback:start_new", 1)


def test_should_migrate_hysteresis():
    assert not should_migrate(0.5, 0.55)
    assert should_migrate(0.5, 0.6)
    assert should_migrate(0.2, 0.9, hysteresis=0.5)


# validator sensitivity ---------------------------------------------------------

@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(("outside", "unbind", "tighten", "overload")))
def test_validator_detects_seeded_violation(seed, kind):
    app, fed, nh, recs, eligible = sched_instance(seed)
    try:
        plan = plan_application(app, nh, recs, fed, eligible)
    except SchedulingFailure:
        return
    assert execute(plan, app, fed) is PlanStatus.COMMITTED
    assert committed_violations(plan, app, fed, nh.members, eligible) == []
    if kind == "outside":
        outside = sorted(set(fed.clusters) - nh.members)
        if not outside:
            return
        wid = sorted(plan.placements)[0]
        plan.placements[wid] = (outside[0], fed.clusters[outside[0]].nodes[0].node_id)
    elif kind == "unbind":
        if not plan.channel_bindings:
            return
        plan.channel_bindings.pop(sorted(plan.channel_bindings)[0])
    elif kind == "tighten":
        bound = {cid: b for cid, b in plan.channel_bindings.items() if b.latency_ns > 0}
        if not bound:
            return
        cid = sorted(bound)[0]
        chans = tuple(dataclasses.replace(c, latency_bound_ns=int(bound[cid].latency_ns) - 1)
                      if c.channel_id == cid else c for c in app.channels)
        app = dataclasses.replace(app, channels=chans)
    else:
        node = sorted(plan.placements.values())[0][1]
        cl = fed.clusters[fed.node_cluster[node]]
        spec = next(n for n in cl.nodes if n.node_id == node)
        cpu, mem = cl.allocations.get(node, (0, 0))
        cl.allocations[node] = (spec.cpu_capacity + 1, mem)
    assert committed_violations(plan, app, fed, nh.members, eligible) != []
