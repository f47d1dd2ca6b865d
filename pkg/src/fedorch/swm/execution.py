"""Plan execution with journal-based rollback."""

from __future__ import annotations

from typing import Container

from ..infra import CapacityError, Federation
from ..model import ApplicationGroup, AssignmentPlan, PlanStatus


class ExecutionFault(RuntimeError):
    pass


def apply_action(federation: Federation, action: tuple) -> None:
    op = action[0]
    if op == "alloc":
        federation.allocate(action[1], action[2], action[3])
    elif op == "release":
        federation.release(action[1], action[2], action[3])
    elif op == "reserve":
        federation.reserve_bandwidth(action[1], action[2])
    elif op == "unreserve":
        federation.release_bandwidth(action[1], action[2])
    else:
        raise ValueError(f"unknown journal action {op!r}")


_INVERSE = {"alloc": "release", "release": "alloc", "reserve": "unreserve",
            "unreserve": "reserve"}


def invert(action: tuple) -> tuple:
    return (_INVERSE[action[0]],) + tuple(action[1:])


def undo(federation: Federation, journal: list[tuple]) -> None:
    for action in reversed(journal):
        apply_action(federation, invert(action))


def execute(plan: AssignmentPlan, app: ApplicationGroup, federation: Federation,
            fail_clusters: Container[str] = (), trace: list | None = None) -> PlanStatus:
    """Apply allocations cluster by cluster in visit order.

    A cluster listed in ``fail_clusters`` fails when its turn comes; any
    failure reverses the journal so allocation state matches the pre-call
    state exactly.
    """
    if plan.unplaced:
        raise ValueError(f"plan {plan.group_id} still has unplaced workloads")
    journal: list[tuple] = []
    try:
        for cluster_id in plan.clusters():
            if cluster_id in fail_clusters:
                raise ExecutionFault(f"execution failed in cluster {cluster_id}")
            for wid, (c, node) in sorted(plan.placements.items()):
                if c != cluster_id:
                    continue
                w = app.workload(wid)
                action = ("alloc", node, w.cpu_req, w.mem_req, wid)
                apply_action(federation, action)
                journal.append(action)
            for cid, b in sorted(plan.channel_bindings.items()):
                if b.link is not None and b.src[0] == cluster_id and b.bandwidth_bps:
                    action = ("reserve", b.link, b.bandwidth_bps, cid)
                    apply_action(federation, action)
                    journal.append(action)
    except (ExecutionFault, CapacityError) as exc:
        undo(federation, journal)
        plan.status = PlanStatus.ROLLED_BACK
        plan.journal = []
        if trace is not None:
            trace.append(("rolled_back", {"reason": str(exc), "undone": len(journal)}))
        return plan.status
    plan.journal = journal
    plan.status = PlanStatus.COMMITTED
    if trace is not None:
        trace.append(("executed", {"actions": len(journal)}))
    return plan.status


def release_plan(plan: AssignmentPlan, federation: Federation) -> None:
    """Tear down a committed plan by reversing its journal."""
    if plan.status is not PlanStatus.COMMITTED:
        raise ValueError(f"plan {plan.group_id} is not committed")
    undo(federation, plan.journal)
    plan.journal = []
    plan.status = PlanStatus.ROLLED_BACK


def replay(journal: list[tuple]) -> tuple[dict[str, list[int]], dict[tuple, int]]:
    """Net allocations and reservations a journal produces from empty state."""
    nodes: dict[str, list[int]] = {}
    links: dict[tuple, int] = {}
    for action in journal:
        op = action[0]
        if op in ("alloc", "release"):
            sign = 1 if op == "alloc" else -1
            cur = nodes.setdefault(action[1], [0, 0])
            cur[0] += sign * action[2]
            cur[1] += sign * action[3]
        else:
            sign = 1 if op == "reserve" else -1
            links[action[1]] = links.get(action[1], 0) + sign * action[2]
    return ({n: v for n, v in nodes.items() if v != [0, 0]},
            {k: v for k, v in links.items() if v})
