"""Reserve-before-stop workload migration."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

from ..infra import Federation
from ..model import ApplicationGroup, AssignmentPlan, ChannelBinding, PlanStatus
from .channels import validate_channel
from .execution import apply_action

STEPS = ("reserve_new", "revalidate_channels", "start_new", "stop_old", "release_old")
DEFAULT_HYSTERESIS = 0.1


class MigrationRejected(ValueError):
    pass


@dataclass
class MigrationResult:
    plan: AssignmentPlan
    migrated: bool
    failed_step: str | None = None
    # (step, reserved slots held by the workload after the step)
    timeline: list[tuple[str, int]] = field(default_factory=list)
    rebinds: list[tuple[str, tuple | None, tuple | None]] = field(default_factory=list)


def should_migrate(current_score: float, candidate_score: float,
                   hysteresis: float = DEFAULT_HYSTERESIS) -> bool:
    return candidate_score - current_score >= hysteresis - 1e-12


def _new_bindings(app, plan, workload_id, target, federation) -> dict[str, ChannelBinding]:
    out = {}
    for ch in app.channels_of(workload_id):
        peer = ch.dst_workload if ch.src_workload == workload_id else ch.src_workload
        if peer not in plan.placements:
            continue
        src, dst = ((target, plan.placements[peer]) if ch.src_workload == workload_id
                    else (plan.placements[peer], target))
        link = None
        if src[0] != dst[0]:
            link = federation.direct_link(src[0], dst[0], ch.service_class)
            if link is None:
                others = federation.links_between(src[0], dst[0])
                link = others[0] if others else None
        old = plan.channel_bindings.get(ch.channel_id)
        credit = old.bandwidth_bps if old and link is not None and old.link == link.key else 0
        check = validate_channel(federation, src, dst, link, ch, credit_bps=credit)
        if not check.feasible:
            raise MigrationRejected(f"channel {ch.channel_id}: {'; '.join(check.violations)}")
        out[ch.channel_id] = ChannelBinding(ch.channel_id, src, dst, check.link,
                                            check.latency_ns, ch.bandwidth_req_bps)
    return out


def migrate(app: ApplicationGroup, plan: AssignmentPlan, workload_id: str,
            new_target: tuple[str, str], federation: Federation,
            fail_step: str | None = None,
            members: Iterable[str] | None = None) -> MigrationResult:
    """Move one committed workload, never leaving it without a reserved slot.

    Feasibility (capacity and every channel from the new endpoint) is checked
    before any mutation.  ``fail_step`` injects a failure at that step; the
    new reservation is then released and the old placement kept.
    """
    if plan.status is not PlanStatus.COMMITTED:
        raise MigrationRejected(f"plan {plan.group_id} is not committed")
    if fail_step is not None and fail_step not in STEPS:
        raise ValueError(f"unknown migration step {fail_step!r}")
    old = plan.placements[workload_id]
    if tuple(new_target) == tuple(old):
        return MigrationResult(plan, False, timeline=[("noop", 1)])
    cluster_id, node_id = new_target
    if federation.node_cluster.get(node_id) != cluster_id:
        raise MigrationRejected(f"unknown target {cluster_id}/{node_id}")
    if members is not None and cluster_id not in set(members):
        raise MigrationRejected(f"{cluster_id} is outside the neighborhood")
    if not federation.schedulable(node_id):
        raise MigrationRejected(f"{node_id} is not schedulable")
    w = app.workload(workload_id)
    free_cpu, free_mem = federation.free(node_id)
    if w.cpu_req > free_cpu or w.mem_req > free_mem:
        raise MigrationRejected(f"{node_id} lacks capacity")
    bindings = _new_bindings(app, plan, workload_id, (cluster_id, node_id), federation)

    result = MigrationResult(plan, False, timeline=[("begin", 1)])
    done: list[tuple] = []
    slots = 1

    def run(action: tuple) -> None:
        apply_action(federation, action)
        done.append(action)

    step = STEPS[0]
    try:
        for step in STEPS:
            if step == fail_step:
                raise RuntimeError(step)
            if step == "reserve_new":
                run(("alloc", node_id, w.cpu_req, w.mem_req, workload_id))
                slots += 1
            elif step == "revalidate_channels":
                for cid, b in sorted(bindings.items()):
                    prev = plan.channel_bindings.get(cid)
                    if b.link is not None and b.bandwidth_bps and (
                            prev is None or prev.link != b.link):
                        run(("reserve", b.link, b.bandwidth_bps, cid))
            elif step == "release_old":
                run(("release", old[1], w.cpu_req, w.mem_req, workload_id))
                slots -= 1
                for cid, b in sorted(bindings.items()):
                    prev = plan.channel_bindings.get(cid)
                    if prev is not None and prev.link is not None and prev.bandwidth_bps \
                            and prev.link != b.link:
                        run(("unreserve", prev.link, prev.bandwidth_bps, cid))
            result.timeline.append((step, slots))
    except RuntimeError:
        for action in reversed(done):
            inverse = {"alloc": "release", "reserve": "unreserve"}.get(action[0])
            if inverse is None:
                continue
            apply_action(federation, (inverse,) + action[1:])
            if action[0] == "alloc":
                slots -= 1
        result.failed_step = step
        result.timeline.append((f"rollback:{step}", slots))
        return result

    for cid, b in bindings.items():
        prev = plan.channel_bindings.get(cid)
        result.rebinds.append((cid, prev.link if prev else None, b.link))
    plan.placements[workload_id] = (cluster_id, node_id)
    plan.channel_bindings.update(bindings)
    plan.journal.extend(done)
    result.migrated = True
    return result
