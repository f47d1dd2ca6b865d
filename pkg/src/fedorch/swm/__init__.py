"""Federated scheduling and workload migration."""

from .channels import ChannelCheck, three_term_latency, validate_channel
from .execution import ExecutionFault, execute, release_plan, replay, undo
from .migration import (
    DEFAULT_HYSTERESIS, STEPS as MIGRATION_STEPS, MigrationRejected, MigrationResult,
    migrate, should_migrate,
)
from .scheduler import (
    ClusterAggregate, RecommendationView, RelaxationPolicy, SchedulingFailure,
    order_clusters, plan_application, reconsider, schedule, solve_l2,
)

__all__ = [
    "ChannelCheck", "ClusterAggregate", "DEFAULT_HYSTERESIS", "ExecutionFault",
    "MIGRATION_STEPS", "MigrationRejected", "MigrationResult", "RecommendationView",
    "RelaxationPolicy", "SchedulingFailure", "execute", "migrate", "order_clusters",
    "plan_application", "reconsider", "release_plan", "replay", "schedule",
    "should_migrate", "solve_l2", "three_term_latency", "undo", "validate_channel",
]
