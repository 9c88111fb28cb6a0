"""Adversary emulation over hybrid (cyber/physical) attack graphs."""

from hagemu.attack_graph import (
    Action,
    ExploitEdge,
    Hag,
    HagError,
    Node,
    NodeKind,
    PhysicalActionSpec,
    ProbSpec,
    action_space,
    available_edges,
    compromise_probability,
    load_hag,
    reachable_actions,
    validate,
)
from hagemu.environment import (
    EpisodeTrace,
    NullScenario,
    SystemState,
    initial_state,
    rollout,
    step,
)

__version__ = "0.1.0"

__all__ = [
    "Action",
    "EpisodeTrace",
    "ExploitEdge",
    "Hag",
    "HagError",
    "Node",
    "NodeKind",
    "NullScenario",
    "PhysicalActionSpec",
    "ProbSpec",
    "SystemState",
    "action_space",
    "available_edges",
    "compromise_probability",
    "initial_state",
    "load_hag",
    "reachable_actions",
    "rollout",
    "step",
    "validate",
]
