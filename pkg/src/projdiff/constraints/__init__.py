"""Domain constraint families: trajectories, grids, and token sequences."""

from .grids import (
    KinematicsSpec,
    PorosityTarget,
    kinematics_constraint,
    kinematics_rollout,
    negative_count,
    porosity_constraint,
    soft_negative_count,
)
from .sequences import (
    NoveltyState,
    PatternRule,
    SurrogateScorer,
    load_dataset,
    load_rules,
    novelty_constraint,
    novelty_project,
    pattern_constraint,
    pattern_repair,
    save_dataset,
    surrogate_constraint,
)
from .trajectories import (
    AgentTrajectoryBundle,
    ObstacleMap,
    collision_constraint,
    collision_constraints,
    constraint_set,
    load_map,
    obstacle_constraint,
    obstacle_constraints,
    random_instance,
    save_map,
)

__all__ = [
    "AgentTrajectoryBundle",
    "KinematicsSpec",
    "NoveltyState",
    "ObstacleMap",
    "PatternRule",
    "PorosityTarget",
    "SurrogateScorer",
    "collision_constraint",
    "collision_constraints",
    "constraint_set",
    "kinematics_constraint",
    "kinematics_rollout",
    "load_dataset",
    "load_map",
    "load_rules",
    "negative_count",
    "novelty_constraint",
    "novelty_project",
    "obstacle_constraint",
    "obstacle_constraints",
    "pattern_constraint",
    "pattern_repair",
    "porosity_constraint",
    "random_instance",
    "save_dataset",
    "save_map",
    "soft_negative_count",
    "surrogate_constraint",
]
