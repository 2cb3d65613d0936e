"""Python bindings for the wayfaster simulator, estimator, fusion model, trainer and controller."""

from ._core import (
    Dataset,
    Model,
    ScenarioConfig,
    State2D,
    TrainingDiverged,
    World,
    clearance_minpool,
    collect,
    evaluate,
    make_world,
    navigate,
    rollout,
    run_command,
    sample_map,
    solve_mhe,
    step,
    train,
)

__all__ = [
    "Dataset",
    "Model",
    "ScenarioConfig",
    "State2D",
    "TrainingDiverged",
    "World",
    "clearance_minpool",
    "collect",
    "evaluate",
    "make_world",
    "navigate",
    "rollout",
    "run_command",
    "sample_map",
    "solve_mhe",
    "step",
    "train",
]
