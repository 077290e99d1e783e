"""Deterministic federated training engine."""
from .aggregation import aggregate_fedavg, aggregate_fednova
from .engine import (
    ExperimentResult,
    RoundMetrics,
    TrainingConfig,
    local_update,
    rounds_to_target,
    run_experiment,
    steps_for,
)
from .model import MLPShape, ModelParams, SoftmaxMLP, init_params, loss_and_grad

__all__ = [
    "ExperimentResult", "MLPShape", "ModelParams", "RoundMetrics", "SoftmaxMLP", "TrainingConfig",
    "aggregate_fedavg", "aggregate_fednova", "init_params", "local_update", "loss_and_grad",
    "rounds_to_target", "run_experiment", "steps_for",
]
