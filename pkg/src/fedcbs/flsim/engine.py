"""Round orchestration: availability, selection, local training, aggregation, evaluation."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from ..core import StrategyConfig
from ..datasets import Dataset
from ..exceptions import EmptyDataset
from ..partition import PartitionSpec, build_partition
from ..qcid import inner_product_matrix, qcid_direct
from ..selection import SamplerState, select_clients, update_counters
from .aggregation import aggregate_fedavg, aggregate_fednova
from .model import MLPShape, ModelParams, accuracy, cross_entropy, init_params, sgd

logger = logging.getLogger(__name__)

_INIT_STREAM = 0x1417
_SELECT_STREAM = 0x5E1C
_LOCAL_STREAM = 0x10CA


@dataclass(frozen=True)
class TrainingConfig:
    """Local-training and server settings.

    ``local_steps=None`` gives every client the same step count, enough for
    the largest selected-pool client to run ``local_epochs`` epochs.
    """

    rounds: int = 200
    n_select: int = 10
    local_steps: int | None = None
    local_epochs: int = 5
    batch_size: int = 50
    learning_rate: float = 0.01
    lr_decay: float = 0.9992
    weight_decay: float = 5e-4
    aggregator: str = "fedavg"
    n_hidden: int = 64
    target_accuracy: float | None = None
    n_jobs: int = 1

    def __post_init__(self):
        if self.aggregator not in ("fedavg", "fednova"):
            raise ValueError(f"unknown aggregator {self.aggregator!r}")
        for name in ("rounds", "n_select", "local_epochs", "batch_size", "n_hidden", "n_jobs"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.local_steps is not None and self.local_steps < 0:
            raise ValueError("local_steps must be non-negative")
        if self.learning_rate <= 0 or not 0 < self.lr_decay <= 1 or self.weight_decay < 0:
            raise ValueError("learning rate must be positive, decay in (0, 1], weight decay >= 0")


@dataclass(frozen=True)
class RoundMetrics:
    round: int
    selected: tuple
    qcid: float
    train_loss: float
    test_accuracy: float
    learning_rate: float


@dataclass
class ExperimentResult:
    metrics: list
    summary: dict = field(default_factory=dict)

    def accuracies(self) -> np.ndarray:
        return np.array([m.test_accuracy for m in self.metrics])

    def qcids(self) -> np.ndarray:
        return np.array([m.qcid for m in self.metrics])


def local_update(global_params: ModelParams, X: np.ndarray, y: np.ndarray, config: TrainingConfig,
                 steps: int, learning_rate: float, seed) -> tuple[ModelParams, int]:
    """Run ``steps`` SGD steps from the global model on one client's data."""
    if len(y) == 0:
        raise EmptyDataset("client has no data")
    rng = np.random.default_rng(seed)
    vector = sgd(global_params.vector, global_params.shape, X, y, steps, learning_rate,
                 config.batch_size, config.weight_decay, rng)
    return global_params.replace_vector(vector), steps


def steps_for(max_quantity: int, config: TrainingConfig) -> int:
    """Local step count shared by all clients: ``epochs * ceil(max_q / batch)``."""
    if config.local_steps is not None:
        return config.local_steps
    return config.local_epochs * math.ceil(max_quantity / config.batch_size)


def rounds_to_target(metrics, target: float):
    """First round whose test accuracy reaches ``target``; ``None`` if never."""
    for m in metrics:
        if m.test_accuracy >= target:
            return m.round
    return None


def summarize(metrics, target=None) -> dict:
    acc = np.array([m.test_accuracy for m in metrics])
    best = int(np.argmax(acc))
    return {
        "rounds": len(metrics),
        "best_accuracy": float(acc[best]),
        "best_round": metrics[best].round,
        "final_accuracy": float(acc[-1]),
        "mean_qcid": float(np.mean([m.qcid for m in metrics])),
        "target_accuracy": target,
        "rounds_to_target": rounds_to_target(metrics, target) if target is not None else None,
    }


def run_experiment(partition: PartitionSpec, strategy: StrategyConfig, training: TrainingConfig,
                   seed: int, train: Dataset, test: Dataset) -> ExperimentResult:
    """Full Fed-CBS style training loop, deterministic in ``seed``.

    Partition, availability and model initialisation depend only on the
    seed, so runs of different strategies with the same seed are paired.
    """
    clients, availability = build_partition(partition, train.y, seed)
    S = inner_product_matrix(clients)
    quantities = [c.quantity for c in clients]
    local_data = [(train.X[np.asarray(c.indices)], train.y[np.asarray(c.indices)]) for c in clients]
    steps = steps_for(max(quantities), training)

    shape = MLPShape(train.X.shape[1], training.n_hidden, train.n_classes)
    params = init_params(shape, np.random.default_rng([seed, _INIT_STREAM]))
    state = SamplerState.initial(range(len(clients)), [seed, _SELECT_STREAM])
    lr = training.learning_rate
    metrics = []
    pool = ThreadPoolExecutor(training.n_jobs) if training.n_jobs > 1 else None

    try:
        for k in range(1, training.rounds + 1):
            available = availability(k)
            current = params

            def loss_of(cid, current=current):
                X, y = local_data[cid]
                return cross_entropy(current.vector, shape, X, y)

            n_select = min(training.n_select, len(available))
            if strategy.strategy == "all":
                n_select = len(available)
            outcome = select_clients(strategy, state, available, S, quantities, n_select,
                                     loss_evaluator=loss_of, clients=clients)
            selected = sorted(outcome.selected)

            def train_one(cid, current=current, k=k, lr=lr):
                X, y = local_data[cid]
                return local_update(current, X, y, training, steps, lr, [seed, cid, k, _LOCAL_STREAM])

            results = list(pool.map(train_one, selected)) if pool else [train_one(c) for c in selected]
            updates = [r[0] for r in results]
            q_sel = [quantities[c] for c in selected]
            if training.aggregator == "fednova":
                params = aggregate_fednova(current, updates, q_sel, [r[1] for r in results])
            else:
                params = aggregate_fedavg(updates, q_sel)

            train_loss = float(np.average([loss_of(c, params) for c in selected], weights=q_sel))
            metrics.append(RoundMetrics(
                round=k,
                selected=tuple(selected),
                qcid=float(qcid_direct(clients, selected)),
                train_loss=train_loss,
                test_accuracy=accuracy(params.vector, shape, test.X, test.y),
                learning_rate=lr,
            ))
            state = update_counters(state, outcome)
            lr *= training.lr_decay
    finally:
        if pool:
            pool.shutdown()

    logger.info("%s seed=%d: best acc %.4f", strategy.strategy, seed, max(m.test_accuracy for m in metrics))
    return ExperimentResult(metrics, summarize(metrics, training.target_accuracy))


def metrics_as_dicts(metrics) -> list[dict]:
    return [asdict(m) for m in metrics]
