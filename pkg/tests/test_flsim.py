import numpy as np
import pytest

from fedcbs.core import StrategyConfig
from fedcbs.datasets import make_synthetic_split
from fedcbs.exceptions import EmptyDataset, InvalidSteps, NoUpdates, ShapeError
from fedcbs.flsim import (MLPShape, ModelParams, SoftmaxMLP, TrainingConfig, aggregate_fedavg,
                          aggregate_fednova, init_params, local_update, loss_and_grad, rounds_to_target,
                          run_experiment, steps_for)
from fedcbs.flsim.engine import RoundMetrics, summarize
from fedcbs.partition import PartitionSpec

SHAPE = MLPShape(5, 7, 3)


def _central_diff(vector, shape, X, y, wd, h=1e-5):
    grad = np.zeros_like(vector)
    for i in range(len(vector)):
        e = np.zeros_like(vector)
        e[i] = h
        up = loss_and_grad(vector + e, shape, X, y, wd)[0]
        down = loss_and_grad(vector - e, shape, X, y, wd)[0]
        grad[i] = (up - down) / (2 * h)
    return grad


@pytest.mark.parametrize("seed", range(5))
def test_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    vec = init_params(SHAPE, rng).vector
    X = rng.standard_normal((4, 5))
    y = rng.integers(0, 3, 4)
    _, grad = loss_and_grad(vec, SHAPE, X, y, 5e-4)
    num = _central_diff(vec, SHAPE, X, y, 5e-4)
    assert np.linalg.norm(grad - num) / np.linalg.norm(num) < 1e-6


def test_single_sample_single_step():
    rng = np.random.default_rng(2)
    params = init_params(SHAPE, rng)
    X, y = rng.standard_normal((1, 5)), np.array([1])
    cfg = TrainingConfig(batch_size=1, weight_decay=0.0)
    out, steps = local_update(params, X, y, cfg, steps=1, learning_rate=0.1, seed=0)
    _, grad = loss_and_grad(params.vector, SHAPE, X, y, 0.0)
    assert steps == 1
    assert np.allclose(out.vector, params.vector - 0.1 * grad)


def test_zero_steps_is_identity():
    params = init_params(SHAPE, np.random.default_rng(0))
    X, y = np.ones((3, 5)), np.array([0, 1, 2])
    out, steps = local_update(params, X, y, TrainingConfig(), 0, 0.1, 0)
    assert steps == 0 and np.array_equal(out.vector, params.vector)
    with pytest.raises(EmptyDataset):
        local_update(params, X[:0], y[:0], TrainingConfig(), 1, 0.1, 0)


def test_steps_rule():
    assert steps_for(120, TrainingConfig(batch_size=50, local_epochs=5)) == 15
    assert steps_for(120, TrainingConfig(local_steps=3)) == 3


def test_init_bounds():
    p = init_params(MLPShape(16, 4, 2), np.random.default_rng(0))
    W1, b1, W2, b2 = p.shape.unpack(p.vector)
    assert np.abs(W1).max() <= 0.25 and np.abs(W2).max() <= 0.5
    with pytest.raises(ValueError):
        ModelParams(np.full(p.shape.n_params, np.nan), p.shape)
    with pytest.raises(ShapeError):
        ModelParams(np.zeros(3), p.shape)


def test_fedavg():
    shape = MLPShape(1, 1, 2)
    a = ModelParams(np.arange(6.0), shape)
    b = ModelParams(np.arange(6.0) + 4, shape)
    assert np.array_equal(aggregate_fedavg([a, a], [2, 7]).vector, a.vector)
    assert np.allclose(aggregate_fedavg([a, b], [3, 3]).vector, a.vector + 2)
    assert np.allclose(aggregate_fedavg([a, b], [1, 3]).vector, 0.25 * a.vector + 0.75 * b.vector)
    with pytest.raises(NoUpdates):
        aggregate_fedavg([], [])
    with pytest.raises(ShapeError):
        aggregate_fedavg([a, ModelParams(np.zeros(SHAPE.n_params), SHAPE)], [1, 1])


def test_fednova_hand_computed():
    shape = MLPShape(1, 1, 2)  # 6 parameters; only the first two move
    w = ModelParams(np.array([1.0, 2.0, 0, 0, 0, 0]), shape)
    w1 = ModelParams(np.array([0.0, 2.0, 0, 0, 0, 0]), shape)   # tau=1, d1 = (1, 0)
    w2 = ModelParams(np.array([1.0, -2.0, 0, 0, 0, 0]), shape)  # tau=2, d2 = (0, 2)
    out = aggregate_fednova(w, [w1, w2], [1, 1], [1, 2])
    # p = (1/2, 1/2), tau_eff = 3/2, avg d = (1/2, 1): w - 3/2 * (1/2, 1) = (1/4, 1/2)
    assert np.allclose(out.vector[:2], [0.25, 0.5], atol=1e-15)
    assert not np.allclose(out.vector, aggregate_fedavg([w1, w2], [1, 1]).vector)


def test_fednova_reduces_to_fedavg():
    rng = np.random.default_rng(0)
    g = init_params(SHAPE, rng)
    clients = [init_params(SHAPE, rng) for _ in range(4)]
    q = [3, 9, 1, 5]
    nova = aggregate_fednova(g, clients, q, [7] * 4)
    assert np.max(np.abs(nova.vector - aggregate_fedavg(clients, q).vector)) < 1e-12
    single = aggregate_fednova(g, clients[:1], [4], [3])
    assert np.allclose(single.vector, clients[0].vector, atol=1e-14)
    with pytest.raises(InvalidSteps):
        aggregate_fednova(g, clients[:2], [1, 1], [0, 1])
    with pytest.raises(NoUpdates):
        aggregate_fednova(g, [], [], [])


def _metrics(accs):
    return [RoundMetrics(k + 1, (), 0.0, 0.0, a, 0.01) for k, a in enumerate(accs)]


def test_rounds_to_target():
    ramp = _metrics(np.linspace(0.2, 0.8, 13))  # crosses 0.5 at round 7
    assert rounds_to_target(ramp, 0.0) == 1
    assert rounds_to_target(ramp, 1.01) is None
    assert rounds_to_target(ramp, 0.5) == 7
    assert summarize(ramp, 0.5)["rounds_to_target"] == 7


@pytest.fixture(scope="module")
def blobs():
    return make_synthetic_split(40, 20, n_classes=10, n_features=8, seed=0)


def _run(blobs, strategy="fedcbs", **training):
    train, test = blobs
    spec = PartitionSpec(scheme="dirichlet", n_clients=20, param=0.5, availability_fraction=0.5)
    cfg = TrainingConfig(**{"rounds": 6, "n_select": 4, **training})
    return run_experiment(spec, StrategyConfig(strategy=strategy), cfg, 3, train, test)


def test_run_is_deterministic(blobs):
    a = _run(blobs)
    b = _run(blobs)
    c = _run(blobs, n_jobs=3)
    assert a.metrics == b.metrics == c.metrics
    assert len(a.metrics) == 6
    for m in a.metrics:
        assert 0 <= m.test_accuracy <= 1 and 0 <= m.qcid <= 0.9
        assert len(m.selected) == 4


@pytest.mark.parametrize("strategy", ["random", "pow_d", "greedy_qcid"])
def test_run_other_strategies(blobs, strategy):
    res = _run(blobs, strategy, aggregator="fednova")
    assert len(res.metrics) == 6


def test_select_all_loss_decreases(blobs):
    train, test = blobs
    spec = PartitionSpec(scheme="dirichlet", n_clients=10, param=0.5, availability_fraction=1.0)
    cfg = TrainingConfig(rounds=20, n_select=10, local_epochs=1, learning_rate=0.05)
    res = run_experiment(spec, StrategyConfig(strategy="all"), cfg, 0, train, test)
    losses = [m.train_loss for m in res.metrics]
    assert all(len(m.selected) == 10 for m in res.metrics)
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_training_config_validation():
    with pytest.raises(ValueError):
        TrainingConfig(aggregator="median")
    with pytest.raises(ValueError):
        TrainingConfig(learning_rate=0)


def test_softmax_mlp_estimator(blobs):
    train, test = blobs
    clf = SoftmaxMLP(epochs=30, learning_rate=0.1, random_state=0).fit(train.X, train.y)
    assert clf.score(test.X, test.y) > 0.5
    assert np.allclose(clf.predict_proba(test.X[:3]).sum(axis=1), 1)
