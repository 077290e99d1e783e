"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL/SKIP line.

The lines are printed in the terminal summary (section "acceptance criteria")
and, with ``-s``, also as each criterion finishes.
"""
import os
import time
from contextlib import contextmanager
from fractions import Fraction
from itertools import combinations
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from fedcbs import (SamplerState, StrategyConfig, client_from_counts, clients_from_counts, expected_qcid,
                    inner_product_matrix, qcid_direct, qcid_from_matrix, select_fedcbs, select_greedy_qcid)
from fedcbs.core import ClientRecord, LabelDistribution
from fedcbs.datasets import load_idx_dataset, make_synthetic_split
from fedcbs.flsim import (MLPShape, TrainingConfig, aggregate_fedavg, aggregate_fednova, init_params,
                          loss_and_grad, run_experiment)
from fedcbs.partition import PartitionSpec
from fedcbs.qcid import chain_subset_sum
from fedcbs.secure import check_nonidentifiability, run_protocol
from fedcbs.selection import chain_expected_qcid, enumerate_chain

from conftest import ACCEPTANCE_RESULTS, FOUR_CLIENTS, random_counts


@contextmanager
def criterion(number, title):
    detail = {"text": ""}
    try:
        yield detail
    except pytest.skip.Exception as exc:
        ACCEPTANCE_RESULTS[number] = ("SKIP", title, str(exc))
        print(f"\n[SKIP] criterion {number}: {title} -- {exc}")
        raise
    except BaseException as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        ACCEPTANCE_RESULTS[number] = ("FAIL", title, msg)
        print(f"\n[FAIL] criterion {number}: {title} -- {msg}")
        raise
    ACCEPTANCE_RESULTS[number] = ("PASS", title, detail["text"])
    print(f"\n[PASS] criterion {number}: {title} -- {detail['text']}")


def _float_clients(rng, n, b):
    q = rng.integers(1, 500, size=n)
    alphas = rng.dirichlet(np.full(b, 0.7), size=n)
    return [ClientRecord(i, int(q[i]), LabelDistribution(tuple((a / a.sum()).tolist()))) for i, a in enumerate(alphas)]


def test_criterion_01_three_forms_agree():
    with criterion(1, "direct / matrix / incremental QCID agree on 1000 instances") as out:
        rng = np.random.default_rng(2024)
        start = time.perf_counter()
        worst = 0.0
        for _ in range(1000):
            n, b = int(rng.integers(1, 21)), int(rng.integers(2, 11))
            clients = _float_clients(rng, n, b)
            S = inner_product_matrix(clients)
            q = [c.quantity for c in clients]
            order = rng.permutation(n)[: int(rng.integers(1, n + 1))].tolist()
            d = qcid_direct(clients, order)
            worst = max(worst, abs(qcid_from_matrix(S, q, order) - d), abs(chain_subset_sum(S, q, order).qcid - d))
        elapsed = time.perf_counter() - start
        out["text"] = f"max deviation {worst:.2e}, {elapsed:.2f} s"
        assert worst < 1e-12, out["text"]
        assert elapsed < 5, out["text"]


def test_criterion_02_worked_example():
    with criterion(2, "four-client example: greedy path, sampler frequency, exact QCID") as out:
        start = time.perf_counter()
        clients = clients_from_counts(FOUR_CLIENTS, exact=True)
        S = inner_product_matrix(clients)
        q = [c.quantity for c in clients]
        assert select_greedy_qcid(range(4), S, q, 3).selected == (0, 1, 2)
        assert qcid_direct(clients, {0, 1, 2}) == Fraction(2, 135)
        assert qcid_from_matrix(S, q, (0, 1, 2)) == Fraction(2, 135)

        cfg = StrategyConfig(exploration_factor=0.0, beta_schedule=(1, 2, 3), qcid_floor=1e-20)
        # Draws use float distributions, the representation the training engine samples with.
        S_float = inner_product_matrix(clients_from_counts(FOUR_CLIENTS))
        state = SamplerState.initial(range(4), 7)
        draws = 10_000
        hits = sum(select_fedcbs(state, range(4), S_float, q, 3, cfg).as_set == {0, 2, 3} for _ in range(draws))
        oracle = sum(p for t, p in enumerate_chain(range(4), S, q, 3, cfg).items() if set(t) == {0, 2, 3})
        elapsed = time.perf_counter() - start
        freq = hits / draws
        out["text"] = (f"greedy (C1,C2,C3) ok, QCID 2/135 ok; balanced-set frequency {freq:.4f} "
                       f"(chain oracle {float(oracle):.5f}), {elapsed:.2f} s")
        assert elapsed < 5, out["text"]
        assert freq > 0.999, out["text"] + "; required > 0.999"


def test_criterion_03_expectation_reduction():
    with criterion(3, "exact E[QCID]: sampler < uniform, power(beta) decreasing, 50 instances") as out:
        rng = np.random.default_rng(33)
        start = time.perf_counter()
        cfg = StrategyConfig(exploration_factor=0.0)
        checked_power = 0
        for i in range(50):
            b = int(rng.integers(2, 7))
            clients = clients_from_counts(random_counts(rng, 8, b), exact=True)
            S = inner_product_matrix(clients)
            q = [c.quantity for c in clients]
            uniform = expected_qcid(clients, 3)
            chain = chain_expected_qcid(range(8), S, q, 3, cfg)
            assert isinstance(chain, Fraction) and isinstance(uniform, Fraction)
            assert chain < uniform, f"instance {i}: sampler {float(chain)} >= uniform {float(uniform)}"
            values = {qcid_direct(clients, s) for s in combinations(range(8), 3)}
            if len(values) >= 2:
                p1, p2, p4 = (expected_qcid(clients, 3, beta) for beta in (1, 2, 4))
                assert p1 > p2 > p4, f"instance {i}: power expectations not decreasing"
                checked_power += 1
        elapsed = time.perf_counter() - start
        out["text"] = f"50/50 instances, {checked_power} with power chain checked, {elapsed:.1f} s"
        assert elapsed < 30, out["text"]


def _chi2_instance(seed, lam, state_kwargs, draws=100_000):
    rng = np.random.default_rng(seed)
    clients = clients_from_counts(random_counts(rng, 6, 4))
    S = inner_product_matrix(clients)
    q = [c.quantity for c in clients]
    cfg = StrategyConfig(exploration_factor=lam)
    oracle_state = SamplerState(**state_kwargs)
    probs = enumerate_chain(range(6), S, q, 2, cfg, oracle_state)
    state = SamplerState(**state_kwargs, rng=np.random.default_rng(seed + 1))
    counts = dict.fromkeys(probs, 0)
    for _ in range(draws):
        counts[select_fedcbs(state, range(6), S, q, 2, cfg).selected] += 1
    keys = sorted(probs, key=lambda t: -probs[t])
    expected = np.array([float(probs[k]) * draws for k in keys])
    observed = np.array([counts[k] for k in keys], dtype=float)
    big = expected >= 5
    obs, exp = list(observed[big]), list(expected[big])
    if (~big).any():
        obs.append(observed[~big].sum())
        exp.append(expected[~big].sum())
    exp = np.array(exp) * sum(obs) / sum(exp)
    return stats.chisquare(obs, exp).pvalue, len(obs)


def test_criterion_04_sampler_matches_oracle():
    with criterion(4, "chi-square of 1e5 sampler draws vs enumerated chain, N=6, M=2") as out:
        p0, k0 = _chi2_instance(404, 0.0, {"round_index": 1})
        p1, k1 = _chi2_instance(405, 1.0, {"round_index": 6, "counts": {0: 4, 1: 1, 2: 2, 3: 1, 4: 3, 5: 1}})
        out["text"] = f"p-values {p0:.3f} ({k0} cells), {p1:.3f} ({k1} cells, exploration on)"
        assert p0 > 0.01 and p1 > 0.01, out["text"]


def test_criterion_05_read_bound():
    with criterion(5, "matrix-entry reads per selection <= N*M^2") as out:
        rng = np.random.default_rng(5)
        parts = []
        for n, m in ((60, 10), (36, 10), (200, 30)):
            clients = _float_clients(rng, n, 10)
            S = inner_product_matrix(clients)
            q = [c.quantity for c in clients]
            counts = {i: int(rng.integers(1, 6)) for i in range(n)}
            state = SamplerState(round_index=9, counts=counts, rng=np.random.default_rng(n))
            with S.counting():
                select_fedcbs(state, range(n), S, q, m, StrategyConfig())
                reads = S.reads
            parts.append(f"({n},{m}): {reads} <= {n * m * m}")
            assert reads <= n * m * m, parts[-1]
        out["text"] = "; ".join(parts)


def test_criterion_06_gradients():
    with criterion(6, "MLP gradients vs central differences on 100 pairs") as out:
        rng = np.random.default_rng(6)
        shape = MLPShape(6, 16, 4)
        worst = 0.0
        h = 1e-5
        for _ in range(100):
            vec = init_params(shape, rng).vector * rng.uniform(0.5, 2.0)
            X = rng.standard_normal((int(rng.integers(1, 6)), 6))
            y = rng.integers(0, 4, len(X))
            _, grad = loss_and_grad(vec, shape, X, y, 5e-4)
            num = np.empty_like(vec)
            for i in range(len(vec)):
                e = np.zeros_like(vec)
                e[i] = h
                num[i] = (loss_and_grad(vec + e, shape, X, y, 5e-4)[0]
                          - loss_and_grad(vec - e, shape, X, y, 5e-4)[0]) / (2 * h)
            rel = np.linalg.norm(grad - num) / max(np.linalg.norm(grad), np.linalg.norm(num), 1e-300)
            worst = max(worst, rel)
        out["text"] = f"max relative error {worst:.2e}"
        assert worst < 1e-4, out["text"]


def test_criterion_07_fednova_reduction():
    with criterion(7, "FedNova equals FedAvg under equal local steps") as out:
        rng = np.random.default_rng(7)
        shape = MLPShape(5, 8, 3)
        worst = 0.0
        for _ in range(200):
            k = int(rng.integers(1, 11))
            g = init_params(shape, rng)
            clients = [g.replace_vector(g.vector + rng.normal(0, 0.1, g.vector.shape)) for _ in range(k)]
            q = rng.integers(1, 1000, k).tolist()
            tau = [int(rng.integers(1, 50))] * k
            diff = aggregate_fednova(g, clients, q, tau).vector - aggregate_fedavg(clients, q).vector
            worst = max(worst, float(np.max(np.abs(diff))))
        out["text"] = f"max deviation {worst:.2e} over 200 aggregations"
        assert worst < 1e-12, out["text"]


def test_criterion_08_protocol():
    with criterion(8, "protocol privacy, exact S, non-identifiability witness") as out:
        rng = np.random.default_rng(8)
        for _ in range(30):
            n, b = int(rng.integers(2, 9)), int(rng.integers(2, 7))
            counts = random_counts(rng, n, b)
            while all(len(set(row)) == 1 for row in counts.tolist()):
                counts = random_counts(rng, n, b)
            clients = [client_from_counts(i, row, exact=True) for i, row in enumerate(counts)]
            result = run_protocol(clients)
            server = result.views["server"]
            assert not server.entries("alpha"), "server saw a distribution"
            assert server.kinds() <= {"ciphertext"}
            assert result.S.rows() == inner_product_matrix(clients).rows(), "S differs from plaintext oracle"
            A = [c.distribution.proportions for c in clients]
            w = check_nonidentifiability(A, result.S)
            assert not np.array_equal(w.alternative, w.original)
            assert np.max(np.abs(w.alternative @ w.alternative.T - result.S.to_array())) <= 1e-12
        out["text"] = "30 random instances"


E2E_ROUNDS = 150


def test_criterion_09_end_to_end():
    with criterion(9, "imbalanced-availability run: QCID ratio and rounds to random's best") as out:
        start = time.perf_counter()
        train, test = make_synthetic_split(400, 200, n_features=20, cluster_std=1.0, center_scale=1.0, seed=0)
        spec = PartitionSpec(scheme="case2", n_clients=200, param=3, availability_fraction=0.3,
                             samples_per_client=20)
        training = TrainingConfig(rounds=E2E_ROUNDS, n_select=10)
        wins, ratios, parts = 0, [], []
        for seed in range(3):
            rand = run_experiment(spec, StrategyConfig(strategy="random"), training, seed, train, test)
            cbs = run_experiment(spec, StrategyConfig(strategy="fedcbs"), training, seed, train, test)
            ratio = cbs.summary["mean_qcid"] / rand.summary["mean_qcid"]
            ratios.append(ratio)
            target = rand.summary["best_accuracy"]
            reached = np.flatnonzero(cbs.accuracies() >= target)
            cbs_round = int(reached[0]) + 1 if len(reached) else None
            rand_round = rand.summary["best_round"]
            wins += cbs_round is not None and cbs_round < rand_round
            parts.append(f"seed {seed}: qcid {cbs.summary['mean_qcid']:.4f}/{rand.summary['mean_qcid']:.4f}, "
                         f"rounds {cbs_round} vs {rand_round}")
        elapsed = time.perf_counter() - start
        out["text"] = "; ".join(parts) + f"; {elapsed:.0f} s"
        assert all(r < 0.2 for r in ratios), out["text"]
        assert wins >= 2, out["text"]
        assert elapsed < 600, out["text"]


MNIST_ENV = "FEDCBS_MNIST_DIR"
MNIST_FILES = ("train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte",
               "t10k-labels-idx1-ubyte")


def _mnist_paths():
    root = os.environ.get(MNIST_ENV)
    if not root:
        return None
    paths = []
    for name in MNIST_FILES:
        for candidate in (Path(root) / name, Path(root) / f"{name}.gz"):
            if candidate.exists():
                paths.append(candidate)
                break
        else:
            return None
    return paths


@pytest.mark.slow
def test_criterion_10_mnist():
    with criterion(10, "MNIST one-class clients: Fed-CBS final accuracy within 3 pp of select-all") as out:
        paths = _mnist_paths()
        if paths is None:
            pytest.skip(f"set {MNIST_ENV} to a directory holding the four MNIST IDX files")
        start = time.perf_counter()
        train = load_idx_dataset(paths[0], paths[1])
        test = load_idx_dataset(paths[2], paths[3])
        spec = PartitionSpec(scheme="one_class", n_clients=100, availability_fraction=1.0)
        training = TrainingConfig(rounds=200, n_select=10, n_hidden=64, n_jobs=4)
        cbs = run_experiment(spec, StrategyConfig(strategy="fedcbs"), training, 0, train, test)
        full = run_experiment(spec, StrategyConfig(strategy="all"), training, 0, train, test)
        gap = full.summary["final_accuracy"] - cbs.summary["final_accuracy"]
        elapsed = time.perf_counter() - start
        out["text"] = (f"fedcbs {cbs.summary['final_accuracy']:.4f} vs all {full.summary['final_accuracy']:.4f}, "
                       f"{elapsed / 60:.1f} min")
        assert gap <= 0.03, out["text"]
        assert elapsed < 3600, out["text"]
