"""Non-IID client partitions and per-round availability sets."""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .core import ClientRecord, client_from_counts
from .exceptions import PartitionInfeasible, TooManyClients

SCHEMES = ("dirichlet", "one_class", "two_class", "case1", "case2")
_AVAILABILITY_STREAM = 0xA5A1


@dataclass(frozen=True)
class PartitionSpec:
    """How to split a dataset into clients and which clients each round sees.

    ``param`` is the Dirichlet concentration for ``dirichlet`` and the
    majority:minority ratio for ``case1``/``case2``; unused otherwise.
    """

    scheme: str = "dirichlet"
    n_clients: int = 200
    n_classes: int = 10
    param: float = 0.5
    availability_fraction: float = 0.3
    availability: str = "uniform"
    samples_per_client: int | None = None

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown partition scheme {self.scheme!r}; expected one of {SCHEMES}")
        if self.availability not in ("uniform", "case2_nonuniform"):
            raise ValueError(f"unknown availability mode {self.availability!r}")
        if not 0 < self.availability_fraction <= 1:
            raise ValueError("availability_fraction must lie in (0, 1]")
        if self.scheme in ("dirichlet", "case1", "case2") and self.param <= 0:
            raise ValueError("partition parameter must be positive")


def _ratio(ratio) -> Fraction:
    if isinstance(ratio, (tuple, list)):
        major, minor = ratio
        r = Fraction(major) / Fraction(minor)
    else:
        r = Fraction(str(ratio)) if isinstance(ratio, float) else Fraction(ratio)
    if r <= 0:
        raise PartitionInfeasible("ratio must be positive")
    return r


def _records(labels: np.ndarray, n_classes: int, assignments: Sequence[np.ndarray]) -> list[ClientRecord]:
    out = []
    for cid, idx in enumerate(assignments):
        idx = np.sort(np.asarray(idx, dtype=np.int64))
        counts = np.bincount(labels[idx], minlength=n_classes)
        out.append(client_from_counts(cid, counts, indices=idx))
    return out


def _class_pools(labels: np.ndarray, n_classes: int, rng: np.random.Generator) -> list[np.ndarray]:
    return [rng.permutation(np.flatnonzero(labels == b)) for b in range(n_classes)]


def largest_remainder(total: int, shares: np.ndarray) -> np.ndarray:
    """Round ``total * shares / shares.sum()`` to integers that sum to ``total``."""
    shares = np.asarray(shares, dtype=np.float64)
    if shares.sum() <= 0:
        shares = np.ones_like(shares)
    raw = total * shares / shares.sum()
    base = np.floor(raw).astype(np.int64)
    short = total - int(base.sum())
    if short:
        order = np.argsort(-(raw - base), kind="stable")
        base[order[:short]] += 1
    return base


def dirichlet_partition(labels, n_clients: int, alpha: float, seed: int = 0,
                        n_classes: int | None = None) -> list[ClientRecord]:
    """Label-skewed split: client n targets proportions drawn from Dirichlet(alpha * 1).

    Client sizes are an even split of the data. Each class is then divided
    among clients in proportion to ``size_n * p_n[b]`` with largest-remainder
    rounding, so class totals are conserved exactly; a client left empty
    receives one sample from the largest client.
    """
    labels = np.asarray(labels, dtype=np.int64)
    n_classes = int(n_classes or labels.max() + 1)
    if n_clients > len(labels):
        raise TooManyClients(f"{n_clients} clients for {len(labels)} samples")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    rng = np.random.default_rng(seed)
    class_counts = np.bincount(labels, minlength=n_classes)
    sizes = np.array([len(a) for a in np.array_split(np.arange(len(labels)), n_clients)])
    props = rng.dirichlet(np.full(n_classes, float(alpha)), size=n_clients)
    props = np.nan_to_num(props)
    alloc = np.zeros((n_clients, n_classes), dtype=np.int64)
    for b in range(n_classes):
        alloc[:, b] = largest_remainder(int(class_counts[b]), sizes * props[:, b])
    for n in np.flatnonzero(alloc.sum(axis=1) == 0):
        donor = int(np.argmax(alloc.sum(axis=1)))
        b = int(np.argmax(alloc[donor]))
        alloc[donor, b] -= 1
        alloc[n, b] += 1
    pools = _class_pools(labels, n_classes, rng)
    offsets = np.zeros(n_classes, dtype=np.int64)
    assignments = []
    for n in range(n_clients):
        idx = []
        for b in range(n_classes):
            take = alloc[n, b]
            idx.extend(pools[b][offsets[b]:offsets[b] + take])
            offsets[b] += take
        assignments.append(idx)
    return _records(labels, n_classes, assignments)


def fixed_class_partition(labels, n_clients: int, classes_per_client: int, seed: int = 0,
                          n_classes: int | None = None) -> list[ClientRecord]:
    """Every client holds equal shards of exactly one or two classes.

    One class: ``n_clients / B`` clients per class. Two classes: each class is
    cut into ``2 * n_clients / B`` shards and client n pairs shard n with shard
    n + N of the class-sorted shard list, which always lands in a different
    class.
    """
    labels = np.asarray(labels, dtype=np.int64)
    n_classes = int(n_classes or labels.max() + 1)
    if classes_per_client not in (1, 2):
        raise PartitionInfeasible("classes_per_client must be 1 or 2")
    n_shards = n_clients * classes_per_client
    if n_shards % n_classes:
        raise PartitionInfeasible(
            f"{n_clients} clients x {classes_per_client} classes is not divisible by {n_classes} classes")
    if classes_per_client == 2 and n_clients < n_classes / 2:
        raise PartitionInfeasible("too few clients for two-class shards")
    per_class = n_shards // n_classes
    rng = np.random.default_rng(seed)
    pools = _class_pools(labels, n_classes, rng)
    if any(len(p) < per_class for p in pools):
        raise PartitionInfeasible("a class has fewer samples than shards")
    shards = [s for pool in pools for s in np.array_split(pool, per_class)]
    if classes_per_client == 1:
        assignments = [shards[n] for n in range(n_clients)]
    else:
        assignments = [np.concatenate([shards[n], shards[n + n_clients]]) for n in range(n_clients)]
    order = rng.permutation(n_clients)
    return _records(labels, n_classes, [assignments[i] for i in order])


def _one_class_clients(labels, n_classes, clients_per_class, samples_per_client, rng):
    pools = _class_pools(labels, n_classes, rng)
    if samples_per_client is None:
        samples_per_client = min(len(pools[b]) // clients_per_class[b]
                                 for b in range(n_classes) if clients_per_class[b])
    if samples_per_client < 1:
        raise PartitionInfeasible("not enough samples for one-class clients")
    assignments, owner = [], []
    for b in range(n_classes):
        need = clients_per_class[b] * samples_per_client
        if need > len(pools[b]):
            raise PartitionInfeasible(f"class {b} has {len(pools[b])} samples, need {need}")
        for j in range(clients_per_class[b]):
            assignments.append(pools[b][j * samples_per_client:(j + 1) * samples_per_client])
            owner.append(b)
    return _records(labels, n_classes, assignments), owner


class UniformAvailability:
    """Each round, ``n_available`` distinct clients drawn uniformly at random."""

    def __init__(self, n_clients: int, n_available: int, seed: int = 0):
        if not 0 < n_available <= n_clients:
            raise ValueError("n_available must lie in 1..n_clients")
        self.n_clients = n_clients
        self.n_available = n_available
        self.seed = seed

    def __call__(self, round_index: int) -> tuple:
        rng = np.random.default_rng([self.seed, round_index, _AVAILABILITY_STREAM])
        return tuple(sorted(int(i) for i in rng.choice(self.n_clients, self.n_available, replace=False)))


class StratifiedAvailability:
    """Each round, a fixed number of clients drawn from every class group."""

    def __init__(self, groups: dict, per_group: dict, seed: int = 0):
        for g, k in per_group.items():
            if k > len(groups[g]):
                raise PartitionInfeasible(f"group {g} has {len(groups[g])} clients, need {k}")
        self.groups = {g: tuple(ids) for g, ids in groups.items()}
        self.per_group = dict(per_group)
        self.seed = seed

    @property
    def n_available(self) -> int:
        return sum(self.per_group.values())

    def __call__(self, round_index: int) -> tuple:
        rng = np.random.default_rng([self.seed, round_index, _AVAILABILITY_STREAM])
        chosen = []
        for g in sorted(self.groups):
            k = self.per_group.get(g, 0)
            if k:
                chosen.extend(int(i) for i in rng.choice(np.array(self.groups[g]), k, replace=False))
        return tuple(sorted(chosen))


def _split_counts(total: int, ratio: Fraction, what: str):
    """Split ``total`` into 5 majority + 5 minority groups at ``ratio``:1."""
    major = Fraction(total) * ratio / (5 * (ratio + 1))
    minor = Fraction(total) / (5 * (ratio + 1))
    if major.denominator != 1 or minor.denominator != 1 or minor < 1:
        raise PartitionInfeasible(f"{what}={total} cannot be split 5+5 at ratio {ratio}:1")
    return int(major), int(minor)


def case1_setup(labels, ratio=3, n_clients: int = 120, seed: int = 0,
                samples_per_client: int | None = None, availability_fraction: float = 0.3):
    """Class-imbalanced global data, uniform availability.

    One-class clients; classes 0-4 get ``r`` times as many clients as classes
    5-9 (18/6 at 3:1 and 20/4 at 5:1 for 120 clients).
    """
    labels = np.asarray(labels, dtype=np.int64)
    major, minor = _split_counts(n_clients, _ratio(ratio), "n_clients")
    per_class = [major] * 5 + [minor] * 5
    rng = np.random.default_rng(seed)
    clients, _ = _one_class_clients(labels, 10, per_class, samples_per_client, rng)
    n_available = int(np.floor(availability_fraction * n_clients + 1e-9))
    return clients, UniformAvailability(n_clients, n_available, seed)


def case2_setup(labels, ratio=3, n_clients: int = 200, seed: int = 0,
                samples_per_client: int | None = None, n_available: int = 60):
    """Balanced global data, class-skewed availability.

    20 one-class clients per class (for 200 clients); each round the
    availability draws ``r`` times as many clients from classes 0-4 as from
    5-9 (9/3 at 3:1 and 10/2 at 5:1, 60 in total).
    """
    labels = np.asarray(labels, dtype=np.int64)
    if n_clients % 10:
        raise PartitionInfeasible(f"n_clients={n_clients} is not a multiple of 10 classes")
    major, minor = _split_counts(n_available, _ratio(ratio), "n_available")
    rng = np.random.default_rng(seed)
    clients, owner = _one_class_clients(labels, 10, [n_clients // 10] * 10, samples_per_client, rng)
    groups = {b: [c.id for c, o in zip(clients, owner) if o == b] for b in range(10)}
    per_group = {b: (major if b < 5 else minor) for b in range(10)}
    return clients, StratifiedAvailability(groups, per_group, seed)


def sample_availability(n_clients: int, fraction: float = 1.0, mode: str = "uniform", seed: int = 0,
                        round_index: int = 1, sampler=None) -> tuple:
    """Available client ids for one round, deterministic in ``(seed, round_index)``.

    ``mode="case2_nonuniform"`` delegates to the ``sampler`` returned by
    :func:`case2_setup`.
    """
    if not 0 < fraction <= 1:
        raise ValueError("fraction must lie in (0, 1]")
    if mode == "case2_nonuniform":
        if sampler is None:
            raise ValueError("case2 availability needs the sampler from case2_setup")
        return sampler(round_index)
    if mode != "uniform":
        raise ValueError(f"unknown availability mode {mode!r}")
    n_available = max(1, int(np.floor(fraction * n_clients + 1e-9)))
    return UniformAvailability(n_clients, n_available, seed)(round_index)


def build_partition(spec: PartitionSpec, labels, seed: int = 0):
    """Clients plus a ``round -> available ids`` callable for ``spec``."""
    labels = np.asarray(labels, dtype=np.int64)
    if spec.scheme == "case1":
        return case1_setup(labels, spec.param, spec.n_clients, seed, spec.samples_per_client,
                           spec.availability_fraction)
    if spec.scheme == "case2":
        n_available = int(np.floor(spec.availability_fraction * spec.n_clients + 1e-9))
        return case2_setup(labels, spec.param, spec.n_clients, seed, spec.samples_per_client, n_available)
    if spec.scheme == "dirichlet":
        clients = dirichlet_partition(labels, spec.n_clients, spec.param, seed, spec.n_classes)
    else:
        clients = fixed_class_partition(labels, spec.n_clients, 1 if spec.scheme == "one_class" else 2,
                                        seed, spec.n_classes)
    n_available = max(1, int(np.floor(spec.availability_fraction * spec.n_clients + 1e-9)))
    return clients, UniformAvailability(spec.n_clients, n_available, seed)
