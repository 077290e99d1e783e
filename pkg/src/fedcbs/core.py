"""Domain types and grouped label-distribution arithmetic.

Proportions are held as plain tuples so the same code paths serve both
64-bit floats and :class:`fractions.Fraction` (the exact mode used by the
enumeration oracles).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numpy as np

from .exceptions import EmptySubset, InvalidDistribution, UnknownClient

SUM_TOLERANCE = 1e-12


@dataclass(frozen=True)
class LabelDistribution:
    """Per-class proportion vector of one local (or grouped) dataset."""

    proportions: tuple

    def __post_init__(self):
        props = tuple(self.proportions)
        object.__setattr__(self, "proportions", props)
        if len(props) < 2:
            raise InvalidDistribution("label distribution needs at least 2 classes")
        if any(p < 0 for p in props):
            raise InvalidDistribution("proportions must be non-negative")
        if abs(float(sum(props)) - 1.0) > SUM_TOLERANCE:
            raise InvalidDistribution(f"proportions sum to {float(sum(props))!r}, not 1")

    @property
    def n_classes(self) -> int:
        return len(self.proportions)

    @property
    def exact(self) -> bool:
        return all(isinstance(p, Fraction) for p in self.proportions)

    def __len__(self):
        return len(self.proportions)

    def __getitem__(self, b):
        return self.proportions[b]

    def as_array(self) -> np.ndarray:
        return np.array([float(p) for p in self.proportions], dtype=np.float64)

    def dot(self, other: "LabelDistribution"):
        if other.n_classes != self.n_classes:
            raise InvalidDistribution("class counts differ")
        return sum(a * b for a, b in zip(self.proportions, other.proportions))


@dataclass(frozen=True)
class ClientRecord:
    """One client: dense id, sample count q_n, label distribution, selection count T_n.

    ``indices`` optionally points into the backing dataset so the training
    engine can materialise the local data.
    """

    id: int
    quantity: int
    distribution: LabelDistribution
    selection_count: int = 1
    indices: tuple | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.quantity < 1:
            raise InvalidDistribution(f"client {self.id}: quantity must be >= 1")
        if self.selection_count < 1:
            raise InvalidDistribution(f"client {self.id}: selection_count must be >= 1")

    def with_distribution(self, distribution: LabelDistribution) -> "ClientRecord":
        return replace(self, distribution=distribution)


def make_label_distribution(counts: Sequence[int], exact: bool = False) -> LabelDistribution:
    """Normalise raw class counts into a :class:`LabelDistribution`.

    With ``exact=True`` the proportions are fractions, otherwise floats.
    """
    counts = [int(c) for c in counts]
    if len(counts) < 2:
        raise InvalidDistribution("need at least 2 classes")
    if any(c < 0 for c in counts):
        raise InvalidDistribution("class counts must be non-negative")
    total = sum(counts)
    if total == 0:
        raise InvalidDistribution("class counts sum to zero")
    if exact:
        return LabelDistribution(tuple(Fraction(c, total) for c in counts))
    return LabelDistribution(tuple(c / total for c in counts))


def client_from_counts(client_id: int, counts: Sequence[int], exact: bool = False,
                       indices: Iterable[int] | None = None) -> ClientRecord:
    counts = [int(c) for c in counts]
    return ClientRecord(
        id=client_id,
        quantity=sum(counts),
        distribution=make_label_distribution(counts, exact=exact),
        indices=None if indices is None else tuple(int(i) for i in indices),
    )


def clients_from_counts(counts_matrix, exact: bool = False) -> list[ClientRecord]:
    """Build dense-id clients from an ``(N, B)`` matrix of class counts."""
    return [client_from_counts(i, row, exact=exact) for i, row in enumerate(counts_matrix)]


def index_clients(clients: Iterable[ClientRecord]) -> dict[int, ClientRecord]:
    return {c.id: c for c in clients}


def _lookup(clients, subset) -> list[ClientRecord]:
    if not isinstance(clients, Mapping):
        clients = index_clients(clients)
    ids = list(subset)
    if not ids:
        raise EmptySubset("subset is empty")
    try:
        return [clients[i] for i in ids]
    except KeyError as exc:
        raise UnknownClient(exc.args[0]) from None


def grouped_distribution(clients, subset: Iterable[int]) -> LabelDistribution:
    """Label distribution of the union of the local datasets in ``subset``.

    Each class proportion is the q-weighted mean of the members' proportions.
    """
    members = _lookup(clients, subset)
    n_classes = members[0].distribution.n_classes
    if any(m.distribution.n_classes != n_classes for m in members):
        raise InvalidDistribution("clients disagree on the number of classes")
    q_total = sum(m.quantity for m in members)
    exact = all(m.distribution.exact for m in members)
    props = []
    for b in range(n_classes):
        num = sum(m.quantity * m.distribution[b] for m in members)
        props.append(Fraction(num) / q_total if exact else float(num) / q_total)
    return LabelDistribution(tuple(props))


@dataclass(frozen=True)
class SelectionOutcome:
    """Ordered selection plus the per-step weights that produced it.

    ``step_weights[m]`` maps every candidate of step ``m`` to its unnormalised
    weight. In float mode the weights are evaluated in log space; the linear
    values kept here may overflow to ``inf`` for steep beta schedules, so
    ``step_log_weights`` is the authoritative record there.
    """

    selected: tuple
    step_weights: tuple = ()
    joint_unnormalized_weight: object = None
    step_log_weights: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "selected", tuple(int(i) for i in self.selected))
        if len(set(self.selected)) != len(self.selected):
            raise ValueError("selection contains duplicate ids")

    def __len__(self):
        return len(self.selected)

    @property
    def as_set(self) -> frozenset:
        return frozenset(self.selected)


STRATEGIES = ("fedcbs", "random", "pow_d", "greedy_qcid", "all")


@dataclass(frozen=True)
class StrategyConfig:
    """Which selection strategy to run and its knobs.

    ``beta_schedule=None`` means beta_m = m. ``pow_d_candidates=None`` means
    d = 2 * M. ``greedy_noise`` is the Dirichlet concentration used to corrupt
    the label distributions seen by the greedy baseline (``None`` = exact).
    """

    strategy: str = "fedcbs"
    exploration_factor: float = 10.0
    beta_schedule: tuple | None = None
    qcid_floor: float = 1e-20
    pow_d_candidates: int | None = None
    greedy_noise: float | None = None

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}")
        if self.exploration_factor < 0:
            raise ValueError("exploration_factor must be non-negative")
        if self.beta_schedule is not None:
            object.__setattr__(self, "beta_schedule", tuple(self.beta_schedule))
            if any(b <= 0 for b in self.beta_schedule):
                raise ValueError("beta schedule must be strictly positive")
        if self.qcid_floor <= 0:
            raise ValueError("qcid_floor must be positive")
        if self.pow_d_candidates is not None and self.pow_d_candidates < 1:
            raise ValueError("pow_d_candidates must be positive")
        if self.greedy_noise is not None and self.greedy_noise <= 0:
            raise ValueError("greedy_noise concentration must be positive")

    def betas(self, n_select: int) -> tuple:
        if self.beta_schedule is None:
            return tuple(range(1, n_select + 1))
        if len(self.beta_schedule) < n_select:
            raise ValueError(f"beta schedule has {len(self.beta_schedule)} entries, need {n_select}")
        return self.beta_schedule[:n_select]

    def candidate_count(self, n_select: int) -> int:
        return self.pow_d_candidates if self.pow_d_candidates is not None else 2 * n_select
