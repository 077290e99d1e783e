"""Quadratic class-imbalance degree (QCID) in direct, matrix and incremental form."""
from __future__ import annotations

import math
from contextlib import contextmanager
from dataclasses import dataclass
from fractions import Fraction
from itertools import combinations
from typing import Iterable, Sequence

import numpy as np

from .core import ClientRecord, grouped_distribution, index_clients
from .exceptions import (
    DuplicateCandidate,
    EmptySubset,
    EnumerationTooLarge,
    InvalidDistribution,
    ShapeError,
    UnknownClient,
)

ENUMERATION_LIMIT = 10**6


def as_exact_floor(floor) -> Fraction:
    """Decimal-faithful rational version of a float floor (1e-20 -> 1/10**20)."""
    return floor if isinstance(floor, Fraction) else Fraction(repr(float(floor)))


def apply_floor(value, floor):
    if isinstance(value, Fraction):
        return max(value, as_exact_floor(floor))
    return max(float(value), float(floor))


class InnerProductMatrix:
    """Pairwise inner products ``s[n, n'] = alpha_n . alpha_n'`` of N clients.

    Entries are Python floats or Fractions. Every access through :meth:`entry`
    is counted while a :meth:`counting` block is active, which is how the
    O(N * M^2) work bound of the sequential sampler is checked.
    """

    def __init__(self, entries, n_classes: int):
        if isinstance(entries, np.ndarray):
            rows = entries.tolist()
        else:
            rows = [list(r) for r in entries]
        n = len(rows)
        if any(len(r) != n for r in rows):
            raise ShapeError("inner-product matrix must be square")
        if n_classes < 2:
            raise InvalidDistribution("need at least 2 classes")
        tol = 1e-12
        for i in range(n):
            if not 1 / n_classes - tol <= rows[i][i] <= 1 + tol:
                raise ShapeError(f"diagonal entry {i} outside [1/B, 1]")
            for j in range(i):
                if abs(rows[i][j] - rows[j][i]) > tol:
                    raise ShapeError("inner-product matrix must be symmetric")
                if not -tol <= rows[i][j] <= 1 + tol:
                    raise ShapeError(f"entry ({i}, {j}) outside [0, 1]")
        self._rows = rows
        self.n_classes = int(n_classes)
        self._counting = False
        self.reads = 0

    @property
    def dimension(self) -> int:
        return len(self._rows)

    @property
    def exact(self) -> bool:
        return all(isinstance(v, Fraction) for r in self._rows for v in r)

    def entry(self, i: int, j: int):
        if self._counting:
            self.reads += 1
        return self._rows[i][j]

    @contextmanager
    def counting(self):
        """Count matrix-entry reads inside the block; yields ``self``."""
        previous = self._counting
        self._counting = True
        self.reads = 0
        try:
            yield self
        finally:
            self._counting = previous

    def to_array(self) -> np.ndarray:
        return np.array([[float(v) for v in r] for r in self._rows], dtype=np.float64)

    def rows(self) -> list:
        return [list(r) for r in self._rows]

    def __eq__(self, other):
        if not isinstance(other, InnerProductMatrix):
            return NotImplemented
        return self.n_classes == other.n_classes and self._rows == other._rows

    def __repr__(self):
        kind = "exact" if self.exact else "float"
        return f"InnerProductMatrix(N={self.dimension}, B={self.n_classes}, {kind})"


def inner_product_matrix(clients: Sequence[ClientRecord], exact: bool | None = None) -> InnerProductMatrix:
    """Plaintext S for dense-id clients ``0..N-1``."""
    clients = sorted(clients, key=lambda c: c.id)
    if [c.id for c in clients] != list(range(len(clients))):
        raise ShapeError("client ids must be dense 0..N-1")
    if not clients:
        raise EmptySubset("no clients")
    n_classes = clients[0].distribution.n_classes
    if exact is None:
        exact = all(c.distribution.exact for c in clients)
    if exact:
        vecs = [tuple(Fraction(p) for p in c.distribution.proportions) for c in clients]
        rows = [[sum(a * b for a, b in zip(u, v)) for v in vecs] for u in vecs]
    else:
        A = np.stack([c.distribution.as_array() for c in clients])
        rows = A @ A.T
    return InnerProductMatrix(rows, n_classes)


def qcid_of_distribution(distribution) -> object:
    n_classes = distribution.n_classes
    if distribution.exact:
        target = Fraction(1, n_classes)
    else:
        target = 1.0 / n_classes
    return sum((p - target) ** 2 for p in distribution.proportions)


def qcid_direct(clients, subset: Iterable[int]):
    """QCID from the grouped label distribution: sum_b (alpha_g[b] - 1/B)^2."""
    return qcid_of_distribution(grouped_distribution(clients, subset))


def _check_quantities(S: InnerProductMatrix, quantities):
    if len(quantities) != S.dimension:
        raise ShapeError(f"{len(quantities)} quantities for an {S.dimension}x{S.dimension} matrix")


def _check_id(S: InnerProductMatrix, i: int):
    if not 0 <= i < S.dimension:
        raise UnknownClient(i)


def _finish(pair_sum, q_sum: int, n_classes: int):
    if isinstance(pair_sum, Fraction):
        return pair_sum / (q_sum * q_sum) - Fraction(1, n_classes)
    return float(pair_sum) / (q_sum * q_sum) - 1.0 / n_classes


def qcid_from_matrix(S: InnerProductMatrix, quantities: Sequence[int], subset: Iterable[int]):
    """QCID from pairwise inner products only (no access to the distributions)."""
    _check_quantities(S, quantities)
    ids = list(subset)
    if not ids:
        raise EmptySubset("subset is empty")
    for i in ids:
        _check_id(S, i)
    pair_sum = sum(quantities[i] * quantities[j] * S.entry(i, j) for i in ids for j in ids)
    return _finish(pair_sum, sum(int(quantities[i]) for i in ids), S.n_classes)


@dataclass(frozen=True)
class SubsetSum:
    """Running sum of the q-weighted principal submatrix of S for a subset."""

    subset: tuple
    weighted_pair_sum: object
    quantity_sum: int
    n_classes: int

    @property
    def qcid(self):
        if not self.subset:
            raise EmptySubset("QCID of the empty subset is undefined")
        return _finish(self.weighted_pair_sum, self.quantity_sum, self.n_classes)


def empty_subset_sum(S: InnerProductMatrix) -> SubsetSum:
    zero = Fraction(0) if S.exact else 0.0
    return SubsetSum((), zero, 0, S.n_classes)


def extend_subset_sum(prev: SubsetSum, candidate: int, S: InnerProductMatrix,
                      quantities: Sequence[int]) -> SubsetSum:
    """Add ``candidate`` to ``prev``, reading only the new border of the submatrix.

    The border is the new row, the new column and the new diagonal entry:
    ``2 * len(prev.subset) + 1`` reads.
    """
    if candidate in prev.subset:
        raise DuplicateCandidate(f"client {candidate} already in subset")
    _check_id(S, candidate)
    qc = quantities[candidate]
    border = qc * qc * S.entry(candidate, candidate)
    for n in prev.subset:
        qn = quantities[n]
        border += qc * qn * S.entry(candidate, n)
        border += qn * qc * S.entry(n, candidate)
    return SubsetSum(
        prev.subset + (candidate,),
        prev.weighted_pair_sum + border,
        prev.quantity_sum + int(qc),
        prev.n_classes,
    )


def chain_subset_sum(S: InnerProductMatrix, quantities: Sequence[int], order: Iterable[int]) -> SubsetSum:
    _check_quantities(S, quantities)
    acc = empty_subset_sum(S)
    for c in order:
        acc = extend_subset_sum(acc, c, S, quantities)
    return acc


def expected_qcid(clients, n_select: int, weighting="uniform", floor=1e-20):
    """Exact E[QCID] over all size-``n_select`` subsets.

    ``weighting="uniform"`` is plain random selection. A positive number beta
    weights each subset by ``max(QCID, floor) ** -beta`` over the whole family
    of subsets. Exact when every client distribution is rational.
    """
    members = list(clients.values()) if isinstance(clients, dict) else list(clients)
    n_subsets = math.comb(len(members), n_select)
    if n_subsets > ENUMERATION_LIMIT:
        raise EnumerationTooLarge(f"C({len(members)}, {n_select}) = {n_subsets} subsets")
    if n_subsets == 0:
        raise EmptySubset("no subsets of the requested size")
    table = index_clients(members)
    values = [qcid_direct(table, s) for s in combinations(sorted(table), n_select)]
    if weighting == "uniform":
        total = sum(values)
        return total / n_subsets if isinstance(total, Fraction) else float(total) / n_subsets
    beta = weighting
    if isinstance(beta, str) or beta <= 0:
        raise ValueError(f"weighting must be 'uniform' or a positive exponent, got {weighting!r}")
    floored = [apply_floor(x, floor) for x in values]
    if all(isinstance(x, Fraction) for x in floored) and float(beta).is_integer():
        weights = [x ** -int(beta) for x in floored]
    else:
        logs = np.array([-float(beta) * math.log(float(x)) for x in floored])
        weights = np.exp(logs - logs.max()).tolist()
        values = [float(x) for x in values]
    return sum(x * w for x, w in zip(values, weights)) / sum(weights)

