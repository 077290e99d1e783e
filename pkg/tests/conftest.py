from fractions import Fraction

import numpy as np
import pytest

from fedcbs import clients_from_counts, inner_product_matrix

# Four clients over six classes; {0, 2, 3} is perfectly balanced, the greedy path is 0 -> 1 -> 2.
FOUR_CLIENTS = [
    [5, 5, 5, 5, 5, 5],
    [6, 6, 6, 6, 6, 0],
    [0, 0, 0, 10, 10, 10],
    [10, 10, 10, 0, 0, 0],
]


@pytest.fixture
def four_clients():
    return clients_from_counts(FOUR_CLIENTS, exact=True)


@pytest.fixture
def four_matrix(four_clients):
    return inner_product_matrix(four_clients), [c.quantity for c in four_clients]


def random_counts(rng: np.random.Generator, n_clients: int, n_classes: int, high: int = 10):
    """Integer class counts with no all-zero client."""
    counts = rng.integers(0, high + 1, size=(n_clients, n_classes))
    for row in counts:
        if row.sum() == 0:
            row[rng.integers(n_classes)] = 1
    return counts


def exact(x):
    return Fraction(x)


ACCEPTANCE_RESULTS = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        status, title, detail = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"[{status}] criterion {number:>2}: {title} -- {detail}")
