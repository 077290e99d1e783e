"""Class-balanced client selection for federated learning."""
from .core import (
    ClientRecord,
    LabelDistribution,
    SelectionOutcome,
    StrategyConfig,
    client_from_counts,
    clients_from_counts,
    grouped_distribution,
    make_label_distribution,
)
from .qcid import (
    InnerProductMatrix,
    SubsetSum,
    expected_qcid,
    extend_subset_sum,
    inner_product_matrix,
    qcid_direct,
    qcid_from_matrix,
)
from .selection import (
    ClientSelector,
    SamplerState,
    enumerate_chain,
    select_all,
    select_fedcbs,
    select_greedy_qcid,
    select_pow_d,
    select_random,
    update_counters,
)

__all__ = [
    "ClientRecord", "ClientSelector", "InnerProductMatrix", "LabelDistribution", "SamplerState",
    "SelectionOutcome", "StrategyConfig", "SubsetSum", "client_from_counts", "clients_from_counts",
    "enumerate_chain", "expected_qcid", "extend_subset_sum", "grouped_distribution", "inner_product_matrix",
    "make_label_distribution", "qcid_direct", "qcid_from_matrix", "select_all", "select_fedcbs",
    "select_greedy_qcid", "select_pow_d", "select_random", "update_counters",
]

__version__ = "0.1.0"
