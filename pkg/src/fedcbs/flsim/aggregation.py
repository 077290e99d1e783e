"""Server-side aggregation rules."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from ..exceptions import InvalidSteps, NoUpdates, ShapeError
from .model import ModelParams


def _weights(quantities) -> np.ndarray:
    q = np.asarray(quantities, dtype=np.float64)
    if (q <= 0).any():
        raise ValueError("quantities must be positive")
    return q / q.sum()


def _stack(client_params: Sequence[ModelParams]) -> np.ndarray:
    if not client_params:
        raise NoUpdates("no client updates to aggregate")
    shape = client_params[0].shape
    if any(p.shape != shape for p in client_params):
        raise ShapeError("client models disagree on shape")
    return np.stack([p.vector for p in client_params])


def aggregate_fedavg(client_params: Sequence[ModelParams], quantities) -> ModelParams:
    """Sample-size weighted average of the client models."""
    stacked = _stack(client_params)
    if len(quantities) != len(stacked):
        raise ShapeError("one quantity per client update required")
    return client_params[0].replace_vector(_weights(quantities) @ stacked)


def aggregate_fednova(global_params: ModelParams, client_params: Sequence[ModelParams],
                      quantities, local_steps) -> ModelParams:
    """FedNova: average step-normalised updates, then rescale by the effective step count.

    ``d_n = (w - w_n) / tau_n``, ``tau_eff = sum p_n tau_n`` and
    ``w_new = w - tau_eff * sum p_n d_n`` with ``p_n = q_n / sum q``.
    """
    stacked = _stack(client_params)
    if stacked.shape[1] != global_params.vector.shape[0]:
        raise ShapeError("global and client models disagree on shape")
    tau = np.asarray(local_steps, dtype=np.float64)
    if len(tau) != len(stacked) or len(quantities) != len(stacked):
        raise ShapeError("one quantity and one step count per client update required")
    if (tau <= 0).any():
        raise InvalidSteps("every client must have taken at least one local step")
    p = _weights(quantities)
    normalized = (global_params.vector[None, :] - stacked) / tau[:, None]
    tau_eff = float(p @ tau)
    return global_params.replace_vector(global_params.vector - tau_eff * (p @ normalized))
