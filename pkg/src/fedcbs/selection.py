"""Client-selection strategies.

The Fed-CBS sampler draws clients one at a time. With ``Q_m`` the floored
QCID of the first ``m`` picks, the unnormalised step weights are

* step 1: ``Q_1 ** -beta_1 + lambda * sqrt(3 ln k / (2 T_c))``
* step 2: ``Q_2 ** -beta_2 / w_1(c_1)``
* step m > 2: ``Q_{m-1} ** beta_{m-1} / Q_m ** beta_m``

and each step is normalised over the clients not yet picked. The product of
the unnormalised weights telescopes to ``Q_M ** -beta_M``; the normalised
chain probability does not, because every step has its own normaliser.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils import check_random_state
from sklearn.utils.validation import check_array, check_is_fitted

from .core import (
    ClientRecord,
    LabelDistribution,
    SelectionOutcome,
    StrategyConfig,
    clients_from_counts,
)
from .exceptions import (
    EnumerationTooLarge,
    InvalidCandidateCount,
    NotEnoughClients,
    ShapeError,
)
from .qcid import (
    ENUMERATION_LIMIT,
    InnerProductMatrix,
    apply_floor,
    as_exact_floor,
    empty_subset_sum,
    extend_subset_sum,
    inner_product_matrix,
    qcid_from_matrix,
)


@dataclass(frozen=True)
class SamplerState:
    """Round index ``k`` (1-based), selection counters ``T_n`` and the RNG."""

    round_index: int = 1
    counts: Mapping[int, int] = field(default_factory=dict)
    rng: np.random.Generator = field(default_factory=np.random.default_rng, compare=False, repr=False)

    def __post_init__(self):
        if self.round_index < 1:
            raise ValueError("round_index starts at 1")
        if any(t < 1 for t in self.counts.values()):
            raise ValueError("selection counters start at 1")

    @classmethod
    def initial(cls, client_ids: Iterable[int], seed=None) -> "SamplerState":
        return cls(1, {int(i): 1 for i in client_ids}, np.random.default_rng(seed))

    def count(self, client_id: int) -> int:
        return self.counts.get(client_id, 1)


def update_counters(state: SamplerState, outcome: SelectionOutcome) -> SamplerState:
    """Increment T_n for every selected client and advance the round."""
    counts = dict(state.counts)
    for n in outcome.selected:
        counts[n] = counts.get(n, 1) + 1
    return replace(state, round_index=state.round_index + 1, counts=counts)


def _available_ids(available, n_select: int) -> list[int]:
    ids = sorted(int(i) for i in available)
    if len(set(ids)) != len(ids):
        raise ValueError("availability set contains duplicates")
    if n_select > len(ids):
        raise NotEnoughClients(f"cannot select {n_select} of {len(ids)} available clients")
    if n_select < 0:
        raise ValueError("n_select must be non-negative")
    return ids


def _as_int_list(quantities) -> list[int]:
    return [int(q) for q in quantities]


def exploration_bonus(lam: float, round_index: int, count: int) -> float:
    """UCB-style bonus ``lam * sqrt(3 ln k / (2 T))``; zero in round 1."""
    if lam == 0 or round_index <= 1:
        return 0.0
    return lam * math.sqrt(3.0 * math.log(round_index) / (2.0 * count))


def _draw(rng: np.random.Generator, ids: Sequence[int], probs: Sequence[float]) -> int:
    cdf = np.cumsum(np.asarray(probs, dtype=np.float64))
    u = rng.random() * cdf[-1]
    return ids[min(int(np.searchsorted(cdf, u, side="right")), len(ids) - 1)]


def _exact_mode(S: InnerProductMatrix, betas, bonus_zero: bool) -> bool:
    return S.exact and bonus_zero and all(float(b).is_integer() for b in betas)


def select_fedcbs(state: SamplerState, available, S: InnerProductMatrix, quantities,
                  n_select: int, config: StrategyConfig) -> SelectionOutcome:
    """Sequential class-balanced sampling of ``n_select`` distinct clients.

    QCIDs are maintained incrementally, so one call reads at most
    ``N * n_select**2`` entries of ``S``. Exact rational arithmetic is used
    when ``S`` is rational, all exponents are integers and the exploration
    bonus vanishes; otherwise weights are handled in log space.
    """
    ids = _available_ids(available, n_select)
    quantities = _as_int_list(quantities)
    if len(quantities) != S.dimension:
        raise ShapeError("quantities do not match the inner-product matrix")
    betas = config.betas(n_select)
    lam = config.exploration_factor
    k = state.round_index
    bonuses = {c: exploration_bonus(lam, k, state.count(c)) for c in ids}
    exact = _exact_mode(S, betas, all(b == 0 for b in bonuses.values()))
    floor = as_exact_floor(config.qcid_floor) if exact else float(config.qcid_floor)

    prefix = empty_subset_sum(S)
    remaining = list(ids)
    selected: list[int] = []
    step_weights, step_logs = [], []
    prev_q = None  # floored QCID of the current prefix
    first_weight = None  # w_1(c_1), exact value or log
    joint = Fraction(1) if exact else 0.0

    for m in range(n_select):
        extended = {c: extend_subset_sum(prefix, c, S, quantities) for c in remaining}
        floored = {c: apply_floor(extended[c].qcid, floor) for c in remaining}
        beta = betas[m]
        if exact:
            beta = int(beta)
            if m == 0:
                weights = {c: floored[c] ** -beta for c in remaining}
            elif m == 1:
                weights = {c: floored[c] ** -beta / first_weight for c in remaining}
            else:
                num = prev_q ** int(betas[m - 1])
                weights = {c: num / floored[c] ** beta for c in remaining}
            total = sum(weights.values())
            probs = [float(weights[c] / total) for c in remaining]
            logs = {c: math.log(weights[c]) for c in remaining}
        else:
            if m == 0:
                logs = {}
                for c in remaining:
                    base = -beta * math.log(floored[c])
                    logs[c] = np.logaddexp(base, math.log(bonuses[c])) if bonuses[c] > 0 else base
            elif m == 1:
                logs = {c: -beta * math.log(floored[c]) - first_weight for c in remaining}
            else:
                num = betas[m - 1] * math.log(prev_q)
                logs = {c: num - beta * math.log(floored[c]) for c in remaining}
            arr = np.array([logs[c] for c in remaining])
            p = np.exp(arr - arr.max())
            probs = (p / p.sum()).tolist()
            weights = {c: _safe_exp(logs[c]) for c in remaining}

        pick = _draw(state.rng, remaining, probs)
        step_weights.append(dict(weights))
        step_logs.append({c: float(v) for c, v in logs.items()})
        if exact:
            joint *= weights[pick]
        else:
            joint += logs[pick]
        if m == 0:
            first_weight = weights[pick] if exact else logs[pick]
        prefix = extended[pick]
        prev_q = floored[pick]
        selected.append(pick)
        remaining.remove(pick)

    return SelectionOutcome(
        selected=tuple(selected),
        step_weights=tuple(step_weights),
        joint_unnormalized_weight=joint if exact else _safe_exp(joint),
        step_log_weights=tuple(step_logs),
    )


def _safe_exp(x: float) -> float:
    try:
        return math.exp(x)
    except OverflowError:
        return math.inf


def _chain_walk(available, S, quantities, n_select, config, state):
    """Yield ``(ordered tuple, probability, unnormalised weight)`` for every chain.

    Recomputes every prefix QCID from scratch with :func:`qcid_from_matrix` and
    multiplies normalised per-step weights; no log-space tricks.
    """
    ids = _available_ids(available, n_select)
    quantities = _as_int_list(quantities)
    size = math.perm(len(ids), n_select)
    if size > ENUMERATION_LIMIT:
        raise EnumerationTooLarge(f"{size} ordered tuples")
    state = state or SamplerState()
    betas = config.betas(n_select)
    lam = config.exploration_factor
    k = state.round_index
    bonus_zero = all(exploration_bonus(lam, k, state.count(c)) == 0 for c in ids)
    exact = _exact_mode(S, betas, bonus_zero)
    floor = as_exact_floor(config.qcid_floor) if exact else float(config.qcid_floor)
    one = Fraction(1) if exact else 1.0

    def power(x, e):
        return x ** int(e) if exact else float(x) ** float(e)

    def q_of(subset):
        value = qcid_from_matrix(S, quantities, subset)
        return apply_floor(value, floor)

    def weight(prefix, c, w1):
        m = len(prefix)
        q_new = q_of(prefix + (c,))
        if m == 0:
            bonus = exploration_bonus(lam, k, state.count(c))
            return power(q_new, -betas[0]) + bonus if bonus else power(q_new, -betas[0])
        if m == 1:
            return power(q_new, -betas[1]) / w1
        return power(q_of(prefix), betas[m - 1]) / power(q_new, betas[m])

    def walk(prefix, prob, joint, w1):
        if len(prefix) == n_select:
            yield prefix, prob, joint
            return
        candidates = [c for c in ids if c not in prefix]
        ws = {c: weight(prefix, c, w1) for c in candidates}
        total = sum(ws.values())
        for c in candidates:
            yield from walk(prefix + (c,), prob * ws[c] / total, joint * ws[c],
                            ws[c] if not prefix else w1)

    yield from walk((), one, one, None)


def enumerate_chain(available, S: InnerProductMatrix, quantities, n_select: int,
                    config: StrategyConfig, state: SamplerState | None = None) -> dict:
    """Exact probability of every ordered tuple the Fed-CBS chain can produce."""
    return {t: p for t, p, _ in _chain_walk(available, S, quantities, n_select, config, state)}


def enumerate_chain_weights(available, S: InnerProductMatrix, quantities, n_select: int,
                            config: StrategyConfig, state: SamplerState | None = None) -> dict:
    """Unnormalised joint chain weight of every ordered tuple."""
    return {t: w for t, _, w in _chain_walk(available, S, quantities, n_select, config, state)}


def chain_expected_qcid(available, S: InnerProductMatrix, quantities, n_select: int,
                        config: StrategyConfig, state: SamplerState | None = None):
    """E[QCID] under the sampler's true (per-step normalised) joint distribution."""
    quantities = _as_int_list(quantities)
    return sum(p * qcid_from_matrix(S, quantities, t)
               for t, p, _ in _chain_walk(available, S, quantities, n_select, config, state))


def select_random(state: SamplerState, available, n_select: int) -> SelectionOutcome:
    ids = _available_ids(available, n_select)
    picks = state.rng.choice(np.array(ids, dtype=np.int64), size=n_select, replace=False)
    return SelectionOutcome(tuple(int(i) for i in picks))


def select_pow_d(state: SamplerState, available, n_select: int, n_candidates: int,
                 quantities, loss_evaluator: Callable[[int], float]) -> SelectionOutcome:
    """Power-of-choice: size-weighted candidate draw, then the highest-loss clients.

    Candidates are drawn without replacement with probability proportional to
    ``q_n``; the ``n_select`` candidates with the largest local loss are kept,
    ties going to the lower id.
    """
    ids = _available_ids(available, n_select)
    if n_candidates < n_select or n_candidates > len(ids):
        raise InvalidCandidateCount(
            f"need n_select <= d <= available, got d={n_candidates}, "
            f"n_select={n_select}, available={len(ids)}")
    q = np.array([quantities[i] for i in ids], dtype=np.float64)
    candidates = state.rng.choice(np.array(ids, dtype=np.int64), size=n_candidates,
                                  replace=False, p=q / q.sum())
    losses = {int(c): float(loss_evaluator(int(c))) for c in candidates}
    ranked = sorted(losses, key=lambda c: (-losses[c], c))
    return SelectionOutcome(tuple(ranked[:n_select]))


def perturb_distributions(clients: Sequence[ClientRecord], concentration: float,
                          rng: np.random.Generator, epsilon: float = 1e-3) -> list[ClientRecord]:
    """Replace every alpha_n with a draw from Dirichlet(concentration * alpha_n + epsilon).

    Models a label-distribution estimator that is right on average but noisy.
    """
    noisy = []
    for c in clients:
        draw = rng.dirichlet(concentration * c.distribution.as_array() + epsilon)
        draw = draw / draw.sum()
        noisy.append(c.with_distribution(LabelDistribution(tuple(draw.tolist()))))
    return noisy


def select_greedy_qcid(available, S: InnerProductMatrix, quantities, n_select: int, *,
                       noise: float | None = None, clients: Sequence[ClientRecord] | None = None,
                       rng: np.random.Generator | None = None) -> SelectionOutcome:
    """Deterministic greedy growth of the most class-balanced subset.

    With ``noise`` set, the selection runs on a matrix built from perturbed
    distributions (``clients`` and ``rng`` are then required).
    """
    ids = _available_ids(available, n_select)
    quantities = _as_int_list(quantities)
    if noise is not None:
        if clients is None or rng is None:
            raise ValueError("noisy greedy selection needs clients and rng")
        S = inner_product_matrix(perturb_distributions(clients, noise, rng), exact=False)
    prefix = empty_subset_sum(S)
    remaining = list(ids)
    steps = []
    for _ in range(n_select):
        scored = {c: extend_subset_sum(prefix, c, S, quantities) for c in remaining}
        values = {c: scored[c].qcid for c in remaining}
        best = min(remaining, key=lambda c: (values[c], c))
        steps.append(values)
        prefix = scored[best]
        remaining.remove(best)
    return SelectionOutcome(prefix.subset, step_weights=tuple(steps))


def select_all(available) -> SelectionOutcome:
    return SelectionOutcome(tuple(sorted(int(i) for i in available)))


def select_clients(config: StrategyConfig, state: SamplerState, available, S: InnerProductMatrix,
                   quantities, n_select: int, *, loss_evaluator=None,
                   clients: Sequence[ClientRecord] | None = None) -> SelectionOutcome:
    """Dispatch on ``config.strategy``."""
    strategy = config.strategy
    if strategy == "fedcbs":
        return select_fedcbs(state, available, S, quantities, n_select, config)
    if strategy == "random":
        return select_random(state, available, n_select)
    if strategy == "pow_d":
        if loss_evaluator is None:
            raise ValueError("pow_d needs a loss evaluator")
        d = min(config.candidate_count(n_select), len(list(available)))
        return select_pow_d(state, available, n_select, d, quantities, loss_evaluator)
    if strategy == "greedy_qcid":
        return select_greedy_qcid(available, S, quantities, n_select, noise=config.greedy_noise,
                                  clients=clients, rng=state.rng)
    return select_all(available)


class ClientSelector(BaseEstimator):
    """Estimator-style front end to the selection strategies.

    ``fit`` takes an ``(N, B)`` matrix of per-client class counts (or, with
    ``fit_inner_products``, a precomputed S delivered by the secure protocol)
    and ``select`` draws one round, advancing the selection counters.

    Examples
    --------
    >>> sel = ClientSelector(n_select=3, exploration_factor=0.0, random_state=0)
    >>> sel.fit([[5, 5, 5, 5, 5, 5], [6, 6, 6, 6, 6, 0], [0, 0, 0, 10, 10, 10], [10, 10, 10, 0, 0, 0]])
    ClientSelector(exploration_factor=0.0, n_select=3, random_state=0)
    >>> len(sel.select())
    3
    """

    def __init__(self, strategy="fedcbs", n_select=10, exploration_factor=10.0, beta_schedule=None,
                 qcid_floor=1e-20, pow_d_candidates=None, greedy_noise=None, random_state=None):
        self.strategy = strategy
        self.n_select = n_select
        self.exploration_factor = exploration_factor
        self.beta_schedule = beta_schedule
        self.qcid_floor = qcid_floor
        self.pow_d_candidates = pow_d_candidates
        self.greedy_noise = greedy_noise
        self.random_state = random_state

    def _config(self) -> StrategyConfig:
        return StrategyConfig(
            strategy=self.strategy,
            exploration_factor=self.exploration_factor,
            beta_schedule=self.beta_schedule,
            qcid_floor=self.qcid_floor,
            pow_d_candidates=self.pow_d_candidates,
            greedy_noise=self.greedy_noise,
        )

    def fit(self, X, y=None):
        counts = check_array(X, dtype=np.int64, ensure_min_features=2)
        if (counts < 0).any():
            raise ValueError("class counts must be non-negative")
        self.config_ = self._config()
        self.clients_ = clients_from_counts(counts)
        self.quantities_ = counts.sum(axis=1)
        self.inner_products_ = inner_product_matrix(self.clients_)
        self._start()
        return self

    def fit_inner_products(self, S: InnerProductMatrix, quantities):
        """Fit from a precomputed inner-product matrix; distributions stay unknown."""
        self.config_ = self._config()
        self.clients_ = None
        self.quantities_ = np.asarray(quantities, dtype=np.int64)
        if self.quantities_.shape != (S.dimension,):
            raise ShapeError("quantities do not match the inner-product matrix")
        self.inner_products_ = S
        self._start()
        return self

    def _start(self):
        seed = check_random_state(self.random_state).randint(0, 2**31 - 1)
        self.state_ = SamplerState.initial(range(self.inner_products_.dimension), seed)
        self.n_clients_ = self.inner_products_.dimension
        self.history_ = []

    def select(self, available=None, loss_evaluator=None) -> np.ndarray:
        """Pick one round's clients from ``available`` (default: every client)."""
        check_is_fitted(self, "state_")
        if available is None:
            available = range(self.n_clients_)
        outcome = select_clients(self.config_, self.state_, available, self.inner_products_,
                                 self.quantities_, self.n_select, loss_evaluator=loss_evaluator,
                                 clients=self.clients_)
        self.state_ = update_counters(self.state_, outcome)
        self.history_.append(outcome)
        return np.array(outcome.selected, dtype=np.int64)
