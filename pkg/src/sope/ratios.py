"""State-action distribution ratios: exact oracles and data-driven estimates."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .mdp import Dataset, StaticPolicy, SupportError, TabularMdp
from .occupancy import discount_weights, occupancy_stationary, occupancy_t, occupancy_trunc

MINMAX_RIDGE = 1e-3
MODEL_SMOOTHING = 0.01

KINDS = (
    "oracle-average",
    "oracle-truncated",
    "oracle-time-indexed",
    "oracle-stationary",
    "model-based",
    "minmax-tabular",
)


class MaskedRatioError(SupportError):
    """An estimator touched a ratio entry with no behaviour support."""


@dataclass(frozen=True)
class RatioTable:
    """Ratio ``w(s, a)`` of evaluation to behaviour occupancy.

    ``horizon`` is the number of leading steps the underlying occupancies were
    averaged over (``T`` in ``d_{1:T}``); ``time`` is set for time-indexed
    oracles. Entries outside ``support_mask`` are zero and may not be used.
    """

    w: np.ndarray
    kind: str
    support_mask: np.ndarray
    horizon: Optional[int] = None
    time: Optional[int] = None
    note: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown ratio kind {self.kind!r}")
        w = np.array(self.w, dtype=float)
        mask = np.array(self.support_mask, dtype=bool)
        if w.shape != mask.shape:
            raise ValueError("w and support_mask must share a shape")
        if not np.all(np.isfinite(w[mask])):
            raise ValueError("ratio must be finite on its support")
        if np.any(w[mask] < 0):
            raise ValueError("ratios are nonnegative")
        w[~mask] = 0.0
        w.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "support_mask", mask)

    def lookup(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        """Gather ``w`` at the given pairs, refusing masked entries."""
        ok = self.support_mask[states, actions]
        if not np.all(ok):
            bad = np.argwhere(~np.atleast_1d(ok))[0]
            s = np.atleast_1d(states)[tuple(bad)] if np.ndim(states) else states
            a = np.atleast_1d(actions)[tuple(bad)] if np.ndim(actions) else actions
            raise MaskedRatioError(
                f"ratio ({self.kind}) has no behaviour support at (s={int(s)}, a={int(a)})"
            )
        return self.w[states, actions]

    def scaled(self, c: float) -> "RatioTable":
        return RatioTable(self.w * c, self.kind, self.support_mask, self.horizon, self.time, self.note)


def ratio_from_occupancies(d_e: np.ndarray, d_b: np.ndarray, kind: str, **kw) -> RatioTable:
    support = d_b > 0
    leaked = (d_e > 0) & ~support
    if leaked.any():
        s, a = np.argwhere(leaked)[0]
        raise SupportError(f"d^pi_e(s={s}, a={a}) > 0 where the behaviour occupancy is zero")
    w = np.divide(d_e, d_b, out=np.zeros_like(d_e), where=support)
    return RatioTable(w, kind, support, **kw)


def oracle_ratio(
    mdp: TabularMdp,
    pi_e: StaticPolicy,
    pi_b: StaticPolicy,
    kind: str = "average",
    T: Optional[int] = None,
    t: Optional[int] = None,
) -> RatioTable:
    """Exact ratio from the DP occupancies.

    ``kind`` is ``"average"`` (``d^{pi_e}/d^{pi_b}`` over the full horizon),
    ``"truncated"`` (over the first ``T`` steps), ``"time-indexed"``
    (``d_t^{pi_e}/d_t^{pi_b}``, 1-based ``t``) or ``"stationary"`` (the
    infinite-horizon discounted occupancies, which ignore the horizon and so
    leave SIS with a finite-horizon bias).
    """
    L = mdp.horizon
    if kind == "average":
        d_e, d_b = occupancy_trunc(mdp, pi_e, L), occupancy_trunc(mdp, pi_b, L)
        return ratio_from_occupancies(d_e, d_b, "oracle-average", horizon=L)
    if kind == "truncated":
        if T is None or not 1 <= T <= L:
            raise ValueError(f"truncated ratio needs 1 <= T <= {L}, got {T}")
        d_e, d_b = occupancy_trunc(mdp, pi_e, T), occupancy_trunc(mdp, pi_b, T)
        return ratio_from_occupancies(d_e, d_b, "oracle-truncated", horizon=T)
    if kind == "time-indexed":
        if t is None or t < 1:
            raise ValueError("time-indexed ratio needs a 1-based t")
        d_e, d_b = occupancy_t(mdp, pi_e, t)[t - 1], occupancy_t(mdp, pi_b, t)[t - 1]
        return ratio_from_occupancies(d_e, d_b, "oracle-time-indexed", time=t)
    if kind == "stationary":
        d_e, d_b = occupancy_stationary(mdp, pi_e), occupancy_stationary(mdp, pi_b)
        return ratio_from_occupancies(d_e, d_b, "oracle-stationary")
    raise ValueError(f"unknown oracle kind {kind!r}")


def time_indexed_ratios(mdp: TabularMdp, pi_e: StaticPolicy, pi_b: StaticPolicy) -> list:
    """Oracle ``d_t^{pi_e}/d_t^{pi_b}`` for every ``t = 1..L``."""
    d_e, d_b = occupancy_t(mdp, pi_e), occupancy_t(mdp, pi_b)
    return [
        ratio_from_occupancies(d_e[t], d_b[t], "oracle-time-indexed", time=t + 1)
        for t in range(mdp.horizon)
    ]


@dataclass(frozen=True)
class ModelEstimate:
    """Maximum-likelihood tabular model fitted to a dataset.

    ``fallback`` flags (s, a) pairs without an observed successor; their rows
    are self-loops with reward 0 unless a reward was observed for them.
    """

    mdp: TabularMdp
    counts: np.ndarray
    fallback: np.ndarray = field(repr=False)


def estimate_model(dataset: Dataset, alpha: float = MODEL_SMOOTHING, horizon: Optional[int] = None) -> ModelEstimate:
    """Fit transitions, rewards and the start distribution from the first ``horizon`` steps.

    Visited pairs get ``alpha`` pseudo-counts on every successor. States whose
    observed transitions all self-loop with zero reward are kept as exact
    absorbing states.
    """
    T = dataset.horizon if horizon is None else int(horizon)
    if not 1 <= T <= dataset.horizon:
        raise ValueError(f"horizon must lie in [1, {dataset.horizon}]")
    S, A = dataset.n_states, dataset.n_actions
    st, ac, rw = dataset.states[:, :T], dataset.actions[:, :T], dataset.rewards[:, :T]

    counts = np.zeros((S, A, S))
    np.add.at(counts, (st[:, :-1], ac[:, :-1], st[:, 1:]), 1.0)
    reward_sum = np.zeros((S, A))
    reward_n = np.zeros((S, A))
    np.add.at(reward_sum, (st, ac), rw)
    np.add.at(reward_n, (st, ac), 1.0)
    reward = np.divide(reward_sum, reward_n, out=np.zeros((S, A)), where=reward_n > 0)

    n_sa = counts.sum(axis=2)
    visited = n_sa > 0
    self_loop = np.zeros((S, A), dtype=bool)
    for s in range(S):
        self_loop[s] = counts[s, :, s] == n_sa[s]
    observed_closed = np.array(
        [visited[s].any() and np.all(self_loop[s][visited[s]]) and np.all(reward[s] == 0) for s in range(S)]
    )

    P = np.zeros((S, A, S))
    for s in range(S):
        for a in range(A):
            if not visited[s, a] or observed_closed[s]:
                P[s, a, s] = 1.0
            else:
                P[s, a] = (counts[s, a] + alpha) / (n_sa[s, a] + alpha * S)
    absorbing = {s for s in range(S) if np.all(P[s, :, s] == 1.0) and np.all(reward[s] == 0)}

    d1 = np.bincount(st[:, 0], minlength=S) / dataset.m
    model = TabularMdp(P, reward, d1, dataset.gamma, T, frozenset(absorbing), name="estimated")
    return ModelEstimate(mdp=model, counts=counts, fallback=~visited)


def _model_based_ratio(dataset: Dataset, T: int, alpha: float) -> RatioTable:
    model = estimate_model(dataset, alpha=alpha, horizon=T).mdp
    d_e = occupancy_trunc(model, dataset.pi_e, T)
    d_b = occupancy_trunc(model, dataset.pi_b, T)
    return ratio_from_occupancies(
        d_e, d_b, "model-based", horizon=T, note=f"certainty-equivalent occupancies, smoothing={alpha}"
    )


def empirical_occupancy(dataset: Dataset, T: Optional[int] = None) -> np.ndarray:
    """Discounted visit frequencies over the first ``T`` steps, normalised to sum to 1."""
    T = dataset.horizon if T is None else T
    S, A = dataset.n_states, dataset.n_actions
    g = np.broadcast_to(discount_weights(dataset.gamma, T), (dataset.m, T))
    d = np.zeros((S, A))
    np.add.at(d, (dataset.states[:, :T], dataset.actions[:, :T]), g)
    return d / d.sum()


def _minmax_tabular_ratio(dataset: Dataset, T: int, ridge: float) -> RatioTable:
    # Finite-horizon flow balance in ratio form:
    #   D w - gamma M w = mu0,   D = diag of discounted visit frequencies,
    #   M[(s',a'),(s,a)] = discounted frequency of (s,a) -> s' times pi_e(a'|s').
    # w = 1 solves it in expectation when pi_e = pi_b.
    S, A = dataset.n_states, dataset.n_actions
    SA = S * A
    g = discount_weights(dataset.gamma, T)
    Z = dataset.m * g.sum()
    st, ac = dataset.states[:, :T], dataset.actions[:, :T]
    k = st * A + ac

    D = np.bincount(k.ravel(), weights=np.broadcast_to(g, k.shape).ravel(), minlength=SA) / Z
    M = np.zeros((SA, SA))
    src, nxt = k[:, :-1], st[:, 1:]
    gw = np.broadcast_to(g[:-1], src.shape)
    pi_e = dataset.pi_e.probs
    for a2 in range(A):
        np.add.at(M, ((nxt * A + a2).ravel(), src.ravel()), (gw * pi_e[nxt, a2]).ravel())
    M /= Z
    start = np.bincount(st[:, 0], minlength=S) / dataset.m
    mu0 = (start[:, None] * pi_e).ravel() / g.sum()

    support = D > 0
    idx = np.flatnonzero(support)
    # Unvisited pairs have no equation and no data; solve on the visited block only.
    # The ridge penalises ||w - 1||^2, shrinking toward "no distribution shift"
    # rather than toward zero, and is scaled by the mean curvature of the system
    # so the coefficient does not depend on batch size or table size.
    K = (np.diag(D) - dataset.gamma * M)[np.ix_(idx, idx)]
    A_ = K.T @ K
    lam = ridge * np.trace(A_) / idx.size
    try:
        sol = np.linalg.solve(A_ + lam * np.eye(idx.size), K.T @ mu0[idx] + lam)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"ratio system is singular even with ridge={ridge}") from exc
    w = np.zeros(SA)
    w[idx] = np.clip(sol, 0.0, None)
    mass = float(D @ w)
    if not mass > 0:
        raise ValueError("all estimated ratios were clipped to zero; cannot normalise")
    w /= mass
    return RatioTable(
        w.reshape(S, A),
        "minmax-tabular",
        support.reshape(S, A),
        horizon=T,
        note=f"tabular flow-balance least squares, ridge={ridge}, clip-then-normalise",
    )


def estimate_ratio(
    dataset: Dataset,
    method: str = "model-based",
    horizon: Optional[int] = None,
    *,
    alpha: float = MODEL_SMOOTHING,
    ridge: float = MINMAX_RIDGE,
) -> RatioTable:
    """Estimate ``d^{pi_e}/d^{pi_b}`` from data using only the first ``horizon`` steps.

    ``method="model-based"`` plugs a fitted model into the occupancy DP;
    ``method="minmax-tabular"`` solves the ridge-regularised tabular balance
    equations directly on empirical transition frequencies.
    """
    T = dataset.horizon if horizon is None else int(horizon)
    if not 1 <= T <= dataset.horizon:
        raise ValueError(f"horizon must lie in [1, {dataset.horizon}]")
    if method == "model-based":
        return _model_based_ratio(dataset, T, alpha)
    if method == "minmax-tabular":
        return _minmax_tabular_ratio(dataset, T, ridge)
    raise ValueError(f"unknown ratio method {method!r}")
