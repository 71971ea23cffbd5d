"""Importance-sampling estimators from trajectory IS through SOPE_n to SIS.

All estimators take a :class:`~sope.mdp.Dataset` whose ``rhos`` already hold
the single-step ratios ``pi_e(a_t|s_t) / pi_b(a_t|s_t)``. Time indices in
docstrings are 1-based to match the usual notation; arrays are 0-based.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .mdp import Dataset, Trajectory
from .occupancy import QTable, discount_weights
from .ratios import RatioTable

FAMILIES = ("IS", "PDIS", "SIS", "WSIS", "SOPE", "CWPDIS", "WSOPE", "DRSOPE")
SPECTRUM_FAMILIES = ("SOPE", "WSOPE", "DRSOPE")
WEIGHTED_FAMILIES = ("CWPDIS", "WSIS", "WSOPE")


@dataclass(frozen=True)
class Estimate:
    """An estimator's output.

    ``per_trajectory`` is ``None`` for the self-normalised families, which do
    not decompose over trajectories.
    """

    value: float
    per_trajectory: Optional[np.ndarray] = None
    diagnostics: dict = field(default_factory=dict)


def weight_wtn(traj: Trajectory, t: int, n: int, ratio: Optional[RatioTable]) -> float:
    """Importance weight ``w(t, n)`` for reward ``R_t`` of one trajectory.

    ``t > n``: ratio at step ``t-n`` times ``rho_{t-n+1:t}``;
    ``1 <= t <= n``: ``rho_{1:t}``; ``t = 0``: 1.
    """
    L = len(traj)
    if not 0 <= t <= L or n < 0:
        raise ValueError(f"need 0 <= t <= {L} and n >= 0, got t={t}, n={n}")
    if t == 0:
        return 1.0
    if t <= n:
        return float(np.prod(traj.rhos[:t]))
    if ratio is None:
        raise ValueError("a ratio table is required when t > n")
    anchor = float(ratio.lookup(traj.states[t - n - 1], traj.actions[t - n - 1]))
    return anchor * float(np.prod(traj.rhos[t - n : t]))


def _window_products(rhos: np.ndarray, n: int) -> np.ndarray:
    """``rho_{max(1,t-n+1):t}`` for every trajectory and step.

    Built from ``n`` shifted multiplies, oldest factor first, so each entry is
    multiplied in the same order as a cumulative product (no division).
    """
    m, L = rhos.shape
    out = np.ones((m, L))
    for k in range(min(n, L) - 1, -1, -1):
        out[:, k:] *= rhos[:, : L - k]
    return out


def sope_weights(dataset: Dataset, n: int, ratio: Optional[RatioTable]) -> np.ndarray:
    """Matrix of ``w(t, n)`` for ``t = 1..L``, shape ``(m, L)``."""
    L = dataset.horizon
    if n < 0:
        raise ValueError(f"n must be nonnegative, got {n}")
    n = min(n, L)
    W = _window_products(dataset.rhos, n)
    if n < L:
        if ratio is None:
            raise ValueError(f"n={n} < L={L} needs a ratio table")
        anchor = ratio.lookup(dataset.states[:, : L - n], dataset.actions[:, : L - n])
        W[:, n:] = anchor * W[:, n:]
    return W


def _per_trajectory(weights: np.ndarray, targets: np.ndarray, gamma: float) -> np.ndarray:
    g = discount_weights(gamma, weights.shape[1])
    return (weights * targets * g).sum(axis=1)


def _unweighted(weights: np.ndarray, targets: np.ndarray, dataset: Dataset, offset=None) -> Estimate:
    per = _per_trajectory(weights, targets, dataset.gamma)
    if offset is not None:
        per = offset + per
    return Estimate(float(per.mean()), per, {"max_weight": float(np.max(np.abs(weights)))})


def _self_normalized(weights: np.ndarray, rewards: np.ndarray, gamma: float) -> Estimate:
    den = weights.sum(axis=0)
    zero = np.flatnonzero(den == 0)
    if zero.size:
        raise ZeroDivisionError(f"importance weights sum to zero at t={zero[0] + 1}")
    num = (weights * rewards).sum(axis=0)
    g = discount_weights(gamma, weights.shape[1])
    ess = den**2 / (weights**2).sum(axis=0)
    return Estimate(
        float(np.sum(g * (num / den))),
        None,
        {"max_weight": float(np.max(np.abs(weights))), "ess": ess},
    )


def _check_n(n: int, L: int) -> None:
    if not 0 <= n <= L:
        raise ValueError(f"n must lie in [0, {L}], got {n}")


def _check_ratio_mode(ratio: Optional[RatioTable], n: int, L: int, ratio_mode: str) -> None:
    if ratio_mode not in ("average", "truncated"):
        raise ValueError(f"ratio_mode must be 'average' or 'truncated', got {ratio_mode!r}")
    if ratio_mode == "truncated" and n < L and ratio is not None and ratio.horizon != L - n:
        raise ValueError(
            f"truncated mode needs a ratio over the first L-n={L - n} steps, got horizon={ratio.horizon}"
        )


def estimate_is(dataset: Dataset) -> Estimate:
    """Trajectory-wise importance sampling."""
    g = discount_weights(dataset.gamma, dataset.horizon)
    weight = np.prod(dataset.rhos, axis=1)
    per = weight * (dataset.rewards @ g)
    return Estimate(float(per.mean()), per, {"max_weight": float(np.max(np.abs(weight)))})


def estimate_pdis(dataset: Dataset) -> Estimate:
    """Per-decision importance sampling: ``R_t`` weighted by ``rho_{1:t}``."""
    return _unweighted(np.cumprod(dataset.rhos, axis=1), dataset.rewards, dataset)


def _sis_weights(dataset: Dataset, ratio: Union[RatioTable, Sequence[RatioTable]]) -> np.ndarray:
    if isinstance(ratio, RatioTable):
        return ratio.lookup(dataset.states, dataset.actions)
    tables = list(ratio)
    if len(tables) != dataset.horizon:
        raise ValueError("per-step ratios must cover every step of the horizon")
    return np.stack(
        [tab.lookup(dataset.states[:, t], dataset.actions[:, t]) for t, tab in enumerate(tables)], axis=1
    )


def estimate_sis(dataset: Dataset, ratio: Union[RatioTable, Sequence[RatioTable]]) -> Estimate:
    """Distribution-ratio importance sampling: ``R_t`` weighted by ``w(S_t, A_t)``.

    ``ratio`` may also be a sequence of ``L`` tables, one per step, which is
    how the time-indexed oracle is applied.
    """
    return _unweighted(_sis_weights(dataset, ratio), dataset.rewards, dataset)


def estimate_weighted_sis(dataset: Dataset, ratio: RatioTable) -> Estimate:
    """SIS with the weights self-normalised separately at every step."""
    return _self_normalized(_sis_weights(dataset, ratio), dataset.rewards, dataset.gamma)


def estimate_sope(
    dataset: Dataset, n: int, ratio: Optional[RatioTable], ratio_mode: str = "average"
) -> Estimate:
    """Spectrum estimator SOPE_n.

    Rewards up to step ``n`` use the full ratio product ``rho_{1:t}``; later
    rewards use the distribution ratio at step ``t-n`` times the last ``n``
    action ratios. ``n = 0`` is SIS and ``n = L`` is PDIS. With
    ``ratio_mode="truncated"`` the table must be the ratio of occupancies
    averaged over the first ``L-n`` steps, which makes the estimator exactly
    unbiased.
    """
    L = dataset.horizon
    _check_n(n, L)
    _check_ratio_mode(ratio, n, L, ratio_mode)
    return _unweighted(sope_weights(dataset, n, ratio), dataset.rewards, dataset)


def estimate_cwpdis(dataset: Dataset) -> Estimate:
    """Consistent weighted PDIS (per-step self-normalised ``rho_{1:t}``)."""
    return _self_normalized(np.cumprod(dataset.rhos, axis=1), dataset.rewards, dataset.gamma)


def estimate_wsope(
    dataset: Dataset, n: int, ratio: Optional[RatioTable], ratio_mode: str = "average"
) -> Estimate:
    """Self-normalised SOPE_n; runs from weighted SIS (n=0) to CWPDIS (n=L)."""
    L = dataset.horizon
    _check_n(n, L)
    _check_ratio_mode(ratio, n, L, ratio_mode)
    return _self_normalized(sope_weights(dataset, n, ratio), dataset.rewards, dataset.gamma)


def _policy_actions(dataset: Dataset, states: np.ndarray, seed: Optional[int]) -> np.ndarray:
    rng = np.random.default_rng(seed)
    cdf = np.cumsum(dataset.pi_e.probs, axis=1)
    cdf = cdf / cdf[:, -1:]
    u = rng.random(states.shape)
    return np.minimum((u[..., None] >= cdf[states]).sum(axis=-1), cdf.shape[1] - 1)


def estimate_dr_sope(
    dataset: Dataset,
    n: int,
    ratio: Optional[RatioTable],
    q: QTable,
    dr_next_action: str = "expectation",
    ratio_mode: str = "average",
    seed: Optional[int] = None,
) -> Estimate:
    """Doubly-robust SOPE_n.

    Per trajectory: ``v(S_1) + sum_t w(t,n) gamma^{t-1} (R_t + gamma v(S_{t+1}) - q(S_t, A_t))``
    with ``v(S_{L+1}) = 0``. In ``"sampled"`` mode ``v(s)`` is replaced by
    ``q(s, a')`` with ``a' ~ pi_e(.|s)`` drawn from ``seed``.
    """
    if q is None:
        raise ValueError("DR-SOPE needs a q table")
    L = dataset.horizon
    _check_n(n, L)
    _check_ratio_mode(ratio, n, L, ratio_mode)
    if q.q.shape != (dataset.n_states, dataset.n_actions):
        raise ValueError("q table does not match the dataset's state/action space")
    S, A = dataset.states, dataset.actions
    if dr_next_action == "expectation":
        v_at = q.v[S]
    elif dr_next_action == "sampled":
        v_at = q.q[S, _policy_actions(dataset, S, seed)]
    else:
        raise ValueError(f"dr_next_action must be 'expectation' or 'sampled', got {dr_next_action!r}")
    v_next = np.zeros_like(dataset.rewards)
    v_next[:, :-1] = v_at[:, 1:]
    targets = dataset.rewards + dataset.gamma * v_next - q.q[S, A]
    return _unweighted(sope_weights(dataset, n, ratio), targets, dataset, offset=v_at[:, 0])


@dataclass(frozen=True)
class EstimatorSpec:
    """One point of the estimator family, ready to be applied to datasets."""

    family: str
    n: int = 0
    ratio: Optional[RatioTable] = None
    ratio_mode: str = "average"
    q: Optional[QTable] = None
    dr_next_action: str = "expectation"
    seed: Optional[int] = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown estimator family {self.family!r}; choose from {FAMILIES}")
        if self.family == "DRSOPE" and self.q is None:
            raise ValueError("DRSOPE needs a q table")
        if self.family in ("SIS", "WSIS") and self.ratio is None:
            raise ValueError(f"{self.family} needs a ratio table")

    def __call__(self, dataset: Dataset) -> Estimate:
        return evaluate(self, dataset)


def evaluate(spec: EstimatorSpec, dataset: Dataset) -> Estimate:
    f = spec.family
    if f == "IS":
        return estimate_is(dataset)
    if f == "PDIS":
        return estimate_pdis(dataset)
    if f == "SIS":
        return estimate_sis(dataset, spec.ratio)
    if f == "WSIS":
        return estimate_weighted_sis(dataset, spec.ratio)
    if f == "CWPDIS":
        return estimate_cwpdis(dataset)
    if f == "SOPE":
        return estimate_sope(dataset, spec.n, spec.ratio, spec.ratio_mode)
    if f == "WSOPE":
        return estimate_wsope(dataset, spec.n, spec.ratio, spec.ratio_mode)
    return estimate_dr_sope(
        dataset, spec.n, spec.ratio, spec.q, spec.dr_next_action, spec.ratio_mode, spec.seed
    )
