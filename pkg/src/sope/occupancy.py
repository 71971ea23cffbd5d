"""Exact dynamic-programming oracles: occupancies, the policy value and q-values."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from .mdp import StaticPolicy, TabularMdp


def discount_weights(gamma: float, horizon: int) -> np.ndarray:
    """``[1, gamma, ..., gamma^(horizon-1)]``."""
    return gamma ** np.arange(horizon, dtype=float)


def state_action_transition(mdp: TabularMdp, policy: StaticPolicy) -> np.ndarray:
    """``P[(s,a), (s',a')] = T(s'|s,a) pi(a'|s')`` flattened to a square matrix."""
    S, A = mdp.n_states, mdp.n_actions
    P = mdp.transition[:, :, :, None] * policy.probs[None, None, :, :]
    return P.reshape(S * A, S * A)


def occupancy_t(mdp: TabularMdp, policy: StaticPolicy, horizon: Optional[int] = None) -> np.ndarray:
    """Time-indexed state-action distributions, shape ``(L, S, A)``.

    Row ``t-1`` holds ``d_t(s, a) = Pr(S_t = s, A_t = a)``.
    """
    L = mdp.horizon if horizon is None else int(horizon)
    d = np.empty((L, mdp.n_states, mdp.n_actions))
    d[0] = mdp.initial_dist[:, None] * policy.probs
    for t in range(1, L):
        next_states = np.einsum("sa,sap->p", d[t - 1], mdp.transition)
        d[t] = next_states[:, None] * policy.probs
    return d


def _average(d_t: np.ndarray, gamma: float, T: int) -> np.ndarray:
    g = discount_weights(gamma, T)
    return np.tensordot(g, d_t[:T], axes=1) / g.sum()


def occupancy_avg(mdp: TabularMdp, policy: StaticPolicy) -> np.ndarray:
    """gamma-discounted time average of ``d_t`` over ``t = 1..L``."""
    return _average(occupancy_t(mdp, policy), mdp.gamma, mdp.horizon)


def occupancy_trunc(mdp: TabularMdp, policy: StaticPolicy, T: int) -> np.ndarray:
    """Discounted average over the first ``T`` steps only (``d_{1:T}``)."""
    if not 1 <= T <= mdp.horizon:
        raise ValueError(f"T must lie in [1, {mdp.horizon}], got {T}")
    return _average(occupancy_t(mdp, policy, T), mdp.gamma, T)


def occupancy_stationary(mdp: TabularMdp, policy: StaticPolicy) -> np.ndarray:
    """Infinite-horizon discounted occupancy by a direct linear solve.

    Solves ``d = (1-gamma) d_1 pi + gamma P^T d``.
    """
    if mdp.gamma >= 1.0:
        raise ValueError("the infinite-horizon occupancy needs gamma < 1")
    S, A = mdp.n_states, mdp.n_actions
    P = state_action_transition(mdp, policy)
    mu0 = (mdp.initial_dist[:, None] * policy.probs).ravel()
    lhs = np.eye(S * A) - mdp.gamma * P.T
    d = np.linalg.solve(lhs, (1.0 - mdp.gamma) * mu0)
    return d.reshape(S, A)


def bellman_residual_avg(mdp: TabularMdp, policy: StaticPolicy, d_avg: np.ndarray) -> float:
    """Max-norm residual of ``d_avg`` in the discounted occupancy Bellman equation."""
    if mdp.gamma >= 1.0:
        raise ValueError("the occupancy Bellman equation is stated for gamma < 1")
    P = state_action_transition(mdp, policy)
    mu0 = (mdp.initial_dist[:, None] * policy.probs).ravel()
    d = np.asarray(d_avg, dtype=float).ravel()
    rhs = (1.0 - mdp.gamma) * mu0 + mdp.gamma * (P.T @ d)
    return float(np.abs(d - rhs).max())


def exact_j(mdp: TabularMdp, policy: StaticPolicy) -> float:
    """Expected discounted return over the horizon."""
    d = occupancy_t(mdp, policy)
    per_step = np.einsum("tsa,sa->t", d, mdp.reward)
    return float(discount_weights(mdp.gamma, mdp.horizon) @ per_step)


@dataclass(frozen=True)
class OccupancyTables:
    d_t: np.ndarray
    d_avg: np.ndarray
    d_trunc: Dict[int, np.ndarray]
    j_value: float

    def truncated(self, T: int) -> np.ndarray:
        return self.d_trunc[T]


def occupancy_tables(mdp: TabularMdp, policy: StaticPolicy) -> OccupancyTables:
    d_t = occupancy_t(mdp, policy)
    g = discount_weights(mdp.gamma, mdp.horizon)
    running = np.cumsum(g[:, None, None] * d_t, axis=0) / np.cumsum(g)[:, None, None]
    d_trunc = {T: running[T - 1] for T in range(1, mdp.horizon + 1)}
    j = float(g @ np.einsum("tsa,sa->t", d_t, mdp.reward))
    return OccupancyTables(d_t=d_t, d_avg=d_trunc[mdp.horizon], d_trunc=d_trunc, j_value=j)


@dataclass(frozen=True)
class QTable:
    """q-values for a policy plus ``v(s) = sum_a pi(a|s) q(s, a)``.

    ``mode`` is ``"infinite"`` for the stationary solve or ``"finite"`` for the
    first slice of the finite-horizon backward recursion.
    """

    q: np.ndarray
    v: np.ndarray
    mode: str = "infinite"

    @classmethod
    def from_q(cls, q: np.ndarray, policy: StaticPolicy, mode: str = "infinite") -> "QTable":
        q = np.asarray(q, dtype=float)
        return cls(q=q, v=(policy.probs * q).sum(axis=1), mode=mode)

    @classmethod
    def zeros(cls, n_states: int, n_actions: int) -> "QTable":
        return cls(q=np.zeros((n_states, n_actions)), v=np.zeros(n_states), mode="zero")


def q_backward(mdp: TabularMdp, policy: StaticPolicy) -> np.ndarray:
    """Finite-horizon q for every step, shape ``(L, S, A)``; row ``t-1`` is ``q_t``."""
    L = mdp.horizon
    q = np.empty((L, mdp.n_states, mdp.n_actions))
    q[L - 1] = mdp.reward
    for t in range(L - 2, -1, -1):
        v_next = (policy.probs * q[t + 1]).sum(axis=1)
        q[t] = mdp.reward + mdp.gamma * mdp.transition @ v_next
    return q


def exact_q(mdp: TabularMdp, policy: StaticPolicy, horizon_mode: str = "infinite") -> QTable:
    """Evaluate ``policy``'s q-function exactly.

    ``horizon_mode="infinite"`` solves ``(I - gamma P_pi) q = r`` (needs
    gamma < 1); ``"finite"`` returns ``q_1`` from the backward recursion over
    the MDP's horizon.
    """
    if horizon_mode == "infinite":
        if mdp.gamma >= 1.0:
            raise ValueError("infinite-horizon q needs gamma < 1")
        S, A = mdp.n_states, mdp.n_actions
        P = state_action_transition(mdp, policy)
        q = np.linalg.solve(np.eye(S * A) - mdp.gamma * P, mdp.reward.ravel()).reshape(S, A)
        # absorbing states carry exactly zero value
        for s in mdp.absorbing:
            q[s] = 0.0
        return QTable.from_q(q, policy, "infinite")
    if horizon_mode == "finite":
        return QTable.from_q(q_backward(mdp, policy)[0], policy, "finite")
    raise ValueError(f"unknown horizon_mode {horizon_mode!r}")
