"""Tabular MDPs, the two benchmark environments, static policies and seeded rollouts."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

RNG_ALGORITHM = "numpy.random.PCG64"
STOCHASTIC_ATOL = 1e-12


class SupportError(ValueError):
    """Raised when pi_e puts mass where pi_b (or d^{pi_b}) has none."""


def _frozen(arr, dtype=float) -> np.ndarray:
    out = np.array(arr, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class TabularMdp:
    """Finite MDP with a fixed evaluation horizon.

    ``transition[s, a, s']`` holds P(s' | s, a) and ``reward[s, a]`` the
    expected reward. Absorbing states self-loop with zero reward.
    """

    transition: np.ndarray
    reward: np.ndarray
    initial_dist: np.ndarray
    gamma: float
    horizon: int
    absorbing: frozenset = frozenset()
    name: str = "tabular"

    def __post_init__(self):
        object.__setattr__(self, "transition", _frozen(self.transition))
        object.__setattr__(self, "reward", _frozen(self.reward))
        object.__setattr__(self, "initial_dist", _frozen(self.initial_dist))
        object.__setattr__(self, "absorbing", frozenset(int(s) for s in self.absorbing))
        object.__setattr__(self, "gamma", float(self.gamma))
        object.__setattr__(self, "horizon", int(self.horizon))
        self.validate()

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    def validate(self) -> None:
        S, A = self.reward.shape if self.reward.ndim == 2 else (-1, -1)
        if self.transition.ndim != 3 or self.transition.shape != (S, A, S):
            raise ValueError(
                f"transition must have shape (S, A, S) matching reward {self.reward.shape}, "
                f"got {self.transition.shape}"
            )
        if self.initial_dist.shape != (S,):
            raise ValueError(f"initial_dist must have shape ({S},)")
        if S < 1 or A < 1:
            raise ValueError("need at least one state and one action")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")
        if self.horizon < 1:
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        if np.any(self.transition < 0) or np.any(self.initial_dist < 0):
            raise ValueError("probabilities must be nonnegative")
        row_err = np.abs(self.transition.sum(axis=2) - 1.0).max()
        if row_err > STOCHASTIC_ATOL:
            raise ValueError(f"transition rows do not sum to 1 (max error {row_err:.3g})")
        if abs(self.initial_dist.sum() - 1.0) > STOCHASTIC_ATOL:
            raise ValueError("initial_dist does not sum to 1")
        for s in self.absorbing:
            if not 0 <= s < S:
                raise ValueError(f"absorbing state {s} out of range")
            if np.any(self.transition[s, :, s] != 1.0) or np.any(self.reward[s] != 0.0):
                raise ValueError(f"absorbing state {s} must self-loop with zero reward")

    def with_horizon(self, horizon: int) -> "TabularMdp":
        return replace(self, horizon=horizon)

    def with_gamma(self, gamma: float) -> "TabularMdp":
        return replace(self, gamma=gamma)


@dataclass(frozen=True)
class StaticPolicy:
    """State-conditional action distribution, ``probs[s, a] = pi(a | s)``."""

    probs: np.ndarray

    def __post_init__(self):
        probs = _frozen(self.probs)
        if probs.ndim != 2:
            raise ValueError("policy table must be 2-D (states x actions)")
        if np.any(probs < 0):
            raise ValueError("policy probabilities must be nonnegative")
        err = np.abs(probs.sum(axis=1) - 1.0).max()
        if err > STOCHASTIC_ATOL:
            raise ValueError(f"policy rows do not sum to 1 (max error {err:.3g})")
        object.__setattr__(self, "probs", probs)

    @property
    def n_states(self) -> int:
        return self.probs.shape[0]

    @property
    def n_actions(self) -> int:
        return self.probs.shape[1]


def make_static_policy(
    n_states: int,
    p_action0: float,
    absorbing: Iterable[int] = (),
    n_actions: int = 2,
) -> StaticPolicy:
    """Policy taking action 0 with probability ``p_action0`` in every state.

    With more than two actions the remaining mass is spread evenly over the
    other actions. Rows for ``absorbing`` states are uniform so that any pair
    of such policies has likelihood ratio 1 once the episode has ended.
    """
    if not 0.0 <= p_action0 <= 1.0:
        raise ValueError(f"p_action0 must lie in [0, 1], got {p_action0}")
    if n_actions < 2:
        raise ValueError("static policies need at least two actions")
    row = np.full(n_actions, (1.0 - p_action0) / (n_actions - 1))
    row[0] = p_action0
    probs = np.tile(row, (n_states, 1))
    for s in absorbing:
        probs[s] = 1.0 / n_actions
    return StaticPolicy(probs)


def build_graph_env(chain_len: int, gamma: float) -> TabularMdp:
    """Two-chain graph with slip probability 0.25.

    Layer 0 is the start state 0, layer k (1 <= k < chain_len) holds the top
    state 2k-1 and the bottom state 2k. Action 0 aims for the top state of the
    next layer, action 1 for the bottom one. The last layer feeds the
    absorbing state 2*chain_len. Label 2*chain_len - 1 is never reached and is
    kept as a second absorbing state so the numbering matches the usual
    description of the domain.

    Entering a top state pays +1, entering anything else pays -1 (this
    includes the final step into the absorbing state).
    """
    if chain_len < 2:
        raise ValueError(f"chain_len must be >= 2, got {chain_len}")
    L = int(chain_len)
    n_states = 2 * L + 1
    absorbing_state, unused = 2 * L, 2 * L - 1
    P = np.zeros((n_states, 2, n_states))
    entry_reward = -np.ones(n_states)
    entry_reward[1 : 2 * L - 2 : 2] = 1.0

    layers = [[0]] + [[2 * k - 1, 2 * k] for k in range(1, L)]
    for k, layer in enumerate(layers):
        for s in layer:
            if k == L - 1:
                P[s, :, absorbing_state] = 1.0
                continue
            top, bottom = 2 * k + 1, 2 * k + 2
            P[s, 0, top], P[s, 0, bottom] = 0.75, 0.25
            P[s, 1, top], P[s, 1, bottom] = 0.25, 0.75
    for s in (unused, absorbing_state):
        P[s, :, s] = 1.0

    R = P @ entry_reward
    R[[unused, absorbing_state]] = 0.0
    d1 = np.zeros(n_states)
    d1[0] = 1.0
    return TabularMdp(P, R, d1, gamma, L, frozenset({unused, absorbing_state}), name=f"graph({L})")


def build_toy_mc_env(gamma: float, horizon: int = 100) -> TabularMdp:
    """21-state chain: action 0 moves right, action 1 moves left.

    Index 20 (rightmost) is terminal and absorbing. Moving left from index 0
    stays put. Every step outside the terminal state costs -1. Episodes start
    uniformly over the 20 non-terminal states.
    """
    n_states = 21
    goal = n_states - 1
    P = np.zeros((n_states, 2, n_states))
    for s in range(goal):
        P[s, 0, s + 1] = 1.0
        P[s, 1, max(s - 1, 0)] = 1.0
    P[goal, :, goal] = 1.0
    R = -np.ones((n_states, 2))
    R[goal] = 0.0
    d1 = np.full(n_states, 1.0 / goal)
    d1[goal] = 0.0
    return TabularMdp(P, R, d1, gamma, horizon, frozenset({goal}), name="toy_mc")


@dataclass(frozen=True)
class Trajectory:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    rhos: np.ndarray

    def __post_init__(self):
        for name, dtype in (("states", np.int64), ("actions", np.int64), ("rewards", float), ("rhos", float)):
            object.__setattr__(self, name, _frozen(getattr(self, name), dtype))
        L = len(self.states)
        if not (len(self.actions) == len(self.rewards) == len(self.rhos) == L):
            raise ValueError("trajectory sequences must share one length")
        if not np.all(np.isfinite(self.rhos)):
            raise SupportError("non-finite likelihood ratio in trajectory")

    def __len__(self) -> int:
        return len(self.states)


@dataclass(frozen=True)
class Dataset:
    """A batch of equal-length trajectories logged under ``pi_b``.

    Stacked ``(m, L)`` arrays are exposed as ``states``, ``actions``,
    ``rewards`` and ``rhos`` for the vectorised estimators.
    """

    trajectories: tuple
    pi_b: StaticPolicy
    pi_e: StaticPolicy
    gamma: float
    horizon: int
    seed: Optional[int] = None
    states: np.ndarray = field(init=False, repr=False)
    actions: np.ndarray = field(init=False, repr=False)
    rewards: np.ndarray = field(init=False, repr=False)
    rhos: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        trajs = tuple(self.trajectories)
        if not trajs:
            raise ValueError("a dataset needs at least one trajectory")
        if any(len(t) != self.horizon for t in trajs):
            raise ValueError(f"every trajectory must have length {self.horizon}")
        object.__setattr__(self, "trajectories", trajs)
        for name in ("states", "actions", "rewards", "rhos"):
            stacked = np.stack([getattr(t, name) for t in trajs])
            stacked.setflags(write=False)
            object.__setattr__(self, name, stacked)

    @property
    def m(self) -> int:
        return len(self.trajectories)

    @property
    def n_states(self) -> int:
        return self.pi_b.n_states

    @property
    def n_actions(self) -> int:
        return self.pi_b.n_actions

    def subset(self, index: Sequence[int]) -> "Dataset":
        return replace(self, trajectories=tuple(self.trajectories[i] for i in index))

    @classmethod
    def from_arrays(
        cls,
        states: np.ndarray,
        actions: np.ndarray,
        mdp: TabularMdp,
        pi_b: StaticPolicy,
        pi_e: StaticPolicy,
        seed: Optional[int] = None,
    ) -> "Dataset":
        """Annotate raw state/action paths with rewards and likelihood ratios."""
        states = np.atleast_2d(np.asarray(states, dtype=np.int64))
        actions = np.atleast_2d(np.asarray(actions, dtype=np.int64))
        rewards, rhos = _annotate(mdp, pi_b, pi_e, states, actions)
        trajs = tuple(Trajectory(*row) for row in zip(states, actions, rewards, rhos))
        return cls(trajs, pi_b, pi_e, mdp.gamma, states.shape[1], seed)


def check_support(pi_b: StaticPolicy, pi_e: StaticPolicy, states: Optional[np.ndarray] = None) -> None:
    """Raise SupportError if pi_e(a|s) > 0 while pi_b(a|s) = 0 on the given states."""
    if pi_b.probs.shape != pi_e.probs.shape:
        raise ValueError("pi_b and pi_e must share a shape")
    rows = np.arange(pi_b.n_states) if states is None else np.unique(states)
    bad = (pi_e.probs[rows] > 0) & (pi_b.probs[rows] == 0)
    if bad.any():
        i, a = np.argwhere(bad)[0]
        raise SupportError(f"pi_e(a={a}|s={rows[i]}) > 0 but pi_b assigns it zero probability")


def _annotate(mdp, pi_b, pi_e, states, actions):
    check_support(pi_b, pi_e, states)
    p_b = pi_b.probs[states, actions]
    if np.any(p_b == 0):
        raise SupportError("trajectory contains an action pi_b never takes")
    rhos = pi_e.probs[states, actions] / p_b
    return mdp.reward[states, actions], rhos


def _cdf(probs: np.ndarray) -> np.ndarray:
    # x / x == 1 exactly, so trailing zero-mass entries can never be drawn
    cdf = np.cumsum(probs, axis=-1)
    return cdf / cdf[..., -1:]


def _inverse_cdf(cdf_rows: np.ndarray, u: np.ndarray) -> np.ndarray:
    idx = (u[:, None] >= cdf_rows).sum(axis=1)
    return np.minimum(idx, cdf_rows.shape[1] - 1)


def _rollout(mdp: TabularMdp, pi_b: StaticPolicy, uniforms: np.ndarray):
    m, L = uniforms.shape[0], mdp.horizon
    d1_cdf = _cdf(mdp.initial_dist)
    pol_cdf = _cdf(pi_b.probs)
    trans_cdf = _cdf(mdp.transition)
    states = np.empty((m, L), dtype=np.int64)
    actions = np.empty((m, L), dtype=np.int64)
    s = _inverse_cdf(np.broadcast_to(d1_cdf, (m, d1_cdf.size)), uniforms[:, 0])
    for t in range(L):
        a = _inverse_cdf(pol_cdf[s], uniforms[:, 2 * t + 1])
        states[:, t], actions[:, t] = s, a
        if t + 1 < L:
            s = _inverse_cdf(trans_cdf[s, a], uniforms[:, 2 * t + 2])
    return states, actions


def _uniforms_for(seed: int, L: int) -> np.ndarray:
    return np.random.default_rng(seed).random(2 * L)


def sample_trajectory(mdp: TabularMdp, pi_b: StaticPolicy, pi_e: StaticPolicy, rng_seed: int) -> Trajectory:
    """Roll out ``mdp.horizon`` steps under ``pi_b``, annotated with ratios against ``pi_e``.

    The rollout is a pure function of ``rng_seed``: a fresh PCG64 stream
    supplies 2L uniforms (initial state, then action/next-state pairs) that are
    mapped through inverse CDFs.
    """
    return sample_dataset(mdp, pi_b, pi_e, 1, rng_seed).trajectories[0]


def sample_dataset(mdp: TabularMdp, pi_b: StaticPolicy, pi_e: StaticPolicy, m: int, base_seed: int) -> Dataset:
    """Draw ``m`` trajectories, trajectory ``i`` seeded with ``base_seed + i``."""
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    if pi_b.probs.shape != (mdp.n_states, mdp.n_actions):
        raise ValueError("policy shape does not match the MDP")
    uniforms = np.stack([_uniforms_for(base_seed + i, mdp.horizon) for i in range(m)])
    states, actions = _rollout(mdp, pi_b, uniforms)
    return Dataset.from_arrays(states, actions, mdp, pi_b, pi_e, seed=base_seed)
