"""Exhaustive enumeration of trajectories on small MDPs.

Everything here works from path probabilities only and never touches the
occupancy recursions, so it can serve as an independent check on them.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .mdp import StaticPolicy, TabularMdp

DEFAULT_MAX_PATHS = 2_000_000


class EnumerationTooLarge(RuntimeError):
    pass


@dataclass(frozen=True)
class PathSet:
    """All positive-probability state/action paths of a fixed length."""

    probs: np.ndarray
    states: np.ndarray
    actions: np.ndarray

    def __len__(self) -> int:
        return len(self.probs)

    def expectation(self, values: np.ndarray) -> float:
        return float(np.dot(self.probs, values))


def enumerate_paths(
    mdp: TabularMdp,
    policy: StaticPolicy,
    horizon: Optional[int] = None,
    max_paths: int = DEFAULT_MAX_PATHS,
) -> PathSet:
    """List every (S_1, A_1, ..., S_L, A_L) with positive probability under ``policy``."""
    L = mdp.horizon if horizon is None else int(horizon)
    probs = [float(p) for p in mdp.initial_dist]
    paths = [((s,), ()) for s in range(mdp.n_states)]
    frontier = [(p, st, ac) for p, (st, ac) in zip(probs, paths) if p > 0]
    for t in range(L):
        grown = []
        for p, st, ac in frontier:
            s = st[-1]
            for a in range(mdp.n_actions):
                pa = p * policy.probs[s, a]
                if pa == 0:
                    continue
                if t == L - 1:
                    grown.append((pa, st, ac + (a,)))
                    continue
                for s2 in np.flatnonzero(mdp.transition[s, a]):
                    grown.append((pa * mdp.transition[s, a, s2], st + (int(s2),), ac + (a,)))
        if len(grown) > max_paths:
            raise EnumerationTooLarge(f"more than {max_paths} paths at step {t + 1}")
        frontier = grown
    return PathSet(
        probs=np.array([f[0] for f in frontier]),
        states=np.array([f[1] for f in frontier], dtype=np.int64).reshape(len(frontier), L),
        actions=np.array([f[2] for f in frontier], dtype=np.int64).reshape(len(frontier), L),
    )


def occupancy_by_enumeration(mdp: TabularMdp, policy: StaticPolicy, t: int) -> np.ndarray:
    """``Pr(S_t = s, A_t = a)`` summed over enumerated paths (1-based ``t``)."""
    paths = enumerate_paths(mdp, policy, horizon=t)
    d = np.zeros((mdp.n_states, mdp.n_actions))
    np.add.at(d, (paths.states[:, t - 1], paths.actions[:, t - 1]), paths.probs)
    return d


def value_by_enumeration(mdp: TabularMdp, policy: StaticPolicy) -> float:
    paths = enumerate_paths(mdp, policy)
    g = mdp.gamma ** np.arange(mdp.horizon)
    returns = (mdp.reward[paths.states, paths.actions] * g).sum(axis=1)
    return paths.expectation(returns)


def conditional_ratio_bruteforce(
    mdp: TabularMdp,
    pi_e: StaticPolicy,
    pi_b: StaticPolicy,
    t: int,
    s: int,
    a: int,
    max_paths: int = DEFAULT_MAX_PATHS,
) -> float:
    """``E_{pi_b}[rho_{1:t} | S_t = s, A_t = a]`` by summing over all length-``t`` prefixes."""
    if t < 1:
        raise ValueError("t is 1-based")
    paths = enumerate_paths(mdp, pi_b, horizon=t, max_paths=max_paths)
    hit = (paths.states[:, t - 1] == s) & (paths.actions[:, t - 1] == a)
    mass = paths.probs[hit].sum()
    if mass <= 0:
        raise ValueError(f"(s={s}, a={a}) has zero behaviour probability at t={t}")
    st, ac = paths.states[hit], paths.actions[hit]
    rho = np.prod(pi_e.probs[st, ac] / pi_b.probs[st, ac], axis=1)
    return float(np.dot(paths.probs[hit], rho) / mass)
