"""Built-in verification suite run by ``sope check``.

Every check works on an MDP small enough to enumerate, compares a library
result against an independent oracle and reports the worst deviation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .enumeration import conditional_ratio_bruteforce, enumerate_paths
from .estimators import (
    estimate_cwpdis,
    estimate_dr_sope,
    estimate_pdis,
    estimate_sis,
    estimate_sope,
    estimate_weighted_sis,
    estimate_wsope,
)
from .mdp import Dataset, TabularMdp, build_graph_env, build_toy_mc_env, make_static_policy, sample_dataset
from .occupancy import QTable, bellman_residual_avg, exact_j, exact_q, occupancy_avg, occupancy_stationary
from .ratios import estimate_ratio, oracle_ratio

TOL = 1e-10


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    worst: float
    detail: str = ""


def _graph_pair(chain_len, gamma, p_e=0.9, p_b=0.5):
    mdp = build_graph_env(chain_len, gamma)
    return (
        mdp,
        make_static_policy(mdp.n_states, p_e, mdp.absorbing),
        make_static_policy(mdp.n_states, p_b, mdp.absorbing),
    )


def check_conditional_ratio() -> float:
    """Brute-force E[rho_{1:t} | S_t, A_t] against d_t^e / d_t^b on Graph(2), t <= 4."""
    mdp, pe, pb = _graph_pair(2, 0.9)
    mdp = mdp.with_horizon(4)
    worst = 0.0
    for t in range(1, 5):
        r = oracle_ratio(mdp, pe, pb, "time-indexed", t=t)
        for s, a in np.argwhere(r.support_mask):
            worst = max(worst, abs(conditional_ratio_bruteforce(mdp, pe, pb, t, s, a) - r.w[s, a]))
    return worst


def check_endpoints() -> float:
    """SOPE/W-SOPE/DR-SOPE endpoint identities on seeded Graph(6) datasets."""
    mdp, pe, pb = _graph_pair(6, 0.98)
    worst = 0.0
    for seed in range(5):
        ds = sample_dataset(mdp, pb, pe, 32, 1000 * seed)
        ratio = estimate_ratio(ds, "model-based")
        zero = QTable.zeros(mdp.n_states, mdp.n_actions)
        L = ds.horizon
        pairs = [
            (estimate_sope(ds, 0, ratio).value, estimate_sis(ds, ratio).value),
            (estimate_sope(ds, L, ratio).value, estimate_pdis(ds).value),
            (estimate_wsope(ds, 0, ratio).value, estimate_weighted_sis(ds, ratio).value),
            (estimate_wsope(ds, L, ratio).value, estimate_cwpdis(ds).value),
        ]
        pairs += [(estimate_dr_sope(ds, n, ratio, zero).value, estimate_sope(ds, n, ratio).value) for n in range(L + 1)]
        worst = max(worst, max(abs(x - y) for x, y in pairs))
    return worst


def check_truncated_exactness() -> float:
    """Probability-weighted SOPE_n over every Graph(2) path equals J(pi_e) for each n."""
    mdp, pe, pb = _graph_pair(2, 0.9)
    mdp = mdp.with_horizon(3)
    paths = enumerate_paths(mdp, pb)
    ds = Dataset.from_arrays(paths.states, paths.actions, mdp, pb, pe)
    j = exact_j(mdp, pe)
    worst = 0.0
    for n in range(4):
        ratio = oracle_ratio(mdp, pe, pb, "truncated", T=3 - n) if n < 3 else None
        est = estimate_sope(ds, n, ratio, "truncated")
        worst = max(worst, abs(paths.probs @ est.per_trajectory - j))
    return worst


def check_bellman() -> float:
    """Residual of the infinite-horizon occupancy fixed point for both environments."""
    worst = 0.0
    for mdp, p in ((build_graph_env(20, 0.98), 0.5), (build_toy_mc_env(0.99), 0.6)):
        pol = make_static_policy(mdp.n_states, p, mdp.absorbing)
        worst = max(worst, bellman_residual_avg(mdp, pol, occupancy_stationary(mdp, pol)))
    return worst


def check_bellman_tail() -> float:
    """Excess of |d_avg(L=500) - d_inf| over the geometric tail bound (<= 0 passes)."""
    worst = -np.inf
    for mdp, p in ((build_graph_env(20, 0.98), 0.5), (build_toy_mc_env(0.99), 0.6)):
        pol = make_static_policy(mdp.n_states, p, mdp.absorbing)
        gap = np.abs(occupancy_avg(mdp.with_horizon(500), pol) - occupancy_stationary(mdp, pol)).max()
        worst = max(worst, gap - mdp.gamma**500)
    return max(worst, 0.0)


def deterministic_micro_mdp() -> TabularMdp:
    """Two states: state 0 moves to absorbing state 1 under either action."""
    P = np.zeros((2, 2, 2))
    P[:, :, 1] = 1.0
    R = np.array([[1.0, -3.0], [0.0, 0.0]])
    return TabularMdp(P, R, np.array([1.0, 0.0]), 0.9, 4, frozenset({1}), name="micro")


def check_dr_zero_variance() -> float:
    """Exact q on a deterministic MDP makes every DR-SOPE_n trajectory estimate equal J."""
    mdp = deterministic_micro_mdp()
    pe, pb = make_static_policy(2, 0.8, mdp.absorbing), make_static_policy(2, 0.3, mdp.absorbing)
    ds = sample_dataset(mdp, pb, pe, 50, 0)
    q, ratio, j = exact_q(mdp, pe), oracle_ratio(mdp, pe, pb), exact_j(mdp, pe)
    return max(
        float(np.abs(estimate_dr_sope(ds, n, ratio, q).per_trajectory - j).max()) for n in range(mdp.horizon + 1)
    )


CHECKS: dict = {
    "conditional-ratio-bruteforce": check_conditional_ratio,
    "endpoint-identities": check_endpoints,
    "truncated-ratio-exactness": check_truncated_exactness,
    "bellman-residual": check_bellman,
    "bellman-tail-bound": check_bellman_tail,
    "dr-zero-variance": check_dr_zero_variance,
}


def run_checks(tol: float = TOL, checks: dict = None) -> list:
    """Run every check; an exception counts as a failure with its message as detail."""
    out = []
    for name, fn in (checks or CHECKS).items():
        try:
            worst = float(fn())
            summary = (fn.__doc__ or "").strip().split("\n")[0]
            out.append(CheckResult(name, worst <= tol, worst, summary))
        except Exception as exc:  # reported, not raised: the suite must finish
            out.append(CheckResult(name, False, float("nan"), f"{type(exc).__name__}: {exc}"))
    return out
