"""Exact quantities on a small Graph MDP, and how the spectrum estimators use them.

Run with ``python3 notebooks/oracle_walkthrough.py``.
"""
import numpy as np

from sope import (
    QTable,
    build_graph_env,
    estimate_dr_sope,
    estimate_pdis,
    estimate_ratio,
    estimate_sis,
    estimate_sope,
    exact_j,
    make_static_policy,
    occupancy_avg,
    oracle_ratio,
    sample_dataset,
)

mdp = build_graph_env(4, 0.95)
pi_e = make_static_policy(mdp.n_states, 0.9, mdp.absorbing)
pi_b = make_static_policy(mdp.n_states, 0.5, mdp.absorbing)
print(f"{mdp.name}: {mdp.n_states} states, horizon {mdp.horizon}")
print(f"J(pi_e) = {exact_j(mdp, pi_e):.6f}   J(pi_b) = {exact_j(mdp, pi_b):.6f}")

# Discounted-average occupancies and their ratio.
d_e, d_b = occupancy_avg(mdp, pi_e), occupancy_avg(mdp, pi_b)
ratio = oracle_ratio(mdp, pi_e, pi_b)
print("\n s  a   d_e       d_b       w")
for s, a in np.argwhere(ratio.support_mask):
    print(f"{s:2d} {a:2d}  {d_e[s, a]:.5f}  {d_b[s, a]:.5f}  {ratio.w[s, a]:.4f}")

# One logged batch; the spectrum interpolates between its two endpoints.
ds = sample_dataset(mdp, pi_b, pi_e, 256, 0)
fitted = estimate_ratio(ds, "model-based")
print(f"\nSIS    = {estimate_sis(ds, fitted).value:.5f}")
for n in range(mdp.horizon + 1):
    print(f"SOPE_{n} = {estimate_sope(ds, n, fitted).value:.5f}")
print(f"PDIS   = {estimate_pdis(ds).value:.5f}")

# With q = 0 the doubly-robust variant reduces to the plain estimator.
zero = QTable.zeros(mdp.n_states, mdp.n_actions)
gap = max(abs(estimate_dr_sope(ds, n, fitted, zero).value - estimate_sope(ds, n, fitted).value) for n in range(5))
print(f"\nmax |DR-SOPE_n(q=0) - SOPE_n| = {gap:.2e}")
