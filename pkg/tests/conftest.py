import numpy as np
import pytest

from sope.mdp import StaticPolicy, TabularMdp, build_graph_env, build_toy_mc_env, make_static_policy


def random_mdp(seed, n_states=3, n_actions=2, horizon=4, gamma=0.9):
    """Small dense MDP where states recur, so average and time-indexed ratios differ."""
    rng = np.random.default_rng(seed)
    P = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    R = rng.normal(size=(n_states, n_actions))
    d1 = rng.dirichlet(np.ones(n_states))
    return TabularMdp(P, R, d1, gamma, horizon, name=f"random({seed})")


def random_policy(seed, n_states=3, n_actions=2):
    rng = np.random.default_rng(seed)
    return StaticPolicy(rng.dirichlet(np.ones(n_actions), size=n_states))


def graph_policies(mdp, p_e=0.9, p_b=0.5):
    return (
        make_static_policy(mdp.n_states, p_e, mdp.absorbing),
        make_static_policy(mdp.n_states, p_b, mdp.absorbing),
    )


@pytest.fixture
def graph2():
    return build_graph_env(2, 0.9)


@pytest.fixture
def graph6():
    return build_graph_env(6, 0.98)


@pytest.fixture
def toy_mc():
    return build_toy_mc_env(0.99)


# Filled by tests/test_acceptance.py; printed once at the end of the run.
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])
