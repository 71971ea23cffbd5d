import numpy as np
import pytest

from sope.enumeration import occupancy_by_enumeration
from sope.mdp import (
    Dataset,
    StaticPolicy,
    SupportError,
    TabularMdp,
    build_graph_env,
    build_toy_mc_env,
    make_static_policy,
    sample_dataset,
    sample_trajectory,
)
from sope.occupancy import occupancy_t

from conftest import graph_policies


class TestGraphEnv:
    def test_reference_setup(self):
        mdp = build_graph_env(20, 0.98)
        assert mdp.horizon == 20
        assert mdp.gamma == 0.98
        assert mdp.n_states == 41 and mdp.n_actions == 2
        assert 40 in mdp.absorbing
        assert mdp.initial_dist[0] == 1.0

    def test_smallest_chain(self):
        mdp = build_graph_env(2, 0.9)
        # four labelled states plus the absorbing one
        assert mdp.n_states == 5
        np.testing.assert_allclose(mdp.transition.sum(axis=2), 1.0, atol=1e-12)

    def test_slip_probabilities(self):
        mdp = build_graph_env(3, 0.9)
        assert mdp.transition[0, 0, 1] == 0.75
        assert mdp.transition[0, 0, 2] == 0.25
        assert mdp.transition[0, 1, 2] == 0.75

    def test_rewards(self):
        mdp = build_graph_env(3, 0.9)
        assert mdp.reward[0, 0] == pytest.approx(0.75 - 0.25)
        assert mdp.reward[0, 1] == pytest.approx(0.25 - 0.75)
        # last layer always steps into the absorbing state, which is not on the top chain
        assert np.all(mdp.reward[[3, 4]] == -1.0)
        assert np.all(mdp.reward[6] == 0.0)

    def test_rejects_short_chain(self):
        with pytest.raises(ValueError):
            build_graph_env(1, 0.9)


class TestToyMc:
    def test_layout(self):
        mdp = build_toy_mc_env(0.99)
        assert mdp.n_states == 21 and mdp.horizon == 100
        np.testing.assert_allclose(mdp.initial_dist[:20], 1 / 20)
        assert mdp.initial_dist[20] == 0.0

    def test_left_boundary_clamps(self):
        mdp = build_toy_mc_env(0.99)
        assert mdp.transition[0, 1, 0] == 1.0

    def test_terminal_absorbs(self):
        mdp = build_toy_mc_env(0.99)
        assert mdp.transition[19, 0, 20] == 1.0
        assert np.all(mdp.transition[20, :, 20] == 1.0)
        assert np.all(mdp.reward[20] == 0.0)
        assert np.all(mdp.reward[:20] == -1.0)


class TestValidation:
    def test_row_sums(self):
        P = np.array([[[0.5, 0.4]], [[0.0, 1.0]]])
        with pytest.raises(ValueError, match="sum to 1"):
            TabularMdp(P, np.zeros((2, 1)), np.array([1.0, 0.0]), 0.9, 3)

    def test_absorbing_must_self_loop(self):
        P = np.array([[[0.0, 1.0]], [[1.0, 0.0]]])
        with pytest.raises(ValueError, match="absorbing"):
            TabularMdp(P, np.zeros((2, 1)), np.array([1.0, 0.0]), 0.9, 3, frozenset({1}))

    def test_gamma_range(self):
        P = np.ones((1, 1, 1))
        with pytest.raises(ValueError):
            TabularMdp(P, np.zeros((1, 1)), np.ones(1), 0.0, 3)

    def test_policy_rows(self):
        with pytest.raises(ValueError):
            StaticPolicy(np.array([[0.5, 0.6]]))


class TestStaticPolicy:
    def test_rows(self):
        pol = make_static_policy(4, 0.9)
        np.testing.assert_array_equal(pol.probs, [[0.9, 1 - 0.9]] * 4)

    def test_absorbing_rows_uniform(self):
        pol = make_static_policy(3, 0.9, absorbing={2})
        np.testing.assert_array_equal(pol.probs[2], [0.5, 0.5])

    def test_ratio_arithmetic(self):
        pe, pb = make_static_policy(1, 1.0), make_static_policy(1, 0.5)
        rho = pe.probs / pb.probs
        assert rho[0, 0] == 2.0 and rho[0, 1] == 0.0

    @pytest.mark.parametrize("p", [-0.1, 1.5])
    def test_rejects_bad_p(self, p):
        with pytest.raises(ValueError):
            make_static_policy(2, p)


class TestSampling:
    def test_same_policy_unit_ratios(self, graph6):
        pe, _ = graph_policies(graph6)
        ds = sample_dataset(graph6, pe, pe, 50, 3)
        assert np.all(ds.rhos == 1.0)
        assert np.all(np.cumprod(ds.rhos, axis=1) == 1.0)

    def test_determinism(self, graph6):
        pe, pb = graph_policies(graph6)
        a = sample_trajectory(graph6, pb, pe, 11)
        b = sample_trajectory(graph6, pb, pe, 11)
        for name in ("states", "actions", "rewards", "rhos"):
            np.testing.assert_array_equal(getattr(a, name), getattr(b, name))

    def test_dataset_seeding_contract(self, graph6):
        pe, pb = graph_policies(graph6)
        ds = sample_dataset(graph6, pb, pe, 512, 7)
        for i in (0, 1, 100, 511):
            single = sample_trajectory(graph6, pb, pe, 7 + i)
            np.testing.assert_array_equal(ds.trajectories[i].states, single.states)
            np.testing.assert_array_equal(ds.trajectories[i].actions, single.actions)

    def test_single_trajectory_dataset(self, graph6):
        pe, pb = graph_policies(graph6)
        ds = sample_dataset(graph6, pb, pe, 1, 0)
        assert ds.m == 1 and ds.states.shape == (1, 6)

    def test_disjoint_seed_ranges(self, toy_mc):
        pe, pb = graph_policies(toy_mc, 0.5, 0.6)
        a = sample_dataset(toy_mc, pb, pe, 20, 0)
        b = sample_dataset(toy_mc, pb, pe, 20, 20)
        rows_a = {tuple(r) for r in np.hstack([a.states, a.actions])}
        rows_b = {tuple(r) for r in np.hstack([b.states, b.actions])}
        assert not rows_a & rows_b

    def test_rejects_empty(self, graph6):
        pe, pb = graph_policies(graph6)
        with pytest.raises(ValueError):
            sample_dataset(graph6, pb, pe, 0, 0)

    def test_support_violation(self, graph6):
        pe = make_static_policy(graph6.n_states, 0.5, graph6.absorbing)
        pb = make_static_policy(graph6.n_states, 1.0, graph6.absorbing)
        with pytest.raises(SupportError):
            sample_dataset(graph6, pb, pe, 5, 0)

    def test_ratio_annotation(self, graph6):
        pe, pb = graph_policies(graph6)
        ds = sample_dataset(graph6, pb, pe, 30, 1)
        expected = pe.probs[ds.states, ds.actions] / pb.probs[ds.states, ds.actions]
        np.testing.assert_array_equal(ds.rhos, expected)

    def test_absorbing_closure(self, toy_mc):
        pe, pb = graph_policies(toy_mc, 0.5, 0.9)
        ds = sample_dataset(toy_mc, pb, pe, 200, 5)
        for traj in ds.trajectories:
            hit = np.flatnonzero(traj.states == 20)
            if hit.size:
                k = hit[0]
                assert np.all(traj.states[k:] == 20)
                assert np.all(traj.rewards[k:] == 0.0)
                assert np.all(traj.rhos[k:] == 1.0)

    def test_visit_frequencies_match_dp(self):
        # 1e5 rollouts; every d_2 entry within 3 standard errors
        mdp = build_graph_env(2, 0.9)
        pe, pb = graph_policies(mdp)
        m = 100_000
        ds = sample_dataset(mdp, pb, pe, m, 0)
        freq = np.zeros((mdp.n_states, mdp.n_actions))
        np.add.at(freq, (ds.states[:, 1], ds.actions[:, 1]), 1.0 / m)
        target = occupancy_t(mdp, pb)[1]
        se = np.sqrt(target * (1 - target) / m)
        assert np.all(np.abs(freq - target) <= 3 * se + 1e-15)
        np.testing.assert_allclose(target, occupancy_by_enumeration(mdp, pb, 2), atol=1e-15)

    def test_from_arrays(self, graph2):
        pe, pb = graph_policies(graph2)
        ds = Dataset.from_arrays([[0, 1]], [[0, 1]], graph2, pb, pe)
        assert ds.rhos[0, 0] == pytest.approx(1.8)
        assert ds.rhos[0, 1] == pytest.approx(0.2)
        assert ds.rewards[0, 1] == -1.0
