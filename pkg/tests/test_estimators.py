import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sope.enumeration import enumerate_paths
from sope.estimators import (
    EstimatorSpec,
    estimate_cwpdis,
    estimate_dr_sope,
    estimate_is,
    estimate_pdis,
    estimate_sis,
    estimate_sope,
    estimate_weighted_sis,
    estimate_wsope,
    evaluate,
    sope_weights,
    weight_wtn,
)
from sope.mdp import Dataset, StaticPolicy, TabularMdp, Trajectory, build_graph_env, make_static_policy, sample_dataset
from sope.occupancy import QTable, exact_j, exact_q
from sope.ratios import MaskedRatioError, RatioTable, estimate_ratio, oracle_ratio, time_indexed_ratios

from conftest import graph_policies, random_mdp, random_policy

# stationary-ratio SIS gap on random_mdp(30, horizon=3) with policies 31/32, frozen
STATIONARY_SIS_GAP = -0.018829104453972886


def all_paths(mdp, pi_b, pi_e):
    paths = enumerate_paths(mdp, pi_b)
    return paths.probs, Dataset.from_arrays(paths.states, paths.actions, mdp, pi_b, pi_e)


def manual_dataset(rhos, rewards, gamma, states=None, actions=None):
    """Dataset with hand-set ratios and rewards over a one-state, two-action space."""
    rhos = np.atleast_2d(np.asarray(rhos, float))
    rewards = np.atleast_2d(np.asarray(rewards, float))
    m, L = rhos.shape
    states = np.zeros((m, L), int) if states is None else np.asarray(states)
    actions = np.zeros((m, L), int) if actions is None else np.asarray(actions)
    trajs = tuple(Trajectory(*row) for row in zip(states, actions, rewards, rhos))
    pol = make_static_policy(int(states.max()) + 1, 0.5)
    return Dataset(trajs, pol, pol, gamma, L)


def const_ratio(value, n_states=1, n_actions=2):
    return RatioTable(np.full((n_states, n_actions), value), "model-based", np.ones((n_states, n_actions), bool))


@pytest.fixture
def graph_data(graph6):
    pe, pb = graph_policies(graph6)
    ds = sample_dataset(graph6, pb, pe, 64, 0)
    return graph6, pe, pb, ds, estimate_ratio(ds, "model-based")


class TestWeightWtn:
    def test_t_zero(self):
        traj = Trajectory([0, 0], [0, 0], [1.0, 1.0], [2.0, 0.5])
        assert weight_wtn(traj, 0, 1, const_ratio(1.0)) == 1.0

    def test_full_product_when_n_covers(self):
        traj = Trajectory([0, 0, 0], [0, 0, 0], [1.0] * 3, [2.0, 0.5, 3.0])
        for t in range(1, 4):
            assert weight_wtn(traj, t, 3, None) == pytest.approx(np.prod([2.0, 0.5, 3.0][:t]))
            assert weight_wtn(traj, t, 7, None) == weight_wtn(traj, t, 3, None)

    def test_direct_arithmetic(self):
        traj = Trajectory([0, 1, 0], [0, 0, 0], [1.0] * 3, [2.0, 0.5, 3.0])
        w = np.array([[1.0, 1.0], [1.5, 1.0]])
        ratio = RatioTable(w, "model-based", np.ones((2, 2), bool))
        assert weight_wtn(traj, 3, 1, ratio) == 4.5

    def test_masked_entry(self):
        traj = Trajectory([0, 0], [1, 1], [1.0, 1.0], [1.0, 1.0])
        ratio = RatioTable(np.ones((1, 2)), "model-based", np.array([[True, False]]))
        with pytest.raises(MaskedRatioError):
            weight_wtn(traj, 2, 0, ratio)

    def test_range(self):
        traj = Trajectory([0], [0], [1.0], [1.0])
        with pytest.raises(ValueError):
            weight_wtn(traj, 2, 0, None)

    @pytest.mark.parametrize("n", [0, 1, 3, 6])
    def test_matrix_matches_scalar(self, graph_data, n):
        _, _, _, ds, ratio = graph_data
        W = sope_weights(ds, n, ratio)
        for i in (0, 5, 63):
            for t in range(1, ds.horizon + 1):
                assert W[i, t - 1] == pytest.approx(weight_wtn(ds.trajectories[i], t, n, ratio), rel=1e-12)

    def test_window_survives_zero_ratio(self):
        rhos = [[2.0, 0.0, 3.0, 4.0, 0.5]]
        ds = manual_dataset(rhos, np.ones((1, 5)), 0.9)
        W = sope_weights(ds, 2, const_ratio(1.0))
        np.testing.assert_array_equal(W[0], [2.0, 0.0, 0.0, 12.0, 2.0])

    def test_positive_weights(self, graph_data):
        _, _, _, ds, ratio = graph_data
        assert np.all(ratio.w[ratio.support_mask] > 0)
        for n in range(ds.horizon + 1):
            assert np.all(sope_weights(ds, n, ratio) > 0)


class TestSimpleFamilies:
    def test_length_one(self):
        ds = manual_dataset([[2.0]], [[3.0]], 0.9)
        assert estimate_is(ds).value == 6.0
        assert estimate_pdis(ds).value == 6.0

    def test_on_policy_is_mean_return(self, graph6):
        pe, _ = graph_policies(graph6)
        ds = sample_dataset(graph6, pe, pe, 40, 0)
        ret = (ds.rewards @ (graph6.gamma ** np.arange(6))).mean()
        assert estimate_is(ds).value == pytest.approx(ret, abs=1e-12)
        assert estimate_pdis(ds).value == pytest.approx(ret, abs=1e-12)
        assert estimate_sis(ds, const_ratio(1.0, graph6.n_states)).value == pytest.approx(ret, abs=1e-12)

    def test_sope_arithmetic(self):
        ds = manual_dataset([[2.0, 0.5]], [[1.0, 4.0]], 0.5)
        assert estimate_sope(ds, 1, const_ratio(1.5)).value == 3.5

    def test_value_is_mean_of_per_trajectory(self, graph_data):
        _, _, _, ds, ratio = graph_data
        for est in (estimate_is(ds), estimate_pdis(ds), estimate_sis(ds, ratio), estimate_sope(ds, 2, ratio)):
            assert est.value == pytest.approx(est.per_trajectory.mean(), abs=1e-12)
            assert est.per_trajectory.shape == (64,)

    def test_n_out_of_range(self, graph_data):
        _, _, _, ds, ratio = graph_data
        with pytest.raises(ValueError):
            estimate_sope(ds, 7, ratio)
        with pytest.raises(ValueError):
            estimate_sope(ds, -1, ratio)

    def test_truncated_mode_checks_horizon(self, graph_data):
        mdp, pe, pb, ds, _ = graph_data
        with pytest.raises(ValueError, match="L-n"):
            estimate_sope(ds, 2, oracle_ratio(mdp, pe, pb, "truncated", T=5), "truncated")
        estimate_sope(ds, 2, oracle_ratio(mdp, pe, pb, "truncated", T=4), "truncated")


class TestEndpoints:
    def test_sope(self, graph_data):
        _, _, _, ds, ratio = graph_data
        assert estimate_sope(ds, 0, ratio).value == estimate_sis(ds, ratio).value
        assert estimate_sope(ds, ds.horizon, ratio).value == estimate_pdis(ds).value
        np.testing.assert_array_equal(estimate_sope(ds, 0, ratio).per_trajectory, estimate_sis(ds, ratio).per_trajectory)

    def test_wsope(self, graph_data):
        _, _, _, ds, ratio = graph_data
        assert estimate_wsope(ds, 0, ratio).value == estimate_weighted_sis(ds, ratio).value
        assert estimate_wsope(ds, ds.horizon, ratio).value == estimate_cwpdis(ds).value

    def test_dr_zero_q(self, graph_data):
        _, _, _, ds, ratio = graph_data
        zero = QTable.zeros(ds.n_states, ds.n_actions)
        for n in range(ds.horizon + 1):
            assert estimate_dr_sope(ds, n, ratio, zero).value == estimate_sope(ds, n, ratio).value

    def test_pdis_needs_no_ratio(self, graph_data):
        _, _, _, ds, _ = graph_data
        assert estimate_sope(ds, ds.horizon, None).value == estimate_pdis(ds).value


class TestUnbiasedness:
    def setup_method(self):
        self.mdp = build_graph_env(2, 0.9).with_horizon(3)
        self.pe, self.pb = graph_policies(self.mdp)

    def cases(self):
        yield self.mdp, self.pe, self.pb
        yield random_mdp(30, horizon=3), random_policy(31), random_policy(32)

    def test_is_and_pdis(self):
        for mdp, pe, pb in self.cases():
            probs, ds = all_paths(mdp, pb, pe)
            j = exact_j(mdp, pe)
            assert probs @ estimate_is(ds).per_trajectory == pytest.approx(j, abs=1e-10)
            assert probs @ estimate_pdis(ds).per_trajectory == pytest.approx(j, abs=1e-10)

    def test_sope_truncated_every_n(self):
        for mdp, pe, pb in self.cases():
            probs, ds = all_paths(mdp, pb, pe)
            L, j = mdp.horizon, exact_j(mdp, pe)
            for n in range(L + 1):
                ratio = oracle_ratio(mdp, pe, pb, "truncated", T=L - n) if n < L else None
                est = estimate_sope(ds, n, ratio, "truncated")
                assert probs @ est.per_trajectory == pytest.approx(j, abs=1e-10), n

    def test_sis_time_indexed(self):
        for mdp, pe, pb in self.cases():
            probs, ds = all_paths(mdp, pb, pe)
            est = estimate_sis(ds, time_indexed_ratios(mdp, pe, pb))
            assert probs @ est.per_trajectory == pytest.approx(exact_j(mdp, pe), abs=1e-10)

    def test_sis_stationary_ratio_gap(self):
        mdp, pe, pb = random_mdp(30, horizon=3), random_policy(31), random_policy(32)
        probs, ds = all_paths(mdp, pb, pe)
        gap = probs @ estimate_sis(ds, oracle_ratio(mdp, pe, pb, "stationary")).per_trajectory - exact_j(mdp, pe)
        assert gap == pytest.approx(STATIONARY_SIS_GAP, abs=1e-12)
        assert abs(gap) > 1e-3


class TestWeighted:
    def test_constant_rewards(self, graph_data):
        _, _, _, ds, ratio = graph_data
        c = 2.5
        const = Dataset(
            tuple(Trajectory(t.states, t.actions, np.full(ds.horizon, c), t.rhos) for t in ds.trajectories),
            ds.pi_b, ds.pi_e, ds.gamma, ds.horizon,
        )
        expected = c * np.sum(ds.gamma ** np.arange(ds.horizon))
        assert estimate_cwpdis(const).value == pytest.approx(expected, abs=1e-12)
        for n in range(ds.horizon + 1):
            assert estimate_wsope(const, n, ratio).value == pytest.approx(expected, abs=1e-12)

    def test_single_trajectory(self):
        ds = manual_dataset([[2.0, 0.3, 5.0]], [[1.0, -2.0, 4.0]], 0.9)
        assert estimate_cwpdis(ds).value == pytest.approx(1.0 - 0.9 * 2.0 + 0.81 * 4.0, abs=1e-12)

    def test_on_policy_cwpdis(self, graph6):
        pe, _ = graph_policies(graph6)
        ds = sample_dataset(graph6, pe, pe, 30, 0)
        ret = (ds.rewards @ (graph6.gamma ** np.arange(6))).mean()
        assert estimate_cwpdis(ds).value == pytest.approx(ret, abs=1e-12)

    @pytest.mark.parametrize("c", [1e-3, 0.5, 7.0])
    def test_ratio_rescaling_invariance(self, graph_data, c):
        _, _, _, ds, ratio = graph_data
        for n in range(ds.horizon):
            assert estimate_wsope(ds, n, ratio.scaled(c)).value == pytest.approx(
                estimate_wsope(ds, n, ratio).value, rel=1e-12, abs=1e-12
            )

    def test_zero_denominator_names_step(self):
        ds = manual_dataset([[1.0, 0.0, 1.0], [1.0, 0.0, 2.0]], np.ones((2, 3)), 0.9)
        with pytest.raises(ZeroDivisionError, match="t=2"):
            estimate_cwpdis(ds)

    def test_diagnostics(self, graph_data):
        _, _, _, ds, ratio = graph_data
        est = estimate_wsope(ds, 2, ratio)
        assert est.per_trajectory is None
        assert est.diagnostics["ess"].shape == (ds.horizon,)
        assert np.all(est.diagnostics["ess"] <= ds.m + 1e-9)


def deterministic_micro():
    """State 0 steps to absorbing state 1 whatever the action; rewards depend on the action."""
    P = np.zeros((2, 2, 2))
    P[:, :, 1] = 1.0
    R = np.array([[1.0, -3.0], [0.0, 0.0]])
    return TabularMdp(P, R, np.array([1.0, 0.0]), 0.9, 4, frozenset({1}), name="micro")


def dr_trajectory_reference(ds, q):
    """Backward recursion: V_t = v(S_t) + rho_t (R_t + gamma V_{t+1} - q(S_t, A_t))."""
    out = []
    for tr in ds.trajectories:
        acc = 0.0
        for t in reversed(range(len(tr))):
            s, a = tr.states[t], tr.actions[t]
            acc = q.v[s] + tr.rhos[t] * (tr.rewards[t] + ds.gamma * acc - q.q[s, a])
        out.append(acc)
    return np.array(out)


def dr_distribution_reference(ds, q, ratio):
    """v(S_1) plus ratio-weighted temporal-difference corrections, one loop per trajectory."""
    out = []
    for tr in ds.trajectories:
        total = q.v[tr.states[0]]
        for t in range(len(tr)):
            s, a = tr.states[t], tr.actions[t]
            nxt = q.v[tr.states[t + 1]] if t + 1 < len(tr) else 0.0
            total += ds.gamma**t * ratio.w[s, a] * (tr.rewards[t] + ds.gamma * nxt - q.q[s, a])
        out.append(total)
    return np.array(out)


class TestDoublyRobust:
    def test_zero_variance_micro(self):
        mdp = deterministic_micro()
        pe, pb = make_static_policy(2, 0.8, mdp.absorbing), make_static_policy(2, 0.3, mdp.absorbing)
        ds = sample_dataset(mdp, pb, pe, 40, 0)
        q = exact_q(mdp, pe)
        ratio = oracle_ratio(mdp, pe, pb)
        j = exact_j(mdp, pe)
        for n in range(mdp.horizon + 1):
            est = estimate_dr_sope(ds, n, ratio, q)
            np.testing.assert_allclose(est.per_trajectory, j, atol=1e-10)

    def test_trajectory_endpoint(self, graph_data):
        mdp, pe, _, ds, ratio = graph_data
        q = exact_q(mdp, pe)
        q = QTable.from_q(q.q + 0.3 * np.sin(np.arange(q.q.size)).reshape(q.q.shape), pe)
        est = estimate_dr_sope(ds, ds.horizon, ratio, q)
        np.testing.assert_allclose(est.per_trajectory, dr_trajectory_reference(ds, q), rtol=1e-12, atol=1e-12)

    def test_distribution_endpoint(self, graph_data):
        mdp, pe, _, ds, ratio = graph_data
        q = QTable.from_q(np.cos(np.arange(mdp.n_states * 2)).reshape(-1, 2), pe)
        est = estimate_dr_sope(ds, 0, ratio, q)
        np.testing.assert_allclose(est.per_trajectory, dr_distribution_reference(ds, q, ratio), rtol=1e-12, atol=1e-12)

    def test_unbiased_with_wrong_q(self):
        mdp = build_graph_env(2, 0.9).with_horizon(3)
        pe, pb = graph_policies(mdp)
        probs, ds = all_paths(mdp, pb, pe)
        q = QTable.from_q(np.linspace(-1, 2, mdp.n_states * 2).reshape(-1, 2), pe)
        for n in range(4):
            ratio = oracle_ratio(mdp, pe, pb, "truncated", T=3 - n) if n < 3 else None
            est = estimate_dr_sope(ds, n, ratio, q, ratio_mode="truncated")
            assert probs @ est.per_trajectory == pytest.approx(exact_j(mdp, pe), abs=1e-10)

    def test_sampled_mode(self, graph_data):
        mdp, pe, _, ds, ratio = graph_data
        q = exact_q(mdp, pe)
        a = estimate_dr_sope(ds, 2, ratio, q, "sampled", seed=3)
        b = estimate_dr_sope(ds, 2, ratio, q, "sampled", seed=3)
        assert a.value == b.value
        # with equal q across actions the sampled and expected forms coincide
        flat = QTable.from_q(np.repeat(q.v[:, None], 2, axis=1), pe)
        assert estimate_dr_sope(ds, 2, ratio, flat, "sampled", seed=1).value == pytest.approx(
            estimate_dr_sope(ds, 2, ratio, flat).value, abs=1e-12
        )

    def test_shape_and_mode_errors(self, graph_data):
        _, _, _, ds, ratio = graph_data
        with pytest.raises(ValueError):
            estimate_dr_sope(ds, 1, ratio, QTable.zeros(2, 2))
        with pytest.raises(ValueError):
            estimate_dr_sope(ds, 1, ratio, QTable.zeros(ds.n_states, 2), "greedy")


class TestSpec:
    def test_dispatch(self, graph_data):
        _, _, _, ds, ratio = graph_data
        assert EstimatorSpec("SOPE", 2, ratio)(ds).value == estimate_sope(ds, 2, ratio).value
        assert evaluate(EstimatorSpec("IS"), ds).value == estimate_is(ds).value
        assert evaluate(EstimatorSpec("WSIS", ratio=ratio), ds).value == estimate_weighted_sis(ds, ratio).value

    def test_invariants(self):
        with pytest.raises(ValueError):
            EstimatorSpec("MAGIC")
        with pytest.raises(ValueError):
            EstimatorSpec("DRSOPE", 1)
        with pytest.raises(ValueError):
            EstimatorSpec("SIS")


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), perm_seed=st.integers(0, 10_000), n=st.integers(0, 6))
def test_permutation_invariance(seed, perm_seed, n):
    mdp = build_graph_env(6, 0.98)
    pe, pb = graph_policies(mdp)
    ds = sample_dataset(mdp, pb, pe, 16, seed)
    ratio = estimate_ratio(ds, "model-based")
    order = np.random.default_rng(perm_seed).permutation(ds.m)
    shuffled = ds.subset(order)
    q = exact_q(mdp, pe)
    for fn in (
        lambda d: estimate_is(d),
        lambda d: estimate_sope(d, n, ratio),
        lambda d: estimate_wsope(d, n, ratio),
        lambda d: estimate_dr_sope(d, n, ratio, q),
    ):
        assert fn(shuffled).value == pytest.approx(fn(ds).value, rel=1e-12, abs=1e-12)


@settings(max_examples=25, deadline=None)
@given(
    rhos=st.lists(st.floats(0.05, 20.0), min_size=1, max_size=12),
    n=st.integers(0, 12),
)
def test_window_matches_direct_product(rhos, n):
    L = len(rhos)
    ds = manual_dataset([rhos], np.ones((1, L)), 0.9)
    W = sope_weights(ds, n, const_ratio(1.0))
    for t in range(1, L + 1):
        assert W[0, t - 1] == pytest.approx(weight_wtn(ds.trajectories[0], t, n, const_ratio(1.0)), rel=1e-10)
