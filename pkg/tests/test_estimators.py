import functools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from s2pg_lab.envs import ChainDiagnostic, PointMassMemory
from s2pg_lab.estimators import (chain_returns, collect_episodes, compute_gae, discounted_return,
                                 dump_gradients_csv, dump_trajectories_csv, finite_difference_gradient,
                                 one_step_gradient, reinforce_bptt, reinforce_s2pg, step_targets, z_scores)
from s2pg_lab.policies import (NeuralMeans, RecurrentDeterministicPolicy, ScalarLinearMeans,
                               StatefulGaussianPolicy)
from test_kernels import gae_by_hand

COEFFS = ("f_s", "f_z", "eta_s", "eta_z")


def _chain_setup(coeffs, n, horizon=2, kind="s2pg", gamma=0.9, seed=0):
    means = ScalarLinearMeans(coeffs)
    if kind == "s2pg":
        pol = StatefulGaussianPolicy(means, learn_sigma_a=False, learn_sigma_z=False)
    else:
        pol = RecurrentDeterministicPolicy(means, learn_sigma_a=False)
    env = ChainDiagnostic(n=n, horizon=horizon)
    traj = collect_episodes(env, pol, rng=np.random.default_rng(seed), gamma=gamma, seed=seed + 1)
    idx = [pol.store.names.index(k) for k in pol.mean_param_names]
    return pol, traj, idx


def _sigma(pol):
    if hasattr(pol, "sigmas"):
        sa, sz = pol.sigmas()
        return float(sa[0]), float(sz[0])
    return float(np.exp(pol.store["log_sigma_a"][0])), 0.0


# ------------------------------------------------------------------ returns


def test_discounted_return_examples():
    assert discounted_return(np.zeros(5), gamma=0.9) == 0.0
    assert discounted_return([1.0, 1.0, 1.0], gamma=0.5) == pytest.approx(1.75)
    assert discounted_return([1.0, 1.0, 1.0], gamma=0.5, absorbing=[False, True, False]) == pytest.approx(1.5)
    with pytest.raises(ValueError):
        discounted_return([], gamma=0.5)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=1, max_size=50), st.floats(0, 1))
def test_discounted_return_matches_fold(rewards, gamma):
    # Horner fold from the back: r_0 + g (r_1 + g (r_2 + ...))
    ref = functools.reduce(lambda acc, r: r + gamma * acc, reversed(rewards), 0.0)
    assert discounted_return(rewards, gamma=gamma) == pytest.approx(ref, rel=1e-12, abs=1e-12)


# -------------------------------------------------------------- trajectories


def test_collect_with_absorbing_pads_and_validates(tmp_path):
    means = NeuralMeans(6, 2, d_z=3, hidden=(8,))
    pol = StatefulGaussianPolicy(means, seed=0)
    env = PointMassMemory(n=8, horizon=40)
    traj = collect_episodes(env, pol, rng=np.random.default_rng(0), gamma=0.99, seed=0)
    traj.validate()
    assert traj.horizon == 40 and traj.n == 8
    assert np.all(traj.last[traj.lengths - 1, np.arange(8)])
    dump_trajectories_csv(tmp_path / "t.csv", traj)
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert len(lines) == 1 + traj.valid.sum()
    assert lines[0].startswith("episode,t,s0")


def test_broken_state_chain_is_rejected():
    pol, traj, _ = _chain_setup({"f_s": 0.1, "eta_s": 0.5}, 4, horizon=3)
    traj.z[1, 0, 0] += 1.0
    with pytest.raises(ValueError):
        traj.validate()


# --------------------------------------------------------------- estimators


@pytest.mark.parametrize("kind", ["s2pg", "bptt"])
def test_zero_rewards_give_zero_gradient(kind):
    pol, traj, _ = _chain_setup({"f_s": 0.3, "f_z": 0.2, "eta_s": 0.5, "eta_z": 0.1}, 64, kind=kind)
    traj.reward[:] = 0.0
    fn = reinforce_s2pg if kind == "s2pg" else reinforce_bptt
    assert np.all(fn(traj, pol).grad == 0.0)


def test_per_sample_mean_equals_batched_gradient():
    pol, traj, _ = _chain_setup({"f_s": 0.3, "f_z": 0.2, "eta_s": 0.5, "eta_z": 0.1}, 500)
    a = reinforce_s2pg(traj, pol, "reward_to_go")
    b = reinforce_s2pg(traj, pol, "reward_to_go", per_sample=True)
    np.testing.assert_allclose(a.grad, b.grad, rtol=1e-10, atol=1e-12)
    assert b.per_sample.shape == (500, pol.store.size)


def test_bptt_per_sample_matches_batched_with_window():
    pol, traj, _ = _chain_setup({"f_s": 0.3, "f_z": 0.2, "eta_s": 0.5, "eta_z": 0.4}, 300, horizon=4, kind="bptt")
    for trunc in (0, 1, 2):
        a = reinforce_bptt(traj, pol, trunc)
        b = reinforce_bptt(traj, pol, trunc, per_sample=True)
        np.testing.assert_allclose(a.grad, b.grad, rtol=1e-10, atol=1e-12)


def test_dimension_mismatch_raises():
    pol, traj, _ = _chain_setup({"f_s": 0.3}, 8)
    other = StatefulGaussianPolicy(NeuralMeans(2, 1, d_z=1, hidden=(4,)))
    with pytest.raises(ValueError):
        reinforce_s2pg(traj, other)


def test_one_step_chain_matches_analytic_gradient():
    coeffs = {"f_s": -0.3, "f_z": 0.4, "eta_s": 0.2, "eta_z": 0.1}
    pol, traj, idx = _chain_setup(coeffs, 200_000, horizon=1, seed=11)
    g = reinforce_s2pg(traj, pol, per_sample=True)
    ref = one_step_gradient(coeffs, pol.mean_param_names)
    z = z_scores(g.grad[idx], g.standard_error()[idx], ref, 0.0)
    assert np.all(z < 3.0), z


@pytest.mark.parametrize("kind", ["s2pg", "bptt"])
def test_two_step_chain_matches_finite_differences(kind):
    coeffs = {"f_s": 0.25, "f_z": -0.4, "eta_s": 0.6, "eta_z": 0.3}
    pol, traj, idx = _chain_setup(coeffs, 200_000, kind=kind, seed=21)
    sa, sz = _sigma(pol)
    g = (reinforce_s2pg(traj, pol, per_sample=True) if kind == "s2pg"
         else reinforce_bptt(traj, pol, 0, per_sample=True))
    fd, fd_se = finite_difference_gradient(coeffs, pol.mean_param_names, sa, sz, 2, 0.9, n=1_000_000, seed=5)
    z = z_scores(g.grad[idx], g.standard_error()[idx], fd, fd_se)
    assert np.all(z < 3.0), z


def test_window_one_is_biased_when_state_matters():
    coeffs = {"f_s": 0.2, "f_z": 0.5, "eta_s": 0.9, "eta_z": 0.9}
    pol, traj, idx = _chain_setup(coeffs, 50_000, kind="bptt", seed=31)
    g = reinforce_bptt(traj, pol, 1, per_sample=True)
    fd, fd_se = finite_difference_gradient(coeffs, pol.mean_param_names, _sigma(pol)[0], 0.0, 2, 0.9,
                                           n=200_000, seed=6)
    assert np.max(z_scores(g.grad[idx], g.standard_error()[idx], fd, fd_se)) > 3.0


def test_window_two_equals_full_without_state_feedback():
    # eta_z = 0: z_t depends on the previous observation only, so one transition suffices
    coeffs = {"f_s": 0.2, "eta_s": 0.7}
    pol = RecurrentDeterministicPolicy(ScalarLinearMeans(coeffs, fixed={"f_z": 0.5, "eta_z": 0.0}),
                                       learn_sigma_a=False)
    traj = collect_episodes(ChainDiagnostic(n=64, horizon=5), pol, rng=np.random.default_rng(0), gamma=0.9, seed=0)
    np.testing.assert_allclose(reinforce_bptt(traj, pol, 2).grad, reinforce_bptt(traj, pol, 0).grad, rtol=1e-12)


def test_baselines_preserve_the_mean():
    coeffs = {"f_s": 0.25, "f_z": -0.4, "eta_s": 0.6, "eta_z": 0.3}
    pol, traj, idx = _chain_setup(coeffs, 100_000, seed=41)
    plain = reinforce_s2pg(traj, pol, "none", per_sample=True)
    for mode in ("mean_return", "reward_to_go"):
        other = reinforce_s2pg(traj, pol, mode, per_sample=True)
        # same trajectories: compare through the per-sample difference
        d = other.per_sample - plain.per_sample
        se = d.std(axis=0, ddof=1) / np.sqrt(d.shape[0])
        assert np.all(z_scores(d.mean(axis=0)[idx], se[idx], 0.0, 0.0) < 3.0), mode


def test_step_targets_modes():
    pol, traj, _ = _chain_setup({"f_s": 0.3}, 5, horizon=3)
    g = traj.gamma
    r = traj.reward
    J = r[0] + g * r[1] + g * g * r[2]
    np.testing.assert_allclose(step_targets(traj, "none"), np.broadcast_to(J, (3, 5)))
    rtg = step_targets(traj, "reward_to_go")
    np.testing.assert_allclose(rtg[1], g * r[1] + g * g * r[2])
    local = step_targets(traj, "reward_to_go", step_discounted_targets=True)
    np.testing.assert_allclose(local[1], r[1] + g * r[2])
    loo = step_targets(traj, "mean_return")
    np.testing.assert_allclose(loo[0, 0], J[0] - J[1:].mean())
    with pytest.raises(ValueError):
        step_targets(traj, "bogus")
    with pytest.raises(ValueError):
        step_targets(traj, "none", step_discounted_targets=True)


def test_gradient_csv(tmp_path):
    pol, traj, _ = _chain_setup({"f_s": 0.3, "eta_s": 0.2}, 10)
    g = reinforce_s2pg(traj, pol, per_sample=True)
    dump_gradients_csv(tmp_path / "g.csv", g, pol.store)
    lines = (tmp_path / "g.csv").read_text().splitlines()
    assert lines[0] == "f_s[0],eta_s[0],log_sigma_a[0],log_sigma_z[0]"
    assert len(lines) == 11


# ---------------------------------------------------------------- oracles


def test_chain_returns_deterministic_example():
    # one rollout, no noise: s1 = s0 (1 + f_s) = 2, s2 = s1 + f_s s1 + f_z z1 with z1 = eta_s s0
    J = chain_returns({"f_s": 1.0, "f_z": 1.0, "eta_s": 1.0}, 0.0, 0.0, 0.5, np.array([1.0]),
                      np.zeros((2, 1)), np.zeros((2, 1)))
    # s2 = 2 + 2 + 1 = 5; J = -(4) + 0.5 * -(25)
    assert J[0] == pytest.approx(-16.5)


def test_finite_difference_matches_one_step_formula():
    coeffs = {"f_s": 0.4, "f_z": 0.0, "eta_s": 0.0, "eta_z": 0.0}
    fd, se = finite_difference_gradient(coeffs, ["f_s"], 0.5, 0.3, 1, 0.9, n=400_000, seed=0)
    assert abs(fd[0] - one_step_gradient(coeffs, ["f_s"])[0]) < 4 * se[0] + 1e-9


# ------------------------------------------------------------------- GAE


def test_compute_gae_matches_pseudocode_on_trajectories():
    pol, traj, _ = _chain_setup({"f_s": 0.3}, 6, horizon=4)
    traj.absorbing[3, :3] = True  # first three end absorbing, rest truncated

    def value(x, z):
        return 0.7 * x[:, 0] - 0.2 * z[:, 0] + 0.1

    A, V = compute_gae(traj, value, lam=0.8)
    for i in range(6):
        x, nx = traj.obs[:, i], traj.next_obs[:, i]
        v = value(x, traj.z[:, i])
        vn = value(nx, traj.z_next[:, i])
        ref = gae_by_hand(traj.reward[:, i], v, vn, traj.absorbing[:, i], traj.last[:, i], traj.gamma, 0.8)
        np.testing.assert_array_equal(A[:, i], ref)
        np.testing.assert_allclose(V[:, i], ref + v, rtol=1e-15)


def test_compute_gae_special_cases():
    pol, traj, _ = _chain_setup({"f_s": 0.3}, 4, horizon=5)
    zero = lambda x, z: np.zeros(len(x))  # noqa: E731
    A, _ = compute_gae(traj, zero, gamma=1.0, lam=1.0)
    np.testing.assert_allclose(A, np.cumsum(traj.reward[::-1], axis=0)[::-1], rtol=1e-12)
    lin = lambda x, z: 2.0 * x[:, 0]  # noqa: E731
    A0, _ = compute_gae(traj, lin, lam=0.0)
    td = traj.reward + traj.gamma * 2.0 * traj.next_obs[..., 0] - 2.0 * traj.obs[..., 0]
    np.testing.assert_allclose(A0, td, rtol=1e-12)
    with pytest.raises(ValueError):
        compute_gae(traj, zero, lam=1.5)
