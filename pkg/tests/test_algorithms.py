import math

import numpy as np
import pytest

import s2pg_lab.diffcore as dc
from s2pg_lab.algorithms import (
    AlgoConfig,
    Critic,
    ReplayBuffer,
    SACStateful,
    StepSampler,
    TD3Stateful,
    make_ppo,
    ppo_bptt_update,
    ppo_rs_update,
    rollout,
    sac_rs_update,
    segment_advantages,
    td3_rs_update,
    temperature_loss,
    train_offpolicy,
    train_ppo,
)
from s2pg_lab.algorithms.common import METRIC_COLUMNS
from s2pg_lab.algorithms.rollout import policy_actor
from s2pg_lab.envs import ChainDiagnostic, PointMassMemory
from s2pg_lab.policies import NeuralMeans, StatefulGaussianPolicy
from test_kernels import gae_by_hand

SMALL = dict(policy_hidden=(16,), critic_hidden=(16,), d_z=3, batch_size=32, s_min=50, s_warm=0,
             n_envs=4, rollout_steps=16, epochs=2, minibatches=2, value_epochs=1, eval_episodes=4)

BUFFER_FIELDS = ("obs", "privileged", "z", "a", "z_next", "z_eps", "reward", "next_obs", "next_privileged",
                 "absorbing")


def _config(**kw):
    return AlgoConfig(**{**SMALL, **kw})


def _fill(agent, buffer, steps=60, horizon=25, seed=0):
    env = PointMassMemory(n=4, horizon=horizon)
    sampler = StepSampler(env, agent.d_z, seed=seed)
    for _ in range(steps):
        rec = sampler.step(agent.explore)
        buffer.add(rec["episode"], rec["step_index"], **{k: rec[k] for k in BUFFER_FIELDS})
    return env


def _agent(kind="td3", **kw):
    cfg = _config(**kw)
    cls = TD3Stateful if kind == "td3" else SACStateful
    return cls(PointMassMemory.obs_dim, PointMassMemory.state_dim, PointMassMemory.act_dim, cfg)


def _buffer(agent, refresh="on_sample", cap=64, capacity=10_000):
    return ReplayBuffer(capacity, PointMassMemory.obs_dim, PointMassMemory.state_dim, PointMassMemory.act_dim,
                        agent.d_z, refresh, cap)


def _batch(agent, n=32, seed=0):
    buf = _buffer(agent, refresh="off")
    _fill(agent, buf, steps=40, seed=seed)
    return buf.sample(n, np.random.default_rng(seed))


# ---------------------------------------------------------------- config


@pytest.mark.parametrize("bad", [dict(gamma=1.0), dict(gamma=0.0), dict(clip_eps=0.0), dict(policy_delay=0),
                                 dict(tau=0.0), dict(refresh="always"), dict(lam=1.5)])
def test_config_rejects_invalid_values(bad):
    with pytest.raises(ValueError):
        AlgoConfig(**bad)


def test_config_replace_revalidates():
    cfg = AlgoConfig()
    assert cfg.replace(gamma=0.9).gamma == 0.9
    with pytest.raises(ValueError):
        cfg.replace(gamma=2.0)


# ---------------------------------------------------------------- rollout


def _gauss_policy(obs_dim=1, act_dim=1, d_z=2, seed=0):
    return StatefulGaussianPolicy(NeuralMeans(obs_dim, act_dim, d_z, (8,)), seed=seed)


def test_rollout_horizon_one_starts_from_zero_state():
    traj = rollout(ChainDiagnostic(n=3, horizon=1), _gauss_policy(), steps=1, seed=0)
    assert traj.horizon == 1
    assert np.array_equal(traj.z[0], np.zeros((3, 2)))
    assert traj.last.all()


def test_rollout_is_reproducible_with_a_seed():
    a = rollout(PointMassMemory(n=2, horizon=10), _gauss_policy(6, 2, 3), steps=25, seed=4)
    b = rollout(PointMassMemory(n=2, horizon=10), _gauss_policy(6, 2, 3), steps=25, seed=4)
    for name in ("obs", "z", "a", "z_next", "reward"):
        assert np.array_equal(getattr(a, name), getattr(b, name))


def test_rollout_keeps_the_state_chain_across_episodes():
    traj = rollout(PointMassMemory(n=3, horizon=7), _gauss_policy(6, 2, 3), steps=30, seed=1)
    traj.validate(multi_episode=True)
    assert traj.last.sum() >= 3 * 4
    restart = traj.last[:-1]
    assert np.all(traj.z[1:][restart] == 0.0)
    inner = ~traj.last[:-1]
    assert np.array_equal(traj.z[1:][inner], traj.z_next[:-1][inner])


def test_rollout_deterministic_mode_uses_means():
    pol = _gauss_policy(6, 2, 3)
    traj = rollout(PointMassMemory(n=2, horizon=50), pol, steps=5, mode="deterministic_eval", seed=0)
    mu_a, mu_z = pol.act_mean(traj.obs[3], traj.z[3])
    assert np.array_equal(traj.a[3], mu_a)
    assert np.array_equal(traj.z_next[3], mu_z)


def test_rollout_rejects_dimension_mismatch():
    with pytest.raises(ValueError):
        rollout(PointMassMemory(n=1), _gauss_policy(obs_dim=3, act_dim=2), steps=2)
    with pytest.raises(ValueError):
        rollout(PointMassMemory(n=1), _gauss_policy(6, 2), steps=2, mode="greedy")


# ---------------------------------------------------------------- replay


def test_replay_is_fifo_and_bounded():
    buf = ReplayBuffer(4, 1, 1, 1, 1)
    for i in range(10):
        fields = {k: np.full((1, 1), float(i)) for k in BUFFER_FIELDS}
        fields["reward"], fields["absorbing"] = np.array([float(i)]), np.array([False])
        buf.add([0], [i], **fields)
    assert len(buf) == 4
    assert sorted(buf.data["reward"]) == [6.0, 7.0, 8.0, 9.0]
    with pytest.raises(ValueError):
        buf.add([0], [0], obs=np.zeros((1, 1)))


@pytest.mark.parametrize("kind", ["td3", "sac"])
def test_refresh_with_unchanged_policy_reproduces_stored_states(kind):
    agent = _agent(kind)
    buf = _buffer(agent)
    _fill(agent, buf, steps=80)
    idx = np.arange(len(buf))
    z, zn = buf.refreshed_states(idx, agent.next_state)
    assert np.array_equal(z, buf.data["z"][idx])
    assert np.array_equal(zn, buf.data["z_next"][idx])


def test_refresh_replays_the_episode_prefix_under_a_new_policy():
    agent = _agent("sac")
    buf = _buffer(agent, cap=5)
    _fill(agent, buf, steps=30, horizon=40)
    agent.policy.store.flat[:] += 0.05 * np.random.default_rng(0).standard_normal(agent.policy.store.size)
    idx = np.arange(len(buf))
    z, zn = buf.refreshed_states(idx, agent.next_state)
    for i in range(0, len(buf), 7):
        k = int(buf.step_index[i])
        e = buf.episode[i]
        slots = {int(buf.step_index[s]): s for s in np.flatnonzero(buf.episode == e)}
        start = max(0, k - 5)
        ref = buf.data["z"][slots[start]].copy()
        for j in range(start, k):
            s = slots[j]
            ref = agent.next_state(buf.data["obs"][s][None], ref[None], buf.data["z_eps"][s][None])[0]
        assert np.allclose(z[i], ref, rtol=0, atol=1e-12)
        ref_next = agent.next_state(buf.data["obs"][i][None], ref[None], buf.data["z_eps"][i][None])[0]
        assert np.allclose(zn[i], ref_next, rtol=0, atol=1e-12)
    assert not np.allclose(z, buf.data["z"][idx])


def test_refresh_off_returns_stored_states():
    agent = _agent("sac")
    buf = _buffer(agent, refresh="off")
    _fill(agent, buf, steps=20)
    agent.policy.store.flat[:] += 0.1
    batch = buf.sample(16, np.random.default_rng(0), agent.next_state)
    assert np.array_equal(batch["z"], buf.data["z"][batch["slot"]])


def test_refresh_survives_overwritten_prefixes():
    agent = _agent("sac")
    buf = _buffer(agent, capacity=37)
    _fill(agent, buf, steps=40, horizon=60)
    z, zn = buf.refreshed_states(np.arange(len(buf)), agent.next_state)
    assert np.array_equal(z, buf.data["z"]) and np.array_equal(zn, buf.data["z_next"])


# ---------------------------------------------------------------- TD3


def test_td3_absorbing_target_is_the_reward():
    agent = _agent("td3")
    batch = _batch(agent)
    batch["absorbing"][:] = True
    assert np.array_equal(agent.td_target(batch), batch["reward"])


def test_td3_noise_free_target_with_identical_twins():
    agent = _agent("td3", target_noise=0.0)
    tc = agent.target_critic.store
    for name in tc.names:
        if name.startswith("q1."):
            tc.flat[tc.slice_of(name)] = tc.flat[tc.slice_of("q0." + name[3:])]
    batch = _batch(agent)
    mu_a, mu_z = agent.target_policy.act(batch["next_obs"], batch["z_next"])
    q = agent.target_critic.values_np(batch["next_privileged"], batch["z_next"], mu_a, mu_z)[0]
    expected = batch["reward"] + agent.config.gamma * np.where(batch["absorbing"], 0.0, q)
    assert np.allclose(agent.td_target(batch), expected, rtol=0, atol=1e-12)


def test_td3_actor_gradient_splits_into_two_channels():
    agent = _agent("td3")
    agent.critic.store.flat[:] += 0.1 * np.random.default_rng(3).standard_normal(agent.critic.store.size)
    batch = _batch(agent)
    both = agent.actor_gradient(batch)
    only_a = agent.actor_gradient(batch, channels=("a",))
    only_z = agent.actor_gradient(batch, channels=("z",))
    assert np.allclose(both, only_a + only_z, rtol=1e-10, atol=1e-14)
    # the action channel reaches the action head only, the state channel reaches eta only
    eta = np.zeros(agent.policy.store.size, bool)
    for name in agent.policy.store.names:
        if name.startswith("eta"):
            eta[agent.policy.store.slice_of(name)] = True
    assert np.abs(only_a[eta]).max() == 0.0 and np.abs(only_z[eta]).max() > 0.0
    # total matches a central difference of the loss
    store = agent.policy.store
    rng = np.random.default_rng(0)
    for i in rng.choice(store.size, 6, replace=False):
        old = store.flat[i]
        vals = []
        for h in (1e-6, -1e-6):
            store.flat[i] = old + h
            vals.append(float(agent.actor_loss(batch)[0].data))
        store.flat[i] = old
        assert both[i] == pytest.approx((vals[0] - vals[1]) / 2e-6, rel=1e-4, abs=1e-8)


def test_td3_delays_policy_updates_and_polyaks_exactly():
    agent = _agent("td3", policy_delay=3, tau=0.01)
    buf = _buffer(agent)
    _fill(agent, buf)
    for it in range(1, 8):
        pol0 = agent.policy.store.flatten()
        tpol0, tcrit0 = agent.target_policy.store.flatten(), agent.target_critic.store.flatten()
        stats = td3_rs_update(buf, agent)
        changed = not np.array_equal(pol0, agent.policy.store.flatten())
        assert changed == (it % 3 == 0) == stats["actor_updated"]
        if it % 3 == 0:
            tau = agent.config.tau
            assert np.array_equal(agent.target_policy.store.flatten(),
                                  tau * agent.policy.store.flatten() + (1 - tau) * tpol0)
            assert np.array_equal(agent.target_critic.store.flatten(),
                                  tau * agent.critic.store.flatten() + (1 - tau) * tcrit0)
        else:
            assert np.array_equal(agent.target_policy.store.flatten(), tpol0)
            assert np.array_equal(agent.target_critic.store.flatten(), tcrit0)


@pytest.mark.parametrize("kind", ["td3", "sac"])
def test_underfull_buffer_is_a_no_op(kind):
    agent = _agent(kind, s_min=10_000)
    buf = _buffer(agent)
    _fill(agent, buf, steps=10)
    before = agent.policy.store.flatten(), agent.critic.store.flatten()
    update = td3_rs_update if kind == "td3" else sac_rs_update
    assert update(buf, agent) is None
    assert np.array_equal(before[0], agent.policy.store.flatten())
    assert np.array_equal(before[1], agent.critic.store.flatten())


# ---------------------------------------------------------------- SAC


def test_sac_without_entropy_matches_the_plain_target():
    agent = _agent("sac", alpha_a=1e-300, alpha_z=1e-300)
    batch = _batch(agent)
    target = agent.soft_target(batch, np.random.default_rng(5))
    a2, z2, _, _ = agent._sample_parts(batch["next_obs"], batch["z_next"], np.random.default_rng(5))
    q = agent.target_critic.values_np(batch["next_privileged"], batch["z_next"], a2, z2).min(axis=0)
    expected = batch["reward"] + agent.config.gamma * np.where(batch["absorbing"], 0.0, q)
    assert np.allclose(target, expected, rtol=0, atol=1e-12)
    batch["absorbing"][:] = True
    assert np.array_equal(agent.soft_target(batch), batch["reward"])


def test_sac_entropy_bonus_uses_both_temperatures():
    agent = _agent("sac", alpha_a=0.3, alpha_z=0.7)
    batch = _batch(agent)
    batch["absorbing"][:] = False
    target = agent.soft_target(batch, np.random.default_rng(1))
    a2, z2, lp_a, lp_z = agent._sample_parts(batch["next_obs"], batch["z_next"], np.random.default_rng(1))
    q = agent.target_critic.values_np(batch["next_privileged"], batch["z_next"], a2, z2).min(axis=0)
    expected = batch["reward"] + agent.config.gamma * (q - 0.3 * lp_a - 0.7 * lp_z)
    assert np.allclose(target, expected, rtol=1e-12, atol=1e-12)


def test_temperature_loss_is_stationary_at_the_target_entropy():
    logp = np.array([-2.0, 0.5, -0.5])
    _, grad = temperature_loss(math.log(0.3), logp, target_entropy=-logp.mean())
    assert grad == pytest.approx(0.0, abs=1e-15)
    # entropy below target (log pi too high) raises the temperature
    _, grad = temperature_loss(math.log(0.3), logp + 1.0, target_entropy=-logp.mean())
    assert grad < 0.0


def test_sac_polyaks_only_the_critics():
    agent = _agent("sac", tau=0.05)
    buf = _buffer(agent)
    _fill(agent, buf)
    t0 = agent.target_critic.store.flatten()
    stats = sac_rs_update(buf, agent)
    assert stats["actor_updated"]
    assert np.array_equal(agent.target_critic.store.flatten(), 0.05 * agent.critic.store.flatten() + 0.95 * t0)
    assert not hasattr(agent, "target_policy")


def test_sac_actor_loss_gradient_matches_finite_differences():
    agent = _agent("sac")
    batch = _batch(agent)
    loss, tape, _, _ = agent.actor_loss(batch, np.random.default_rng(2))
    grad = agent.policy.store.flatten_map(tape.backward(loss))
    store = agent.policy.store
    for i in np.random.default_rng(1).choice(store.size, 6, replace=False):
        old = store.flat[i]
        vals = []
        for h in (1e-6, -1e-6):
            store.flat[i] = old + h
            vals.append(float(agent.actor_loss(batch, np.random.default_rng(2))[0].data))
        store.flat[i] = old
        assert grad[i] == pytest.approx((vals[0] - vals[1]) / 2e-6, rel=1e-4, abs=1e-8)


def test_sac_entropy_settles_at_the_target_on_the_chain():
    cfg = _config(d_z=0, n_envs=8, s_min=256, s_warm=256, batch_size=128, lr_alpha=3e-3, lr_actor=1e-3,
                  lr_critic=1e-3, total_steps=48_000, eval_every=10**9, gamma=0.9, target_entropy_a=-1.0)
    res = train_offpolicy(lambda n: ChainDiagnostic(n=n, horizon=3, clip=1.0), cfg, algo="sac")
    policy = res.agent.policy
    rng = np.random.default_rng(0)
    obs = rng.normal(size=(20_000, 1))
    a, _, logp = policy.sample(obs, np.zeros((20_000, 0)), rng)
    entropy = -logp.mean()
    assert abs(entropy - (-1.0)) < 0.1


# ---------------------------------------------------------------- wiring


def test_off_policy_critics_refuse_observation_input():
    with pytest.raises(ValueError):
        _agent("sac", privileged_critic=False)
    with pytest.raises(ValueError):
        Critic(3, 2, 1, input_mode="both")


@pytest.mark.parametrize("kind", ["td3", "sac"])
def test_off_policy_wiring_never_mixes_inputs(kind):
    # privileged critic with a privileged-input policy never touches obs
    agent = _agent(kind, policy_input="privileged")
    batch = _batch(agent)
    batch["obs"][:] = np.nan
    batch["next_obs"][:] = np.nan
    stats = agent.update(batch)
    assert np.isfinite(stats["critic_loss"]) and np.isfinite(agent.policy.store.flatten()).all()
    # an observation policy never touches the privileged state
    agent = _agent(kind)
    batch = _batch(agent)
    batch["privileged"][:] = np.nan
    batch["next_privileged"][:] = np.nan
    mu_a, _ = agent.policy.mean_np(agent.x(batch), batch["z"])
    assert np.isfinite(mu_a).all()
    assert np.isfinite(agent.next_state(agent.x(batch), batch["z"], batch["z_eps"])).all()


def test_critics_with_distinct_input_widths():
    cfg = _config()
    agent = SACStateful(2, 5, 1, cfg)
    rng = np.random.default_rng(0)
    B = 8
    batch = {"obs": rng.normal(size=(B, 2)), "next_obs": rng.normal(size=(B, 2)),
             "privileged": rng.normal(size=(B, 5)), "next_privileged": rng.normal(size=(B, 5)),
             "z": rng.normal(size=(B, 3)), "z_next": rng.normal(size=(B, 3)), "a": rng.normal(size=(B, 1)),
             "reward": rng.normal(size=B), "absorbing": np.zeros(B, bool)}
    assert np.isfinite(agent.update(batch)["critic_loss"])
    swapped = dict(batch, privileged=batch["obs"])
    with pytest.raises(ValueError):
        agent.update(swapped)


# ---------------------------------------------------------------- PPO


def _ppo_data(kind="s2pg", seed=0, **kw):
    cfg = _config(**kw)
    env = PointMassMemory(n=cfg.n_envs, horizon=12)
    policy, critic, opts = make_ppo(env.obs_dim, env.state_dim, env.act_dim, cfg, kind)
    sampler = StepSampler(env, policy.d_z, seed=seed)
    data = sampler.segment(policy_actor(policy), 30)
    return cfg, policy, critic, opts, data


def test_ppo_ratio_is_one_at_the_snapshot():
    cfg, policy, critic, opts, data = _ppo_data()
    stats = ppo_rs_update(data, policy, critic, cfg, opts)
    assert stats["snapshot_ratio_dev"] < 1e-6
    assert stats["skipped"] == 0


def test_ppo_bptt_ratio_is_one_at_the_snapshot():
    cfg, policy, critic, opts, data = _ppo_data("bptt", truncation=4)
    assert data["last"][:-1].any()  # episodes restart inside the segment
    stats = ppo_bptt_update(data, policy, critic, cfg, opts)
    assert stats["snapshot_ratio_dev"] < 1e-6
    assert np.isfinite(stats["grad_variance_probe"])


def _surrogate(policy, x, z, a, zn, logp_old, adv, eps):
    tape = dc.Tape()
    p = policy.watch(tape)
    lp = policy.log_prob(x, z, a, zn, p)
    ratio = dc.exp(dc.sub(lp, logp_old))
    surr = dc.mean(dc.minimum(dc.mul(ratio, adv), dc.mul(dc.clip(ratio, 1 - eps, 1 + eps), adv)))
    return surr, policy.store.flatten_map(tape.backward(surr))


def test_ppo_surrogate_identities_at_the_snapshot():
    cfg, policy, critic, opts, data = _ppo_data()
    x, z, a, zn = (data[k].reshape(-1, data[k].shape[-1]) for k in ("obs", "z", "a", "z_next"))
    # snapshot density from the same code path, so the ratio is exactly one
    logp = policy.log_prob(x, z, a, zn).data
    assert np.allclose(logp, data["logp"].reshape(-1), rtol=1e-12)
    adv = np.random.default_rng(0).normal(size=logp.shape)
    surr, _ = _surrogate(policy, x, z, a, zn, logp, adv, 0.2)
    assert float(surr.data) == pytest.approx(adv.mean(), rel=1e-12)
    _, g0 = _surrogate(policy, x, z, a, zn, logp, adv, 0.0)
    assert np.abs(g0).max() == 0.0
    # one transition with advantage 1: gradient of the surrogate is grad log pi
    _, g1 = _surrogate(policy, x[:1], z[:1], a[:1], zn[:1], logp[:1], np.ones(1), 0.2)
    tape = dc.Tape()
    lp = policy.log_prob(x[:1], z[:1], a[:1], zn[:1], policy.watch(tape))
    ref = policy.store.flatten_map(tape.backward(dc.sum(lp)))
    assert np.allclose(g1, ref, rtol=1e-12, atol=1e-15)


def test_ppo_skips_non_finite_ratios(caplog):
    cfg, policy, critic, opts, data = _ppo_data()
    data["logp"][3, 1] = -np.inf
    stats = ppo_rs_update(data, policy, critic, cfg, opts)
    assert stats["skipped"] == cfg.epochs
    assert np.isfinite(policy.store.flatten()).all()
    assert "non-finite" in caplog.text


def test_ppo_advantages_follow_the_recursion_per_column():
    cfg, policy, critic, opts, data = _ppo_data()
    adv, targets = segment_advantages(data, critic, cfg)
    T, n = data["reward"].shape
    for i in range(n):
        v = critic.values_np(data["privileged"][:, i], data["z"][:, i])[0]
        vn = critic.values_np(data["next_privileged"][:, i], data["z_next"][:, i])[0]
        last = data["last"][:, i].copy()
        last[-1] = True
        ref = gae_by_hand(data["reward"][:, i], v, vn, data["absorbing"][:, i], last, cfg.gamma, cfg.lam)
        assert np.allclose(adv[i * T:(i + 1) * T], ref, rtol=1e-12, atol=1e-12)
        assert np.allclose(targets[i * T:(i + 1) * T], ref + v, rtol=1e-12, atol=1e-12)


def test_ppo_value_critic_wiring():
    cfg, policy, critic, opts, data = _ppo_data(privileged_critic=False)
    assert critic.input_mode == "observation"
    data["privileged"][:] = np.nan
    data["next_privileged"][:] = np.nan
    stats = ppo_rs_update(data, policy, critic, cfg, opts)
    assert np.isfinite(stats["value_loss"])
    cfg, policy, critic, opts, data = _ppo_data(policy_input="privileged", d_z=0)
    data["obs"][:] = np.nan
    data["next_obs"][:] = np.nan
    with pytest.raises(ValueError):
        # the privileged-input policy cannot have been sampled from obs-sized inputs
        make_ppo(6, 6, 2, cfg.replace(d_z=0), kind="bptt")
    stats = ppo_rs_update(data, policy, critic, cfg, opts)
    assert np.isfinite(stats["value_loss"]) and np.isfinite(policy.store.flatten()).all()


# ---------------------------------------------------------------- training loops


@pytest.mark.parametrize("kind", ["s2pg", "bptt"])
def test_train_ppo_writes_metrics(tmp_path, kind):
    cfg = _config(total_steps=400, eval_every=200, truncation=3)
    path = tmp_path / "metrics.csv"
    res = train_ppo(lambda n: PointMassMemory(n=n, horizon=20), cfg, kind=kind, metrics_path=path)
    lines = path.read_text().strip().splitlines()
    assert lines[0].split(",") == list(METRIC_COLUMNS)
    assert len(lines) == 1 + len(res.log.rows) >= 2
    assert res.log.column("step")[-1] >= 400
    assert 0.0 <= res.final["success_rate"] <= 1.0


@pytest.mark.parametrize("algo", ["td3", "sac"])
def test_train_offpolicy_smoke(tmp_path, algo):
    cfg = _config(total_steps=240, eval_every=120)
    res = train_offpolicy(lambda n: PointMassMemory(n=n, horizon=20), cfg, algo=algo,
                          metrics_path=tmp_path / "m.csv")
    assert len(res.log.rows) == 2
    assert np.isfinite(res.log.column("mean_return")).all()
