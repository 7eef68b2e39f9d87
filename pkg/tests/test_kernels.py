import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from s2pg_lab import kernels
from s2pg_lab._accel import USE_NUMBA


def _flat_dataset(rng, n, p_last=0.2, p_abs=0.5):
    rewards = rng.normal(size=n)
    values = rng.normal(size=n)
    next_values = rng.normal(size=n)
    last = rng.random(n) < p_last
    last[-1] = True
    absorbing = last & (rng.random(n) < p_abs)
    return rewards, values, next_values, absorbing, last


def gae_by_hand(rewards, values, next_values, absorbing, last, gamma, lam):
    """Line-by-line transcription of the reverse advantage recursion."""
    n = len(rewards)
    adv = [0.0] * n
    for k in reversed(range(n)):
        r, v, v_next = rewards[k], values[k], next_values[k]
        if last[k]:
            if absorbing[k]:
                adv[k] = r - v
            else:
                adv[k] = r + gamma * v_next - v
        else:
            delta = adv[k + 1]
            adv[k] = r + gamma * v_next - v + gamma * lam * delta
    return np.array(adv)


def test_gae_matches_pseudocode_bitwise():
    rng = np.random.default_rng(0)
    data = _flat_dataset(rng, 257)
    ours = kernels.gae(*data, 0.97, 0.9)
    ref = gae_by_hand(*data, 0.97, 0.9)
    assert np.array_equal(ours, ref)


def test_gae_four_step_linear_value():
    # V(s) = 0.5 s on states 0..3, episode truncated (not absorbing) at the end
    states = np.arange(5.0)
    rewards = np.array([1.0, -1.0, 2.0, 0.5])
    values = 0.5 * states[:4]
    next_values = 0.5 * states[1:]
    last = np.array([False, False, False, True])
    absorbing = np.zeros(4, bool)
    g, lam = 0.9, 0.8
    a3 = 0.5 + g * 2.0 - 1.5
    a2 = 2.0 + g * 1.5 - 1.0 + g * lam * a3
    a1 = -1.0 + g * 1.0 - 0.5 + g * lam * a2
    a0 = 1.0 + g * 0.5 - 0.0 + g * lam * a1
    np.testing.assert_allclose(kernels.gae(rewards, values, next_values, absorbing, last, g, lam),
                               [a0, a1, a2, a3], rtol=1e-14)


def test_gae_lambda_zero_is_td_residual():
    rng = np.random.default_rng(1)
    r, v, vn, ab, last = _flat_dataset(rng, 100)
    adv = kernels.gae(r, v, vn, ab, last, 0.99, 0.0)
    np.testing.assert_allclose(adv, r + 0.99 * np.where(ab, 0.0, vn) - v, rtol=1e-14)


def test_gae_lambda_one_zero_value_is_reward_to_go():
    rng = np.random.default_rng(2)
    r, _, _, ab, last = _flat_dataset(rng, 100)
    z = np.zeros(100)
    np.testing.assert_allclose(kernels.gae(r, z, z, ab, last, 1.0, 1.0),
                               kernels.reward_to_go(r, last, 1.0), rtol=1e-12, atol=1e-12)


def test_reward_to_go_and_returns_examples():
    r = np.array([1.0, 1.0, 1.0, 2.0, 2.0])
    last = np.array([False, False, True, False, True])
    np.testing.assert_allclose(kernels.reward_to_go(r, last, 0.5), [1.75, 1.5, 1.0, 3.0, 2.0])
    np.testing.assert_allclose(kernels.episode_returns(r, last, 0.5), [1.75, 3.0])
    # gamma = 0 keeps only the immediate reward
    np.testing.assert_allclose(kernels.reward_to_go(r, last, 0.0), r)


@pytest.mark.parametrize("name", sorted(kernels.KERNELS))
def test_numba_and_numpy_agree(name):
    fast, slow = kernels.KERNELS[name]
    rng = np.random.default_rng(3)
    if name == "gae":
        args = (*_flat_dataset(rng, 500), 0.99, 0.95)
    elif name in ("reward_to_go", "episode_returns"):
        r, _, _, _, last = _flat_dataset(rng, 500)
        args = (r, last, 0.97)
    elif name == "point_mass_integrate":
        args = (rng.uniform(-1, 1, (300, 2)), rng.uniform(-1, 1, (300, 2)),
                rng.normal(0, 2, (300, 2)), 0.05, 0.95, 1.0)
    elif name == "wall_contact":
        pos = rng.uniform(-0.1, 0.1, (300, 2))
        new = pos + rng.normal(0, 0.05, (300, 2))
        args = (pos, new, rng.uniform(-0.9, 0.9, (300, 2)), 0.1)
    else:
        args = (rng.uniform(-4, 4, 300), rng.uniform(-8, 8, 300), rng.uniform(-2, 2, 300),
                0.05, 9.81, 1.0, 1.0, 8.0)
    a, b = fast(*args), slow(*args)
    for x, y in zip(a if isinstance(a, tuple) else (a,), b if isinstance(b, tuple) else (b,)):
        np.testing.assert_allclose(x, y, rtol=1e-12, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 60), st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.integers(0, 2 ** 31))
def test_gae_twins_agree_property(n, gamma, lam, seed):
    data = _flat_dataset(np.random.default_rng(seed), n)
    fast, slow = kernels.KERNELS["gae"]
    np.testing.assert_allclose(fast(*data, gamma, lam), slow(*data, gamma, lam), rtol=1e-12, atol=1e-12)


def test_point_mass_rest_is_fixed_point():
    pos = np.array([[0.3, -0.2]])
    p, v = kernels.point_mass_integrate(pos, np.zeros((1, 2)), np.zeros((1, 2)), 0.05, 0.95)
    np.testing.assert_array_equal(p, pos)
    np.testing.assert_array_equal(v, 0.0)


def test_point_mass_wall_stops_velocity():
    p, v = kernels.point_mass_integrate(np.array([[0.999, 0.0]]), np.array([[1.0, 0.0]]),
                                        np.array([[5.0, 0.0]]), 0.05, 0.95)
    assert p[0, 0] == 1.0 and v[0, 0] == 0.0


def test_wall_contact_door_and_wall():
    pos = np.array([[0.0, -0.01], [0.5, -0.01], [0.5, 0.2]])
    new = np.array([[0.0, 0.01], [0.5, 0.01], [0.5, 0.3]])
    doors = np.array([[0.0, -0.6]] * 3)
    np.testing.assert_array_equal(kernels.wall_contact(pos, new, doors, 0.1), [False, True, False])


def test_pendulum_hanging_rest_is_fixed_point():
    th, w, r = kernels.pendulum_step(np.array([np.pi]), np.zeros(1), np.zeros(1), 0.05, 9.81, 1.0, 1.0, 8.0)
    assert abs(w[0]) < 1e-12 and abs(th[0] - np.pi) < 1e-12
    assert r[0] == pytest.approx(-np.pi ** 2)


def test_flag_reflects_environment():
    import os
    expected = os.environ.get("S2PG_LAB_NUMBA", "1").lower() not in {"0", "false", "off", "no"}
    assert USE_NUMBA == expected
