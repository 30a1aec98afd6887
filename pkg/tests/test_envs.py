import math

import numpy as np
import numpy.testing as npt
import pytest

from exoppo import envs
from exoppo.envs import EnvPool, EnvSpec
from exoppo.errors import ConfigurationError, InputError


def hand_cartpole(state, action):
    # gravity 9.8, cart 1.0, pole 0.1, half-length 0.5, force 10, tau 0.02
    x, xd, th, thd = state
    f = 10.0 if action == 1 else -10.0
    tmp = (f + 0.05 * thd**2 * math.sin(th)) / 1.1
    tha = (9.8 * math.sin(th) - math.cos(th) * tmp) / (0.5 * (4 / 3 - 0.1 * math.cos(th) ** 2 / 1.1))
    xa = tmp - 0.05 * tha * math.cos(th) / 1.1
    return [x + 0.02 * xd, xd + 0.02 * xa, th + 0.02 * thd, thd + 0.02 * tha]


class TestSpec:
    def test_defaults(self):
        assert EnvSpec("cartbalance").max_episode_steps == 200
        spec = EnvSpec("pendulum")
        assert not spec.discrete and spec.obs_dim == 3 and spec.action_bounds == (-2.0, 2.0)
        assert EnvSpec("gridworld", grid_size=4).obs_dim == 16

    def test_invalid(self):
        with pytest.raises(ConfigurationError):
            EnvSpec("atari")
        with pytest.raises(ConfigurationError):
            EnvSpec("cartbalance", max_episode_steps=0)


class TestReset:
    @pytest.mark.parametrize("env_id", envs.ENV_IDS)
    def test_same_seed_same_obs(self, env_id):
        a = envs.reset(envs.make_env(env_id), seed=5)
        b = envs.reset(envs.make_env(env_id), seed=5)
        npt.assert_array_equal(a, b)

    def test_gridworld_start(self):
        obs = envs.reset(envs.make_env("gridworld"), seed=1)
        assert obs[0] == 1.0 and obs.sum() == 1.0

    def test_cartbalance_replays_rng(self):
        obs = envs.reset(envs.make_env("cartbalance"), seed=11)
        npt.assert_array_equal(obs, np.random.default_rng(11).uniform(-0.05, 0.05, size=4))


class TestStep:
    def test_gridworld_goal(self):
        env = envs.make_env("gridworld")
        env.reset()
        for a in [2, 2, 2, 2, 1, 1, 1]:
            res = envs.step(env, a)
            assert res.reward == pytest.approx(-0.01) and not res.done
        res = envs.step(env, 1)
        assert res.reward == 1.0 and res.terminated

    def test_gridworld_wall(self):
        env = envs.make_env("gridworld")
        env.reset()
        res = envs.step(env, 0)
        assert res.next_obs[0] == 1.0

    def test_pendulum_upright_rest(self):
        env = envs.make_env("pendulum")
        env.reset()
        env.theta, env.theta_dot = 0.0, 0.0
        res = envs.step(env, np.array([0.0]))
        assert res.reward == 0.0
        npt.assert_array_equal(res.next_obs, [1.0, 0.0, 0.0])

    def test_pendulum_clamps_torque(self):
        a, b = envs.make_env("pendulum"), envs.make_env("pendulum")
        a.reset(seed=3)
        b.reset(seed=3)
        npt.assert_array_equal(a.step(np.array([50.0])).next_obs, b.step(np.array([2.0])).next_obs)

    def test_cartbalance_hand_integration(self):
        env = envs.make_env("cartbalance")
        state = list(env.reset(seed=2))
        for a in [1, 1, 0, 1, 0, 0, 0, 1, 1, 1]:
            state = hand_cartpole(state, a)
            res = envs.step(env, a)
            npt.assert_allclose(res.next_obs, state, rtol=0, atol=1e-14)
            assert res.reward == 1.0

    def test_cartbalance_terminates(self):
        env = envs.make_env("cartbalance")
        env.reset(seed=0)
        for t in range(200):
            res = env.step(1)
            if res.terminated:
                break
        assert res.terminated and not res.truncated
        assert abs(res.next_obs[0]) > 2.4 or abs(res.next_obs[2]) > 12 * math.pi / 180

    @pytest.mark.parametrize("action", [2, -1, 0.5, np.array([0, 1])])
    def test_bad_discrete_action(self, action):
        env = envs.make_env("cartbalance")
        env.reset()
        with pytest.raises(InputError):
            env.step(action)

    def test_truncation_exactly_at_cap(self):
        env = envs.make_env(EnvSpec("pendulum", max_episode_steps=7))
        env.reset(seed=0)
        flags = [env.step(np.zeros(1)).truncated for _ in range(7)]
        assert flags == [False] * 6 + [True]
        with pytest.raises(InputError):
            env.step(np.zeros(1))

    def test_reward_scale(self):
        env = envs.make_env(EnvSpec("cartbalance", reward_scale=0.5))
        env.reset()
        assert env.step(0).reward == 0.5

    def test_finite_under_long_bounded_actions(self):
        env = envs.make_env("pendulum")
        rng = np.random.default_rng(0)
        env.reset(seed=0)
        for _ in range(10 * 200):
            res = env.step(rng.uniform(-2, 2, size=1))
            assert np.all(np.isfinite(res.next_obs))
            if res.done:
                env.reset()


class TestPool:
    def test_single_env_matches_step(self):
        pool = EnvPool(EnvSpec("cartbalance"), 1, seed=4)
        env = envs.make_env("cartbalance", seed=4)
        npt.assert_array_equal(pool.obs[0], env.reset())
        for a in [0, 1, 1, 0]:
            npt.assert_array_equal(envs.pool_step(pool, [a])[0].next_obs, env.step(a).next_obs)

    def test_determinism(self):
        a = EnvPool(EnvSpec("pendulum"), 3, seed=9)
        b = EnvPool(EnvSpec("pendulum"), 3, seed=9)
        rng = np.random.default_rng(0)
        for _ in range(50):
            acts = rng.uniform(-2, 2, size=(3, 1))
            for ra, rb in zip(a.step(acts), b.step(acts)):
                assert ra.next_obs.tobytes() == rb.next_obs.tobytes() and ra.reward == rb.reward

    def test_per_env_streams_independent_of_pool_size(self):
        small = EnvPool(EnvSpec("cartbalance"), 2, seed=0)
        large = EnvPool(EnvSpec("cartbalance"), 5, seed=0)
        npt.assert_array_equal(small.obs, large.obs[:2])

    def test_auto_reset_one_slot(self):
        pool = EnvPool(EnvSpec("gridworld"), 4, seed=0)
        # slot 0 walks to the goal, the others bump into the top wall
        script = [2, 2, 2, 2, 1, 1, 1, 1]
        for t, a in enumerate(script):
            res = pool.step([a, 0, 0, 0])
        assert res[0].terminated and res[0].reset_obs is not None
        npt.assert_array_equal(res[0].next_obs, np.eye(25)[24])
        npt.assert_array_equal(pool.obs[0], np.eye(25)[0])
        assert pool.step_counts == [0, 8, 8, 8]
        assert all(r.reset_obs is None for r in res[1:])
        assert pool.finished_returns == [pytest.approx(1.0 - 7 * 0.01)]

    def test_length_mismatch(self):
        pool = EnvPool(EnvSpec("cartbalance"), 2)
        with pytest.raises(InputError):
            pool.step([0])

    def test_episode_length_capped(self):
        pool = EnvPool(EnvSpec("pendulum", max_episode_steps=5), 2, seed=0)
        for _ in range(23):
            pool.step(np.zeros((2, 1)))
            assert max(pool.step_counts) <= 5
        assert pool.total_steps == 46
