import math

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from exoppo import diffcore
from exoppo import policy as pol
from exoppo.diffcore import ParamVector
from exoppo.errors import ConfigurationError, InputError
from exoppo.policy import DistParams, PolicyModel


def small_policy(kind, seed=0, obs_dim=3, n_act=3, gain=1.0):
    rng = np.random.default_rng(seed)
    p = PolicyModel.build(kind, obs_dim, n_act, rng, (5,), "tanh", init_std=0.7)
    p.params.values[:] = gain * rng.standard_normal(len(p.params))
    return p


def fd(f, x, h=1e-5):
    out = np.empty_like(x)
    for k in range(x.size):
        a, b = x.copy(), x.copy()
        a[k] += h
        b[k] -= h
        out[k] = (f(a) - f(b)) / (2 * h)
    return out


def rel_err(a, b):
    # the floor absorbs finite-difference round-off on components whose true value is 0
    return np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-4))


class TestDistParams:
    def test_floor_keeps_sum(self):
        d = DistParams.categorical([1.0, 0.0, 0.0])
        assert d.probs.min() >= 1e-12
        assert abs(d.probs.sum() - 1.0) <= 1e-9

    def test_gaussian_std_positive(self):
        with pytest.raises(InputError):
            DistParams.gaussian([0.0], [0.0])

    def test_array_round_trip(self):
        d = DistParams.gaussian(np.ones((4, 2)), np.full((4, 2), 0.5))
        back = DistParams.from_array("gaussian", d.to_array())
        npt.assert_array_equal(back.mean, d.mean)
        npt.assert_array_equal(back.std, d.std)
        assert d.width() == 4


class TestLogProb:
    def test_uniform_categorical(self):
        d = DistParams.categorical(np.full(4, 0.25))
        assert pol.log_prob(d, 2) == pytest.approx(-1.3862943611198906, abs=1e-12)

    def test_standard_normal_mode(self):
        d = DistParams.gaussian([0.0], [1.0])
        assert pol.log_prob(d, np.array([0.0])) == pytest.approx(-0.9189385332046727, abs=1e-15)

    def test_gaussian_formula(self):
        d = DistParams.gaussian([1.0], [0.5])
        expected = -0.5 * ((0.3 - 1.0) / 0.5) ** 2 - math.log(0.5) - 0.5 * math.log(2 * math.pi)
        assert pol.log_prob(d, np.array([0.3])) == pytest.approx(expected, abs=1e-14)

    @pytest.mark.parametrize("action", [-1, 4, 1.5, "a"])
    def test_bad_discrete_action(self, action):
        with pytest.raises(InputError):
            pol.log_prob(DistParams.categorical(np.full(4, 0.25)), action)


class TestKL:
    def test_identical_is_zero(self):
        d = DistParams.categorical([0.2, 0.3, 0.5])
        assert pol.kl(d, d) == 0.0

    def test_categorical_value(self):
        got = pol.kl(DistParams.categorical([0.5, 0.5]), DistParams.categorical([0.25, 0.75]))
        assert got == pytest.approx(0.5 * math.log(2) + 0.5 * math.log(2 / 3), abs=1e-10)

    def test_gaussian_mean_shift(self):
        assert pol.kl(DistParams.gaussian([0.0], [1.0]), DistParams.gaussian([1.0], [1.0])) == pytest.approx(0.5)

    def test_gaussian_against_monte_carlo_free_formula(self):
        # KL(N(m1,s1)||N(m2,s2)) = ln(s2/s1) + (s1^2 + (m1-m2)^2)/(2 s2^2) - 1/2
        m1, s1, m2, s2 = 0.3, 0.7, -0.4, 1.3
        expected = math.log(s2 / s1) + (s1**2 + (m1 - m2) ** 2) / (2 * s2**2) - 0.5
        assert pol.kl(DistParams.gaussian([m1], [s1]), DistParams.gaussian([m2], [s2])) == pytest.approx(expected, abs=1e-14)

    def test_variant_mismatch(self):
        with pytest.raises(InputError):
            pol.kl(DistParams.categorical([0.5, 0.5]), DistParams.gaussian([0.0], [1.0]))

    def test_non_negative_random_pairs(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            k = int(rng.integers(2, 6))
            p = DistParams.categorical(rng.dirichlet(np.ones(k)))
            q = DistParams.categorical(rng.dirichlet(np.ones(k)))
            assert pol.kl(p, q) >= 0.0
            g1 = DistParams.gaussian(rng.normal(size=2), rng.uniform(0.1, 2, size=2))
            g2 = DistParams.gaussian(rng.normal(size=2), rng.uniform(0.1, 2, size=2))
            assert pol.kl(g1, g2) >= 0.0
            assert abs(pol.kl(g1, g1)) <= 1e-9


class TestSample:
    def test_degenerate_categorical(self):
        rng = np.random.default_rng(0)
        d = DistParams.categorical(np.tile([1.0, 0.0, 0.0], (10_000, 1)))
        assert np.mean(pol.sample(d, rng) == 0) >= 0.999

    def test_fair_coin(self):
        rng = np.random.default_rng(1)
        d = DistParams.categorical(np.tile([0.5, 0.5], (10_000, 1)))
        assert abs(np.mean(pol.sample(d, rng) == 0) - 0.5) <= 0.02

    def test_tiny_std(self):
        d = DistParams.gaussian([0.4, -1.0], [1e-8, 1e-8])
        npt.assert_allclose(pol.sample(d, np.random.default_rng(0)), [0.4, -1.0], atol=1e-6)

    def test_range(self):
        d = DistParams.categorical(np.full((500, 3), 1 / 3))
        a = pol.sample(d, np.random.default_rng(2))
        assert a.min() >= 0 and a.max() < 3


class TestPolicyModel:
    def test_kind_transform_consistency(self):
        spec = diffcore.MlpSpec(2, (3,), 2, output_transform="identity")
        with pytest.raises(ConfigurationError):
            PolicyModel(spec, ParamVector.zeros(spec), "categorical")

    def test_zero_weights_uniform(self):
        p = small_policy("categorical")
        p.params.values[:] = 0
        npt.assert_allclose(pol.dist_at(p, np.ones(3)).probs, np.full(3, 1 / 3))

    def test_zero_weights_gaussian(self):
        p = small_policy("gaussian", n_act=2)
        p.params.values[:] = 0
        d = pol.dist_at(p, np.ones(3))
        npt.assert_array_equal(d.mean, 0.0)
        npt.assert_allclose(d.std, 0.7)

    def test_hand_softmax(self):
        p = small_policy("categorical")
        s = np.array([0.2, -0.4, 1.0])
        (w0, b0), (w1, b1) = p.params.layers()
        z = w1 @ np.tanh(w0 @ s + b0) + b1
        e = np.exp(z - z.max())
        expected = e / e.sum()
        npt.assert_allclose(pol.dist_at(p, s).probs, 1e-12 + (1 - 3e-12) * expected, atol=1e-15)

    def test_state_dimension_mismatch(self):
        with pytest.raises(ConfigurationError):
            pol.dist_at(small_policy("categorical"), np.ones(4))

    def test_flat_round_trip(self):
        p = small_policy("gaussian", n_act=2)
        q = p.copy()
        q.set_flat(p.flat() + 1.0)
        npt.assert_allclose(q.log_std, p.log_std + 1.0)
        with pytest.raises(ConfigurationError):
            q.set_flat(np.zeros(3))


class TestRatio:
    def test_on_policy_is_one(self):
        p = small_policy("categorical")
        s = np.array([0.1, 0.2, 0.3])
        assert pol.ratio(p, pol.dist_at(p, s), s, 1).r == pytest.approx(1.0, abs=1e-15)

    def test_hand_ratio(self):
        spec = diffcore.MlpSpec(1, (1,), 2, output_transform="softmax")
        params = ParamVector.zeros(spec)
        # logits (0, ln 1.5) -> p = (0.4, 0.6)
        params.layers()[1][1][:] = [0.0, math.log(1.5)]
        p = PolicyModel(spec, params, "categorical")
        res = pol.ratio(p, DistParams.categorical([0.7, 0.3]), np.zeros(1), 1)
        assert res.r == pytest.approx(2.0, abs=1e-10)

    def test_matches_log_prob_difference(self):
        rng = np.random.default_rng(3)
        for seed in range(20):
            p = small_policy("categorical", seed)
            s = rng.standard_normal(3)
            ref = DistParams.categorical(rng.dirichlet(np.ones(3)))
            a = int(rng.integers(3))
            expected = math.exp(pol.log_prob(pol.dist_at(p, s), a) - pol.log_prob(ref, a))
            assert abs(pol.ratio(p, ref, s, a).r - expected) <= 1e-12 * expected

    def test_multiplicative_consistency(self):
        rng = np.random.default_rng(4)
        for seed in range(20):
            p, q = small_policy("categorical", seed), small_policy("categorical", seed + 100)
            s = rng.standard_normal(3)
            a = int(rng.integers(3))
            forward = pol.ratio(p, pol.dist_at(q, s), s, a).r
            backward = pol.ratio(q, pol.dist_at(p, s), s, a).r
            assert abs(forward * backward - 1.0) <= 1e-9

    def test_floored_reference_flagged(self):
        p = small_policy("categorical")
        ref = DistParams("categorical", probs=np.array([1.0, 0.0, 0.0]))
        res = pol.ratio(p, ref, np.zeros(3), 1)
        assert res.ref_floored and np.isfinite(res.r)

    @pytest.mark.parametrize("kind", ["categorical", "gaussian"])
    def test_gradient_at_on_policy_point(self, kind):
        p = small_policy(kind, 5, n_act=2)
        s = np.array([0.3, -0.1, 0.8])
        ref = pol.dist_at(p, s)
        a = 1 if kind == "categorical" else np.array([0.2, -0.3])
        res = pol.ratio(p, ref, s, a)

        def logp(theta):
            q = p.copy()
            q.set_flat(theta)
            return pol.log_prob(pol.dist_at(q, s), a)

        assert rel_err(res.grad, fd(logp, p.flat())) <= 1e-5

    def test_gaussian_log_std_gradient(self):
        p = small_policy("gaussian", 6, n_act=2)
        obs = np.array([[0.3, -0.1, 0.8]])
        a = np.array([[0.5, -1.2]])
        ev = pol.evaluate(p, obs)
        grad = pol.policy_vjp(p, ev, a, np.ones(1))
        n = len(p.params)

        def logp(log_std):
            q = p.copy()
            q.log_std = log_std
            return pol.log_prob(pol.dist_at(q, obs), a)[0]

        assert rel_err(grad[n:], fd(logp, p.log_std.copy())) <= 1e-5

    @pytest.mark.parametrize("kind", ["categorical", "gaussian"])
    def test_kl_gradient(self, kind):
        p = small_policy(kind, 7, n_act=3)
        obs = np.random.default_rng(0).standard_normal((4, 3))
        ref = pol.dist_at(small_policy(kind, 8, n_act=3), obs)
        a = np.zeros(4, dtype=np.int64) if kind == "categorical" else np.zeros((4, 3))
        grad = pol.policy_vjp(p, pol.evaluate(p, obs), a, np.zeros(4), ref, 1.0)

        def total_kl(theta):
            q = p.copy()
            q.set_flat(theta)
            return np.sum(pol.kl(pol.dist_at(q, obs), ref))

        assert rel_err(grad, fd(total_kl, p.flat())) <= 1e-5


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0.01, 1.0), min_size=2, max_size=6))
def test_kl_zero_iff_equal(weights):
    d = DistParams.categorical(weights)
    assert abs(pol.kl(d, d)) <= 1e-9
