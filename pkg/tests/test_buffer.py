import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from exoppo import buffer
from exoppo import policy as pol
from exoppo.buffer import GenerationBuffer, Transition, TransitionBatch
from exoppo.errors import ConfigurationError, FileFormatError, InputError
from exoppo.policy import DistParams, PolicyModel


def make_batch(gid, n=10, seed=None, kind="categorical"):
    rng = np.random.default_rng(gid if seed is None else seed)
    if kind == "categorical":
        ref = DistParams.categorical(rng.dirichlet(np.ones(3), size=n))
        actions = rng.integers(0, 3, size=n)
    else:
        ref = DistParams.gaussian(rng.normal(size=(n, 1)), rng.uniform(0.1, 1, size=(n, 1)))
        actions = rng.normal(size=(n, 1))
    return TransitionBatch(
        rng.normal(size=(n, 4)),
        actions,
        rng.normal(size=n),
        ref,
        rng.normal(size=n),
        rng.normal(size=n),
        np.full(n, gid, dtype=np.int64),
    )


class TestPush:
    def test_m1_keeps_only_current(self):
        buf = GenerationBuffer(1)
        for g in range(5):
            buffer.push_generation(buf, make_batch(g))
            assert buf.generation_ids == [g]

    def test_fifo(self):
        buf = GenerationBuffer(4)
        for g in range(7):
            buf.push_generation(make_batch(g), policy_snapshot_id=f"snap{g}")
        assert buf.generation_ids == [3, 4, 5, 6]
        assert sorted(buf.snapshot_ids) == [3, 4, 5, 6]

    def test_partial_fill(self):
        buf = GenerationBuffer(4)
        for g in range(3):
            buf.push_generation(make_batch(g))
        assert len(buf) == 30
        npt.assert_allclose(buf.nu, np.full(3, 1 / 3))

    def test_mixed_ids(self):
        batch = make_batch(0)
        batch.generation_ids[3] = 1
        with pytest.raises(InputError):
            GenerationBuffer(2).push_generation(batch)

    def test_unequal_sizes(self):
        buf = GenerationBuffer(2)
        buf.push_generation(make_batch(0, 10))
        with pytest.raises(InputError):
            buf.push_generation(make_batch(1, 12))

    def test_invalid_config(self):
        with pytest.raises(ConfigurationError):
            GenerationBuffer(0)
        with pytest.raises(ConfigurationError):
            GenerationBuffer(3, nu=[0.5, 0.5])


class TestSampling:
    def test_whole_buffer_batch(self):
        buf = GenerationBuffer(2)
        buf.push_generation(make_batch(0))
        buf.push_generation(make_batch(1))
        batches = list(buf.sample_minibatches(20, 1, np.random.default_rng(0)))
        assert len(batches) == 1
        npt.assert_array_equal(np.sort(batches[0].rewards), np.sort(buf.pooled().rewards))

    def test_partition_counts(self):
        buf = GenerationBuffer(4)
        for g in range(4):
            buf.push_generation(make_batch(g, 25))
        batches = list(buffer.sample_minibatches(buf, 25, 2, np.random.default_rng(1)))
        assert len(batches) == 8
        seen = np.concatenate([b.rewards for b in batches])
        values, counts = np.unique(seen, return_counts=True)
        assert len(values) == 100 and np.all(counts == 2)

    def test_degenerate_nu(self):
        buf = GenerationBuffer(3, nu=[0.0, 0.0, 1.0])
        for g in range(5):
            buf.push_generation(make_batch(g))
        for mb in buf.sample_minibatches(5, 3, np.random.default_rng(2)):
            assert np.all(mb.generation_ids == 4)

    def test_nu_ordering_partial(self):
        # weights are indexed oldest to newest; with two stored, the newest two apply
        buf = GenerationBuffer(3, nu=[1.0, 1.0, 2.0])
        buf.push_generation(make_batch(0))
        buf.push_generation(make_batch(1))
        npt.assert_allclose(buf.nu, [1 / 3, 2 / 3])

    def test_batch_too_large(self):
        buf = GenerationBuffer(1)
        buf.push_generation(make_batch(0))
        with pytest.raises(InputError):
            list(buf.sample_minibatches(11, 1, np.random.default_rng(0)))

    def test_empty(self):
        with pytest.raises(InputError):
            list(GenerationBuffer(2).sample_minibatches(1, 1, np.random.default_rng(0)))

    def test_m1_pre_update_ratio_is_one(self):
        rng = np.random.default_rng(3)
        policy = PolicyModel.build("categorical", 4, 3, rng, (8,))
        obs = rng.normal(size=(32, 4))
        dist = pol.dist_at(policy, obs)
        actions = pol.sample(dist, rng)
        batch = TransitionBatch(obs, actions, np.zeros(32), dist, np.zeros(32), np.zeros(32), np.zeros(32, dtype=np.int64))
        buf = GenerationBuffer(1)
        buf.push_generation(batch)
        for mb in buf.sample_minibatches(8, 2, rng):
            r = np.exp(pol.log_prob(pol.dist_at(policy, mb.obs), mb.actions) - pol.log_prob(mb.ref, mb.actions))
            npt.assert_allclose(r, 1.0, atol=1e-9)


@settings(max_examples=60, deadline=None)
@given(M=st.integers(1, 5), pushes=st.integers(1, 12), size=st.integers(1, 6))
def test_cohesive_eviction(M, pushes, size):
    buf = GenerationBuffer(M)
    for g in range(pushes):
        buf.push_generation(make_batch(g, size))
        ids = buf.generation_ids
        assert ids == list(range(max(0, g + 1 - M), g + 1))
        assert len(buf) == len(ids) * size
        counts = np.unique(buf.pooled().generation_ids, return_counts=True)[1]
        assert np.all(counts == size)


class TestEffectiveEnvCount:
    @pytest.mark.parametrize("n_on, M, expected", [(8, 4, 2), (8, 1, 8), (12, 3, 4)])
    def test_values(self, n_on, M, expected):
        assert buffer.effective_env_count(n_on, M) == expected

    def test_non_divisible(self):
        # 2 and 4 are equally close; ties go to the smaller divisor
        with pytest.raises(ConfigurationError, match="nearest valid M is 2"):
            buffer.effective_env_count(8, 3)
        with pytest.raises(ConfigurationError, match="nearest valid M is 4"):
            buffer.effective_env_count(12, 5)


class TestTransitions:
    def test_round_trip(self):
        batch = make_batch(2, 5, kind="gaussian")
        back = TransitionBatch.from_transitions(batch.to_transitions())
        npt.assert_array_equal(back.obs, batch.obs)
        npt.assert_array_equal(back.ref.mean, batch.ref.mean)
        assert isinstance(batch.to_transitions()[0], Transition)

    def test_empty(self):
        with pytest.raises(InputError):
            TransitionBatch.from_transitions([])


class TestDatasetFile:
    @pytest.mark.parametrize("kind", ["categorical", "gaussian"])
    def test_round_trip_bit_identical(self, tmp_path, kind):
        batch = make_batch(0, 17, kind=kind)
        path = tmp_path / "d.bin"
        width = 3 if kind == "categorical" else 2
        buffer.write_dataset(
            path, batch, env_id="x", variant=kind, obs_dim=4, action_width=1, dist_width=width, manifest={"a": 1}
        )
        header, back = buffer.read_dataset(path)
        assert header["count"] == 17 and header["manifest"] == {"a": 1}
        assert path.read_bytes().startswith(b"EXOPPO-DATA-v1\n")
        for name in ("obs", "rewards", "advantages", "value_targets", "generation_ids"):
            assert getattr(back, name).tobytes() == getattr(batch, name).tobytes()
        assert back.ref.to_array().tobytes() == batch.ref.to_array().tobytes()
        assert np.array_equal(np.asarray(back.actions).reshape(17, -1), np.asarray(batch.actions).reshape(17, -1))

    def test_empty_rejected(self, tmp_path):
        path = tmp_path / "e.bin"
        buffer.write_dataset(path, None, env_id="x", variant="gaussian", obs_dim=3, action_width=1, dist_width=2)
        with pytest.raises(FileFormatError, match="no transitions"):
            buffer.read_dataset(path)
        header, batch = buffer.read_dataset(path, allow_empty=True)
        assert header["count"] == 0 and batch is None

    def test_bad_magic_and_truncation(self, tmp_path):
        path = tmp_path / "b.bin"
        path.write_bytes(b"nope")
        with pytest.raises(FileFormatError):
            buffer.read_dataset(path)
        good = tmp_path / "g.bin"
        buffer.write_dataset(good, make_batch(0, 3, kind="gaussian"), env_id="x", variant="gaussian", obs_dim=4, action_width=1, dist_width=2)
        path.write_bytes(good.read_bytes()[:-5])
        with pytest.raises(FileFormatError):
            buffer.read_dataset(path)
