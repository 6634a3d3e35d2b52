import numpy as np
import pytest
from hypothesis import given, strategies as st

from dtquant.dataset import (
    NormStats,
    Trajectory,
    WindowSampler,
    fit_normalizer,
    returns_to_go,
    sample_window,
)
from dtquant.errors import ContractError, DataError


def make_traj(T=30, d_s=4, d_a=2, seed=0):
    rng = np.random.default_rng(seed)
    return Trajectory(
        states=rng.normal(size=(T + 1, d_s)),
        actions=rng.uniform(-1, 1, size=(T, d_a)),
        rewards=rng.normal(size=T),
    )


class TestReturnsToGo:
    def test_example(self):
        assert returns_to_go([1.0, 2.0, 3.0]).tolist() == [6.0, 5.0, 3.0]

    def test_zeros(self):
        assert np.array_equal(returns_to_go(np.zeros(5)), np.zeros(5))

    def test_empty(self):
        assert returns_to_go([]).size == 0

    def test_matches_double_loop_oracle(self):
        rng = np.random.default_rng(1)
        r = rng.normal(size=50)
        expected = [sum(r[t:]) for t in range(50)]
        assert np.max(np.abs(returns_to_go(r) - expected)) < 1e-12

    @given(st.lists(st.floats(min_value=0, max_value=10), min_size=1, max_size=40))
    def test_non_increasing_for_nonnegative_rewards(self, rewards):
        rtg = returns_to_go(rewards)
        assert np.all(np.diff(rtg) <= 1e-12)

    def test_recurrence_invariant(self):
        traj = make_traj(seed=2)
        rtg = traj.rtg
        assert np.allclose(rtg[:-1], traj.rewards[:-1] + rtg[1:])
        assert rtg[-1] == traj.rewards[-1]


class TestNormalizer:
    def test_zscore_property(self):
        trajs = [make_traj(seed=s) for s in range(3)]
        stats = fit_normalizer(trajs)
        rows = np.concatenate([t.states for t in trajs])
        z = stats.normalize_states(rows)
        assert np.max(np.abs(z.mean(axis=0))) < 1e-9
        assert np.max(np.abs(z.std(axis=0) - 1.0)) < 1e-6

    def test_constant_dimension_floored(self):
        traj = make_traj(seed=3)
        traj.states[:, 0] = 7.0
        stats = fit_normalizer([traj])
        z = stats.normalize_states(traj.states)
        assert np.allclose(z[:, 0], 0.0)

    def test_rtg_scale_power_of_ten(self):
        traj = make_traj(T=1, seed=4)
        traj.rewards[:] = 42.7
        stats = fit_normalizer([traj])
        assert stats.rtg_scale == 100.0

    def test_round_trip_dict(self):
        stats = fit_normalizer([make_traj(seed=5)])
        again = NormStats.from_dict(stats.to_dict())
        assert np.array_equal(stats.state_mean, again.state_mean)
        assert stats.rtg_scale == again.rtg_scale

    def test_empty_rejected(self):
        with pytest.raises(DataError):
            fit_normalizer([])


class TestSampleWindow:
    def test_padding_count(self):
        traj = make_traj(T=30, seed=6)
        stats = fit_normalizer([traj])
        w = sample_window(traj, t=4, K=20, stats=stats)
        assert w["pad_mask"][:15].all() and not w["pad_mask"][15:].any()

    def test_boundary_no_padding(self):
        traj = make_traj(T=30, seed=7)
        stats = fit_normalizer([traj])
        w = sample_window(traj, t=19, K=20, stats=stats)
        assert not w["pad_mask"].any()
        assert w["timesteps"].tolist() == list(range(20))

    def test_unnormalize_recovers_raw_states(self):
        traj = make_traj(T=30, seed=8)
        stats = fit_normalizer([traj])
        t = 12
        w = sample_window(traj, t, K=8, stats=stats)
        raw = stats.unnormalize_states(w["states"])
        assert np.max(np.abs(raw - traj.states[t - 7:t + 1])) < 1e-9

    def test_rtg_scaled(self):
        traj = make_traj(T=10, seed=9)
        stats = fit_normalizer([traj])
        w = sample_window(traj, 9, K=4, stats=stats)
        assert np.allclose(w["rtg"][:, 0], traj.rtg[6:10] / stats.rtg_scale)

    def test_out_of_range_anchor(self):
        traj = make_traj(T=10, seed=10)
        stats = fit_normalizer([traj])
        with pytest.raises(ContractError):
            sample_window(traj, 10, K=4, stats=stats)

    def test_windows_are_reproducible(self):
        traj = make_traj(T=20, seed=11)
        stats = fit_normalizer([traj])
        a = sample_window(traj, 5, K=8, stats=stats)
        b = sample_window(traj, 5, K=8, stats=stats)
        for key in a:
            assert np.array_equal(a[key], b[key])


class TestWindowSampler:
    def test_anchor_coverage(self):
        trajs = [make_traj(T=15, seed=12), make_traj(T=10, seed=13)]
        stats = fit_normalizer(trajs)
        sampler = WindowSampler(trajs, K=4, stats=stats, seed=99)
        total = sampler.total_anchors
        assert total == 25
        seen = set()
        for _ in range(10 * total // 8):
            batch = sampler.sample_batch(8)
            for ts, pad in zip(batch.timesteps, batch.pad_mask):
                seen.add(int(ts[~pad][-1]))
        # anchors within each trajectory share index space; coverage over
        # anchor values is the observable
        assert seen == set(range(15))

    def test_deterministic_given_seed(self):
        trajs = [make_traj(T=15, seed=14)]
        stats = fit_normalizer(trajs)
        b1 = WindowSampler(trajs, 4, stats, seed=5).sample_batch(6)
        b2 = WindowSampler(trajs, 4, stats, seed=5).sample_batch(6)
        assert np.array_equal(b1.states, b2.states)
        assert np.array_equal(b1.timesteps, b2.timesteps)
