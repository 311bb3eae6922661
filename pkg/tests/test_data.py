import numpy as np
import pytest
from scipy.stats import chisquare

from bcel.data import (DataDistribution, DatasetStatistics, OfflineDataset, deserialize_dataset,
                       empirical_distribution, example_distribution, exhaustive_dataset,
                       sample_dataset, serialize_dataset, spawn_seeds)
from bcel.game import build_random_game, make_zero_sum
from bcel.validation import FormatError, check_transitions


def test_point_mass_and_determinism(small_game):
    dist = DataDistribution.point_mass(3, 4, 1, 2)
    ds = sample_dataset(small_game, dist, 50, seed=4)
    assert set(ds.states) == {1} and set(ds.joint_actions) == {2}
    u = DataDistribution.uniform(3, 4)
    assert sample_dataset(small_game, u, 100, seed=9) == sample_dataset(small_game, u, 100, seed=9)
    assert sample_dataset(small_game, u, 100, seed=9) != sample_dataset(small_game, u, 100, seed=10)


def test_example_distribution_frequency(matrix_game):
    dist = example_distribution(0.6, 0.01)
    assert dist.table.reshape(3, 3)[1, 1] == pytest.approx(0.09)
    n = 10_000
    ds = sample_dataset(matrix_game, dist, n, seed=1)
    freq = np.mean(ds.joint_actions == 0)
    assert abs(freq - 0.6) <= 3 * np.sqrt(0.6 * 0.4 / n)
    with pytest.raises(ValueError):
        example_distribution(0.9, 0.1)


def test_empirical_distribution(matrix_game):
    one = sample_dataset(matrix_game, DataDistribution.uniform(1, 9), 1, seed=0)
    emp = empirical_distribution(one)
    assert emp.sum() == 1.0 and np.count_nonzero(emp) == 1
    ds = sample_dataset(matrix_game, DataDistribution.uniform(1, 9), 100_000, seed=2)
    emp = empirical_distribution(ds)
    assert np.max(np.abs(emp - 1 / 9)) <= 0.01
    assert np.allclose(emp * ds.n, np.round(emp * ds.n))


def test_next_states_follow_transition():
    g = build_random_game(4, 2, 3, (2, 2), 0.9)
    ds = sample_dataset(g, DataDistribution.point_mass(3, 4, 2, 1), 100_000, seed=5)
    observed = np.bincount(ds.next_states, minlength=3)
    assert chisquare(observed, g.transition[2, 1] * ds.n).pvalue > 0.01


def test_bernoulli_rewards(matrix_game):
    ds = sample_dataset(matrix_game, DataDistribution.uniform(1, 9), 50_000, seed=3,
                        reward_noise="bernoulli")
    assert set(np.unique(ds.rewards)) <= {0.0, 1.0}
    assert np.all(ds.rewards.sum(axis=1) == 1.0)
    cell = ds.joint_actions == 1
    assert abs(ds.rewards[cell, 0].mean() - 0.75) <= 4 * np.sqrt(0.75 * 0.25 / cell.sum())


def test_exhaustive_dataset_is_exact(matrix_game):
    ds = exhaustive_dataset(matrix_game, example_distribution(0.6, 0.01), 1000)
    assert np.allclose(empirical_distribution(ds), example_distribution(0.6, 0.01).table)


def test_statistics_match_direct_counts(small_game):
    ds = sample_dataset(small_game, DataDistribution.uniform(3, 4), 500, seed=1)
    st = DatasetStatistics.from_dataset(ds)
    for t in range(0, 500, 37):
        s, a, s2 = ds.states[t], ds.joint_actions[t], ds.next_states[t]
        mask = (ds.states == s) & (ds.joint_actions == a)
        assert st.counts[s, a, s2] == np.sum(mask & (ds.next_states == s2))
        assert st.reward_sums[1, s, a] == pytest.approx(ds.rewards[mask, 1].sum())


def test_dataset_round_trip_and_errors(small_game):
    ds = sample_dataset(small_game, DataDistribution.uniform(3, 4), 20, seed=8)
    back = deserialize_dataset(serialize_dataset(ds))
    assert back == ds and back.distribution == ds.distribution
    lines = serialize_dataset(ds).splitlines()
    lines[5] = "0 1"
    with pytest.raises(FormatError) as info:
        deserialize_dataset("\n".join(lines), "d.txt")
    assert "d.txt:6" in str(info.value)
    s, a, r, s2 = check_transitions(ds.to_array(), 3, (2, 2))
    assert np.array_equal(a, ds.joint_actions) and np.array_equal(r, ds.rewards)


def test_behavior_conditional_and_weights():
    table = np.array([[0.2, 0.2, 0.0, 0.0], [0.0, 0.0, 0.0, 0.0], [0.15, 0.15, 0.15, 0.15]])
    dist = DataDistribution(table)
    assert np.all(np.isnan(dist.behavior[1]))
    w = dist.importance_weights(np.full((3, 4), 0.25))
    assert np.isinf(w[0, 2]) and np.isinf(w[1, 0]) and w[2, 0] == pytest.approx(1.0)
    assert dist.weight_bound(np.array([[0.5, 0.5, 0, 0], [1, 0, 0, 0], [0.25] * 4])) == np.inf
    assert not dist.has_full_action_support()


def test_seed_streams_are_distinct():
    a, b = spawn_seeds(42, 2)
    g = build_random_game(0, 2, 2, (2, 2), 0.5)
    u = DataDistribution.uniform(2, 4)
    assert sample_dataset(g, u, 30, seed=a) != sample_dataset(g, u, 30, seed=b)
