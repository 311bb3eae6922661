import numpy as np
import pytest
from hypothesis import given, strategies as st

from bcel.data import DataDistribution, OfflineDataset, exhaustive_dataset, sample_dataset
from bcel.function_classes import FunctionClass, build_tabular_grid_class
from bcel.game import build_random_game, example_matrix_game
from bcel.oracle import occupancy
from bcel.policies import NE, ExtendedClass, JointPolicy, PolicyClass
from bcel.qtype import threshold_epsilon_v
from bcel.validation import PreconditionError
from bcel.vtype import (VTypeBCEL, threshold_beta_g, weight_bound, weighted_bellman_errors,
                        weighted_empirical_loss)


def test_behavior_policy_gives_unit_weights():
    g = build_random_game(1, 2, 2, (2, 2), 0.5)
    rng = np.random.default_rng(0)
    dist = DataDistribution(rng.dirichlet(np.ones(8)).reshape(2, 4))
    behavior = JointPolicy(dist.behavior, (2, 2))
    assert weight_bound(dist, behavior) == pytest.approx(1.0)
    ds = sample_dataset(g, dist, 300, seed=1)
    gp, gv = rng.uniform(0, 2, 2), rng.uniform(0, 2, 2)
    plain = np.mean((gp[ds.states] - ds.rewards[:, 0] - 0.5 * gv[ds.next_states]) ** 2)
    assert weighted_empirical_loss(ds, 0, gp, gv, behavior, 0.5) == pytest.approx(plain)


def test_single_tuple_and_errors():
    dist = DataDistribution(np.array([[0.25, 0.75]]))
    ds = OfflineDataset([0], [1], [[0.2]], [0], (2,), 1, dist)
    pi = JointPolicy(np.array([[0.0, 1.0]]), (2,))
    w = 1 / 0.75
    assert weighted_empirical_loss(ds, 0, [0.7], [0.0], pi, 0.0) == pytest.approx(w * 0.5 ** 2)
    bad = DataDistribution(np.array([[1.0, 0.0]]))
    ds_bad = OfflineDataset([0], [1], [[0.2]], [0], (2,), 1, bad)
    with pytest.raises(PreconditionError, match=r"s=0, a=1"):
        weighted_empirical_loss(ds_bad, 0, [0.7], [0.0], pi, 0.0)


def test_loss_vanishes_at_policy_value_for_deterministic_policy():
    g = example_matrix_game()
    dist = DataDistribution.uniform(1, 9)
    ds = exhaustive_dataset(g, dist, 900)
    pi = JointPolicy.deterministic([[1, 2]], (3, 3))
    value = float(g.rewards[0, 0] @ pi.table[0])
    assert weighted_empirical_loss(ds, 0, [value], [0.0], pi, 0.0) == pytest.approx(0.0, abs=1e-15)


def test_weighted_loss_is_unbiased():
    g = build_random_game(5, 2, 3, (2, 2), 0.7)
    rng = np.random.default_rng(2)
    dist = DataDistribution(rng.dirichlet(np.ones(12) * 3).reshape(3, 4))
    pi = JointPolicy.product([rng.dirichlet(np.ones(2), size=3) for _ in range(2)])
    gv = rng.uniform(0, g.v_max, 3)
    ds = sample_dataset(g, dist, 100_000, seed=4)
    resid = gv[:, None, None] - g.rewards[1][:, :, None] - g.gamma * gv[None, None, :]
    population = float(np.sum(dist.state[:, None, None] * pi.table[:, :, None] * g.transition * resid ** 2))
    c_a = weight_bound(dist, pi)
    assert abs(weighted_empirical_loss(ds, 1, gv, gv, pi, g.gamma) - population) <= 0.02 * c_a * g.v_max ** 2


@given(st.integers(0, 2**31))
def test_vectorized_weighted_errors_match_direct(seed):
    rng = np.random.default_rng(seed)
    g = build_random_game(seed, 2, 2, (2, 2), 0.6)
    dist = DataDistribution(rng.dirichlet(np.ones(8)).reshape(2, 4))
    fc = FunctionClass(0, "V", rng.uniform(0, g.v_max, size=(5, 2)), g.v_max)
    pi = JointPolicy(rng.dirichlet(np.ones(4), size=2), (2, 2))
    ds = sample_dataset(g, dist, 40, seed=seed)
    fast = weighted_bellman_errors(ds.statistics, 0, fc, pi, g.gamma, dist)
    for k, gk in enumerate(fc.tables):
        own = weighted_empirical_loss(ds, 0, gk, gk, pi, g.gamma)
        best = min(weighted_empirical_loss(ds, 0, h, gk, pi, g.gamma) for h in fc.tables)
        assert fast[k] == pytest.approx(own - best, abs=1e-10)


def test_beta_formula():
    eps = threshold_epsilon_v(1000, 90, 1, 0.1, 1.0)
    assert threshold_beta_g(1000, 90, 1, 0.1, 1.0, weight=1.0) == pytest.approx(eps)
    assert threshold_beta_g(1000, 90, 1, 0.1, 1.0, weight=2.0) == pytest.approx(1.0883830, rel=1e-6)
    assert threshold_beta_g(1000, 90, 1, 0.1, 1.0, 0.01, weight=4.0) == pytest.approx(4 * eps + 0.3)


def test_exact_value_class_size_independent_of_players():
    for m in (2, 3):
        g = build_random_game(0, m, 2, (2,) * m, 0.5)
        rng = np.random.default_rng(m)
        pc = PolicyClass([JointPolicy.product([rng.dirichlet(np.ones(2), size=2) for _ in range(m)])
                          for _ in range(2)])
        ext = ExtendedClass(pc, NE)
        fc = build_tabular_grid_class(g, 0, "V", mode="exact", extended=ext)
        assert len(fc) == len(ext.policies[0])


def test_unbounded_weights_get_widest_interval():
    g = example_matrix_game()
    pc = PolicyClass.pure_profiles(g.action_counts)
    ext = ExtendedClass(pc, NE)
    dist = DataDistribution(np.array([[0.5, 0.5, 0, 0, 0, 0, 0, 0, 0]]))
    classes = [build_tabular_grid_class(g, i, "V", mode="exact", extended=ext) for i in range(2)]
    ds = sample_dataset(g, dist, 200, seed=0)
    est = VTypeBCEL(pc, classes, threshold=0.0).fit(ds)
    j = ext.base_index[0][8]
    assert est.rejected_[0][j] and est.interval(0, j) == (0.0, 1.0)
    assert not est.rejected_[0][ext.base_index[0][0]]
    with pytest.raises(PreconditionError):
        VTypeBCEL(pc, classes).fit(OfflineDataset(ds.states, ds.joint_actions, ds.rewards,
                                                  ds.next_states, (3, 3), 1))
