import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from bcel import diagnostics as dg
from bcel.data import DataDistribution, example_distribution, exhaustive_dataset, sample_dataset
from bcel.function_classes import FunctionClass, build_tabular_grid_class
from bcel.game import build_random_game, example_matrix_game
from bcel.oracle import ExactValues
from bcel.policies import NE, ExtendedClass, JointPolicy, PolicyClass
from bcel.qtype import BCEL, build_version_space


def exact_classes(game, pc, k=40, seed=0):
    ext = ExtendedClass(pc, NE)
    return ext, [build_tabular_grid_class(game, i, mode="exact", extended=ext, n_perturbations=k,
                                          seed=seed + i) for i in range(2)]


def test_singleton_class_has_zero_width(matrix_game, pure_class):
    fc = FunctionClass(0, "Q", matrix_game.rewards[0][None], 1.0)
    ds = sample_dataset(matrix_game, DataDistribution.uniform(1, 9), 50, seed=0)
    vs = build_version_space(ds, 0, pure_class[0], fc, math.inf, 0.0)
    assert dg.interval_width(vs) == 0.0


def test_full_grid_class_spans_value_range(matrix_game, pure_class):
    fc = build_tabular_grid_class(matrix_game, 0, grid_step=0.5)
    assert len(fc) == 3 ** 9
    ds = sample_dataset(matrix_game, DataDistribution.uniform(1, 9), 50, seed=0)
    vs = build_version_space(ds, 0, pure_class[0], fc, math.inf, 0.0)
    assert dg.interval_width(vs) == pytest.approx(matrix_game.v_max)


def test_subopt_and_breakdown(matrix_game, pure_class):
    ext, classes = exact_classes(matrix_game, pure_class)
    ds = sample_dataset(matrix_game, example_distribution(0.6, 0.05), 2000, seed=1,
                        reward_noise="bernoulli")
    est = BCEL(pure_class, classes, threshold=0.02).fit(ds)
    rep = est.report_
    for i in range(2):
        for k in rep.eligible:
            idx = ext.response_index[i][k]
            vals = [dg.subopt(rep, ext, i, k, j) for j in idx]
            assert min(vals) == 0.0 and all(v >= 0 for v in vals)
    exact = ExactValues(matrix_game, ext)
    bd = dg.bound_breakdown(rep, ext, exact)
    assert dg.sandwich_holds(rep, exact)
    assert bd.audit()
    for k in rep.eligible:
        assert bd.adaptive_term(k) <= bd.unilateral_term(k) + 1e-12
        assert not dg.upper_bound_violations(rep, exact)


def test_strategy_completeness_example(matrix_game):
    pc = PolicyClass.from_player_sets([[np.eye(3)[[1]], np.eye(3)[[2]]], [np.eye(3)[[0]]]])
    eps, free, inside = dg.strategy_completeness_gap(matrix_game, pc, pc[0])
    assert eps == pytest.approx(0.25)
    assert free <= inside + eps + 1e-12


@given(st.integers(0, 2**31))
def test_strategy_completeness_inequality(seed):
    g = build_random_game(seed, 2, 2, (2, 2), 0.5)
    rng = np.random.default_rng(seed)
    pc = PolicyClass.from_player_sets([[rng.dirichlet(np.ones(2), size=2) for _ in range(2)]
                                       for _ in range(2)])
    eps, free, inside = dg.strategy_completeness_gap(g, pc, pc[int(rng.integers(4))])
    assert eps >= -1e-12 and free <= inside + eps + 1e-10


@pytest.mark.parametrize("p2", [0.01, 0.05])
def test_unilateral_coefficient_scales_with_cross_mass(matrix_game, pure_class, p2):
    _, classes = exact_classes(matrix_game, pure_class)
    dist = example_distribution(0.6, p2)
    c = dg.unilateral_coefficient(matrix_game, pure_class, classes, dist, pure_class[0])
    assert c >= 1.0 / (4.0 * p2)
    assert c >= dg.self_coverage(matrix_game, classes[0], dist, pure_class[0])


def test_unilateral_coefficient_under_uniform_data(matrix_game, pure_class):
    _, classes = exact_classes(matrix_game, pure_class)
    c = dg.unilateral_coefficient(matrix_game, pure_class, classes, DataDistribution.uniform(1, 9),
                                  pure_class[0])
    assert 1.0 <= c <= 9.0 + 1e-9


def test_width_bound_at_zero_discount(matrix_game, pure_class):
    _, classes = exact_classes(matrix_game, pure_class)
    dist = example_distribution(0.6, 0.05)
    ds = sample_dataset(matrix_game, dist, 1000, seed=3, reward_noise="bernoulli")
    vs = build_version_space(ds, 0, pure_class[4], classes[0], 0.02, 0.0)
    unit = dg.approximation_unit(1.0, 1000, len(classes[0]), 9, 0.1)
    wb = dg.width_bound_q(matrix_game, vs, classes[0], dist, unit)
    assert wb.names[0] == "d_pi" and wb.off_support[0] == 0.0
    assert np.all(wb.off_support >= 0)
    assert np.isfinite(wb.coverage[1])
    fixed = dg.WidthBound(wb.width, wb.names, wb.coverage, wb.mismatch, wb.off_support, wb.unit,
                          wb.required_constant)
    assert fixed.holds()


def test_rate_constant_edge_cases():
    assert dg.rate_constant(0.0, 0.0, 100, 10, 10, 0.1, 1.0, 0.0) == 0.0
    assert dg.rate_constant(0.1, 0.0, 100, 10, 10, 0.1, 1.0, 0.0) == math.inf
    k = dg.rate_constant(0.1, 4.0, 100, 10, 10, 0.1, 1.0, 0.5)
    assert k == pytest.approx(0.1 / (math.sqrt(4 * math.log(1000) / 100) * 2))


def test_median_width_shrinks_with_sample_size(matrix_game, pure_class):
    ext, classes = exact_classes(matrix_game, pure_class)
    dist = example_distribution(0.6, 0.05)
    medians = []
    for n in (100, 1000, 10000):
        widths = []
        for t in range(10):
            ds = sample_dataset(matrix_game, dist, n, seed=t, reward_noise="bernoulli")
            est = BCEL(pure_class, classes).fit(ds)
            widths.append(np.mean([w.mean() for w in (est.report_.widths(0), est.report_.widths(1))]))
        medians.append(float(np.median(widths)))
    assert all(b <= a + 1e-12 for a, b in zip(medians, medians[1:]))


def test_exhaustive_data_passes_every_audit(matrix_game, pure_class):
    ext, classes = exact_classes(matrix_game, pure_class)
    ds = exhaustive_dataset(matrix_game, DataDistribution.uniform(1, 9), 900)
    est = BCEL(pure_class, classes, threshold=0.0).fit(ds)
    exact = ExactValues(matrix_game, ext)
    assert dg.sandwich_holds(est.report_, exact)
    assert dg.bound_breakdown(est.report_, ext, exact).audit()
    assert est.selected_index_ == 0 and est.estimated_gaps_[0] == pytest.approx(0.0, abs=1e-12)
