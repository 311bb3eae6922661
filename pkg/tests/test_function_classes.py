import numpy as np
import pytest
from hypothesis import given, strategies as st

from bcel.data import DataDistribution, example_distribution
from bcel.function_classes import (FunctionClass, bellman_residuals, build_tabular_grid_class,
                                   completeness_error, coverage_coefficient, density_ratio,
                                   deserialize_function_class, mirrored_class, realizability_error,
                                   serialize_function_class)
from bcel.game import MarkovGame, build_random_game
from bcel.oracle import occupancy
from bcel.policies import NE, ExtendedClass, JointPolicy, PolicyClass
from bcel.validation import FormatError


@pytest.fixture
def matrix_setup(matrix_game, pure_class):
    return matrix_game, ExtendedClass(pure_class, NE), example_distribution(0.6, 0.01)


def test_exact_mode_is_realizable(matrix_setup):
    game, ext, dist = matrix_setup
    classes = [build_tabular_grid_class(game, i, mode="exact", extended=ext) for i in range(2)]
    assert realizability_error(game, ext, classes, dist) <= 1e-12
    padded = build_tabular_grid_class(game, 0, mode="exact", extended=ext, n_perturbations=17, seed=3)
    assert len(padded) == len(ext.policies[0]) + 17
    again = build_tabular_grid_class(game, 0, mode="exact", extended=ext, n_perturbations=17, seed=3)
    assert np.array_equal(padded.tables, again.tables)


def test_exact_mode_random_game_and_v_kind():
    g = build_random_game(2, 2, 3, (2, 2), 0.9)
    rng = np.random.default_rng(0)
    pc = PolicyClass([JointPolicy.product([rng.dirichlet(np.ones(2), size=3) for _ in range(2)])
                      for _ in range(3)])
    ext = ExtendedClass(pc, NE)
    dist = DataDistribution.uniform(3, 4)
    for kind in ("Q", "V"):
        classes = [build_tabular_grid_class(g, i, kind, mode="exact", extended=ext) for i in range(2)]
        assert realizability_error(g, ext, classes, dist) <= 1e-12
        assert len(classes[0]) == len(ext.policies[0])


def test_grid_mode(matrix_game):
    fc = build_tabular_grid_class(matrix_game, 0, grid_step=1.0)
    assert len(fc) == 2 ** 9
    assert any(np.all(t == 0) for t in fc.tables) and any(np.all(t == 1) for t in fc.tables)
    assert len(build_tabular_grid_class(matrix_game, 0, grid_step=0.5)) == 3 ** 9
    with pytest.raises(ValueError):
        build_tabular_grid_class(matrix_game, 0, grid_step=0.25)
    with pytest.raises(ValueError):
        build_tabular_grid_class(matrix_game, 0, grid_step=0)


def test_completeness_examples():
    g = MarkovGame((2,), np.ones((1, 2, 1)), np.ones((1, 1, 2)), 0.0)
    pc = PolicyClass([JointPolicy(np.array([[0.5, 0.5]]), (2,))])
    ext = ExtendedClass(pc, NE)
    dist = DataDistribution.uniform(1, 2)
    zero = FunctionClass(0, "Q", np.zeros((1, 1, 2)), 1.0)
    assert completeness_error(g, ext, [zero], dist) == pytest.approx(1.0)
    closed = zero.extended(np.ones((1, 1, 2)))
    assert completeness_error(g, ext, [closed], dist) == pytest.approx(0.0)


def test_coverage_examples(matrix_setup):
    game, ext, dist = matrix_setup
    fc = build_tabular_grid_class(game, 0, mode="exact", extended=ext, n_perturbations=60, seed=1)
    pi = ext.policies[0][0]
    assert coverage_coefficient(dist.table, dist, fc, game, pi) == pytest.approx(1.0)
    point = occupancy(game, pi)
    c = coverage_coefficient(point, dist, fc, game, pi)
    assert 1.0 <= c <= 1 / 0.6 + 1e-12
    # a measure charging a cell the data never sees gives an infinite ratio
    gap_dist = DataDistribution(np.array([[0.5, 0.5, 0, 0, 0, 0, 0, 0, 0]]))
    assert coverage_coefficient(dist.table, gap_dist, fc, game, pi) == np.inf


@given(st.integers(0, 2**31))
def test_coverage_bounded_by_density_ratio(seed):
    rng = np.random.default_rng(seed)
    g = build_random_game(seed, 2, 2, (2, 2), 0.7)
    pc = PolicyClass([JointPolicy.product([rng.dirichlet(np.ones(2), size=2) for _ in range(2)])])
    ext = ExtendedClass(pc, NE)
    fc = build_tabular_grid_class(g, 0, mode="exact", extended=ext, n_perturbations=10, seed=seed)
    dist = DataDistribution(rng.dirichlet(np.ones(8)).reshape(2, 4))
    d = rng.dirichlet(np.ones(8)).reshape(2, 4)
    c = coverage_coefficient(d, dist, fc, g, pc[0])
    assert 0 <= c <= density_ratio(d, dist) * (1 + 1e-9)
    assert coverage_coefficient(dist.table, dist, fc, g, pc[0]) == pytest.approx(1.0)


@given(st.integers(0, 2**31), st.integers(1, 5))
def test_realizability_monotone_under_additions(seed, extra):
    rng = np.random.default_rng(seed)
    g = build_random_game(seed, 2, 2, (2, 2), 0.5)
    pc = PolicyClass([JointPolicy.product([rng.dirichlet(np.ones(2), size=2) for _ in range(2)])])
    ext = ExtendedClass(pc, NE)
    dist = DataDistribution.uniform(2, 4)
    base = [FunctionClass(i, "Q", rng.uniform(0, g.v_max, size=(3, 2, 4)), g.v_max) for i in range(2)]
    bigger = [fc.extended(rng.uniform(0, g.v_max, size=(extra, 2, 4))) for fc in base]
    assert realizability_error(g, ext, bigger, dist) <= realizability_error(g, ext, base, dist) + 1e-15
    assert completeness_error(g, ext, base, dist) >= 0


def test_mirror_and_serialization(matrix_setup):
    game, ext, _ = matrix_setup
    fc = build_tabular_grid_class(game, 0, mode="exact", extended=ext, n_perturbations=5, seed=0)
    mirror = mirrored_class(fc, 1)
    assert np.allclose(mirror.tables + fc.tables, game.v_max)
    back = deserialize_function_class(serialize_function_class(fc))
    assert np.array_equal(back.tables, fc.tables) and back.kind == "Q" and back.player == 0
    with pytest.raises(FormatError):
        deserialize_function_class("{not json")
    with pytest.raises(ValueError):
        FunctionClass(0, "Q", np.full((1, 1, 9), 2.0), 1.0)


def test_residuals_vanish_for_exact_tables(matrix_setup):
    game, ext, _ = matrix_setup
    fc = build_tabular_grid_class(game, 1, mode="exact", extended=ext)
    for pi in ext.policies[1]:
        assert np.max(np.abs(bellman_residuals(game, fc, pi))) == 0.0
