import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import (brute_force_assignment, hungarian_max_inner, ks_critical, ks_uniform_statistic,
                     monte_carlo_halfspace_depth)
from lotquantiles.errors import DomainError
from lotquantiles.quantiles import (ReferenceSample, default_schedule, fit_potentials, hard_assignment,
                                    mk_depth, mk_depth_matrix, quantile, quantile_matrix, rank,
                                    rank_matrix, reference_depth, sample_reference,
                                    tukey_depth_spherical)


def test_reference_construction():
    ref = sample_reference(10_000, 3, seed=1)
    norms = np.linalg.norm(ref.points, axis=1)
    assert np.all(norms <= 1.0)
    assert np.linalg.norm(ref.points.mean(axis=0)) < 3 / np.sqrt(10_000)
    assert ks_uniform_statistic(norms) < ks_critical(norms.size, 0.01)
    g = sample_reference(5, 2, "gaussian", seed=1)
    assert g.kind == "gaussian" and g.points.shape == (5, 2)
    assert np.array_equal(sample_reference(7, 2, seed=4).points, sample_reference(7, 2, seed=4).points)
    with pytest.raises(DomainError):
        sample_reference(0, 2)
    with pytest.raises(DomainError):
        sample_reference(3, 2, "cauchy")


def test_identity_assignment_when_data_is_reference():
    ref = sample_reference(40, 2, seed=2)
    model = fit_potentials(ref.points.copy(), ref)
    assert np.array_equal(model.assignment, np.arange(40))
    for i in (0, 17, 39):
        assert np.array_equal(rank(ref.points[i], model, "hard"), ref.points[i])
        assert np.array_equal(quantile(ref.points[i], model, "hard"), ref.points[i])


def test_two_points_brute_force():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        ref = ReferenceSample(rng.uniform(-0.7, 0.7, (2, 2)), "spherical_uniform", seed)
        X = rng.normal(size=(2, 2))
        model = fit_potentials(X, ref)
        perm = brute_force_assignment(-(X @ ref.points.T))
        assert tuple(model.assignment.tolist()) == perm


def test_six_points_hungarian():
    for seed in range(10):
        rng = np.random.default_rng(seed)
        ref = sample_reference(6, 2, seed=seed + 100)
        X = rng.normal(size=(6, 2))
        model = fit_potentials(X, ref)
        np.testing.assert_array_equal(model.assignment, hungarian_max_inner(X, ref.points))
        np.testing.assert_array_equal(hard_assignment(model, X), model.assignment)


@given(st.integers(0, 10_000), st.integers(3, 40), st.integers(1, 3))
def test_hard_ranks_are_a_permutation(seed, n, d):
    rng = np.random.default_rng(seed)
    X = rng.standard_t(3, size=(n, d))
    ref = sample_reference(n, d, seed=seed + 1)
    model = fit_potentials(X, ref, entropic=False)
    R = rank_matrix(X, model, "hard")
    assert sorted(map(tuple, R)) == sorted(map(tuple, ref.points))
    assert np.array_equal(model.assignment, hungarian_max_inner(X, ref.points))


def test_entropic_rank_in_ball():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(50, 2))
    model = fit_potentials(X, sample_reference(50, 2, seed=3))
    probes = rng.normal(scale=5.0, size=(200, 2))
    assert np.all(np.linalg.norm(rank_matrix(probes, model), axis=1) <= 1.0 + 1e-12)
    assert np.all(np.linalg.norm(rank_matrix(X, model), axis=1) <= 1.0 + 1e-12)


def test_translation_invariance():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(30, 2))
    ref = sample_reference(30, 2, seed=4)
    c = np.array([5.0, -3.0])
    base = fit_potentials(X, ref)
    moved = fit_potentials(X + c, ref)
    oracle = hungarian_max_inner(X + c, ref.points)
    assert np.array_equal(oracle, hungarian_max_inner(X, ref.points))
    np.testing.assert_array_equal(rank_matrix(X + c, moved, "hard"), rank_matrix(X, base, "hard"))
    probes = rng.normal(size=(20, 2))
    np.testing.assert_array_equal(hard_assignment(moved, probes + c), hard_assignment(base, probes))


def test_dense_grid_hits_every_data_point():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(30, 2))
    model = fit_potentials(X, sample_reference(30, 2, seed=5), entropic=False)
    t = np.linspace(-1, 1, 401)
    U = np.array([(a, b) for a in t for b in t if a * a + b * b <= 1.0])
    Q = quantile_matrix(U, model, "hard")
    hit = {tuple(q) for q in Q}
    assert hit == {tuple(x) for x in X}


def test_single_point_target():
    x = np.array([[2.0, -1.0]])
    model = fit_potentials(x, sample_reference(1, 2, seed=0))
    U = sample_reference(25, 2, seed=9).points
    for mode in ("hard", "entropic"):
        np.testing.assert_allclose(quantile_matrix(U, model, mode), np.repeat(x, 25, axis=0), atol=1e-12)


def test_quantile_of_rank_recovers_data():
    rng = np.random.default_rng(6)
    X = rng.normal(size=(40, 3))
    model = fit_potentials(X, sample_reference(40, 3, seed=6))
    np.testing.assert_array_equal(quantile_matrix(rank_matrix(X, model, "hard"), model, "hard"), X)


def test_hard_centre_is_deepest_point():
    for seed in range(10):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(60, 2)) @ np.array([[1.0, 0.5], [0.0, 2.0]])
        model = fit_potentials(X, sample_reference(60, 2, seed=seed + 50))
        deepest = X[np.argmax(mk_depth_matrix(X, model, "hard"))]
        assert np.array_equal(quantile(np.zeros(2), model, "hard"), deepest)


def test_unequal_sizes():
    rng = np.random.default_rng(7)
    X = rng.normal(size=(12, 2))
    ref = sample_reference(30, 2, seed=7)
    model = fit_potentials(X, ref)
    assert model.fenchel_young_gap(exact=True) < 1e-9
    R = rank_matrix(X, model, "hard")
    assert np.all(np.linalg.norm(R, axis=1) <= 1)
    Q = quantile_matrix(ref.points, model, "hard")
    assert {tuple(q) for q in Q} <= {tuple(x) for x in X}


def test_fenchel_young_bounds():
    rng = np.random.default_rng(8)
    X = rng.normal(size=(50, 2))
    model = fit_potentials(X, sample_reference(50, 2, seed=8))
    assert model.fenchel_young_gap(exact=True) < 1e-9
    assert model.fenchel_young_gap() <= model.fenchel_young_slack()


def test_fit_validation():
    ref = sample_reference(5, 2, seed=0)
    with pytest.raises(DomainError):
        fit_potentials(np.zeros((5, 3)), ref)
    with pytest.raises(DomainError):
        fit_potentials(np.full((5, 2), np.nan), ref)
    with pytest.raises(DomainError):
        fit_potentials(np.zeros((5, 2)), ref, schedule=[0.1, 0.2])
    model = fit_potentials(np.random.default_rng(0).normal(size=(5, 2)), ref, entropic=False)
    with pytest.raises(DomainError):
        rank_matrix(np.zeros((1, 2)), model, "entropic")
    with pytest.raises(DomainError):
        quantile(np.array([1.0, 1.0]), model, "hard")
    with pytest.raises(DomainError):
        rank(np.zeros(2), model, "soft")


def test_schedule_scales_with_data():
    rng = np.random.default_rng(9)
    X = rng.normal(size=(20, 2))
    ref = sample_reference(20, 2, seed=9)
    s1 = default_schedule(ref, X)
    s2 = default_schedule(ref, 10 * X)
    np.testing.assert_allclose(s2, 10 * s1)
    assert s1.size == 10 and np.all(np.diff(s1) < 0)


def test_tukey_endpoints():
    for d in (1, 2, 3, 5, 10):
        assert tukey_depth_spherical(0.0, d) == 0.5
        assert tukey_depth_spherical(1.0, d) == 0.0
    assert tukey_depth_spherical(0.3, 1) == 0.35
    with pytest.raises(DomainError):
        tukey_depth_spherical(1.5, 2)


def test_tukey_monte_carlo():
    value = tukey_depth_spherical(0.5, 2)
    assert abs(value - monte_carlo_halfspace_depth(0.5, 2, 1_000_000, seed=1)) < 2e-3


@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.integers(1, 8))
def test_tukey_monotone(r1, r2, d):
    lo, hi = sorted((r1, r2))
    a, b = tukey_depth_spherical(lo, d), tukey_depth_spherical(hi, d)
    assert 0.0 <= b <= a + 1e-12 <= 0.5 + 1e-12


def test_gaussian_reference_depth():
    assert reference_depth(0.0, 2, "gaussian") == 0.5
    assert abs(reference_depth(1.6448536269514722, 3, "gaussian") - 0.05) < 1e-12


def test_depth_properties_on_gaussian_data():
    rng = np.random.default_rng(10)
    X = rng.normal(size=(500, 2))
    model = fit_potentials(X, sample_reference(500, 2, seed=10))
    depth = mk_depth_matrix(X, model)
    assert np.all((depth >= 0) & (depth <= 0.5))
    norms = np.linalg.norm(rank_matrix(X, model), axis=1)
    assert np.argmax(depth) == np.argmin(norms)
    assert depth.max() >= 0.45
    centre = X.mean(axis=0)
    for direction in ([1.0, 0.0], [0.0, -1.0], [0.6, 0.8]):
        ray = centre + np.outer([0.0, 0.5, 1.0, 1.5, 2.5], direction)
        values = mk_depth_matrix(ray, model)
        assert np.all(np.diff(values) <= 1e-9)
        assert abs(mk_depth(ray[0], model) - values[0]) < 1e-15
