import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import sparse

from oracles import grid_points, hungarian_max_inner, lp_transport
from lotquantiles.errors import DomainError, NumericalError
from lotquantiles.histogram import ImageHistogram, PixelGrid
from lotquantiles.ot import (TransportPlan, barycentric_map, epsilon_schedule, max_inner_assignment,
                             network_simplex, sinkhorn, solve_entropic, solve_exact, squared_distances,
                             wasserstein)


def random_hist(rng, h, w, sparsity=0.0):
    v = rng.uniform(0.0, 1.0, h * w)
    v[rng.uniform(size=h * w) < sparsity] = 0.0
    if v.sum() == 0:
        v[0] = 1.0
    return ImageHistogram(PixelGrid(h, w), v / v.sum())


def point_mass(grid, r, c):
    w = np.zeros(grid.size)
    w[r * grid.width + c] = 1.0
    return ImageHistogram(grid, w)


def test_identity_plan(rng):
    a = random_hist(rng, 4, 4)
    plan = solve_exact(a, a)
    assert plan.cost == 0.0
    dense = plan.coupling.toarray()
    np.testing.assert_allclose(np.diag(dense), a.weights, atol=1e-15)
    assert np.count_nonzero(dense - np.diag(np.diag(dense))) == 0


def test_single_point_transport():
    g = PixelGrid(2, 2)
    plan = solve_exact(point_mass(g, 0, 0), point_mass(g, 1, 0))
    assert plan.cost == 1.0
    assert plan.coupling.nnz == 1
    assert plan.is_map()


def test_three_by_three_lp_oracle():
    rng = np.random.default_rng(7)
    a, b = random_hist(rng, 3, 3), random_hist(rng, 3, 3)
    ref, _ = lp_transport(a.weights, b.weights, grid_points(3, 3), grid_points(3, 3))
    assert abs(solve_exact(a, b).cost - ref) < 1e-8


@given(st.integers(0, 10_000), st.integers(1, 4), st.integers(1, 4), st.integers(1, 4), st.integers(1, 4),
       st.sampled_from([0.0, 0.3, 0.6]))
def test_lp_oracle_property(seed, h1, w1, h2, w2, sparsity):
    rng = np.random.default_rng(seed)
    a, b = random_hist(rng, h1, w1, sparsity), random_hist(rng, h2, w2, sparsity)
    plan = solve_exact(a, b)
    ref, _ = lp_transport(a.weights, b.weights, grid_points(h1, w1), grid_points(h2, w2))
    assert abs(plan.cost - ref) < 1e-8
    ra, rb = plan.marginal_errors()
    assert ra < 1e-12 and rb < 1e-12
    assert abs(plan.recompute_cost() - plan.cost) < 1e-12


@given(st.integers(0, 10_000), st.integers(2, 12), st.integers(2, 12))
def test_simplex_duals_certify_optimality(seed, n, m):
    rng = np.random.default_rng(seed)
    a = rng.dirichlet(np.ones(n))
    b = rng.dirichlet(np.ones(m))
    xs, xt = rng.normal(size=(n, 2)), rng.normal(size=(m, 2))
    rows, cols, flows, f, g, _ = network_simplex(a, b, xs, xt)
    C = squared_distances(xs, xt)
    assert np.all(C - (g[None, :] - f[:, None]) >= -1e-9)
    np.testing.assert_allclose(C[rows, cols], g[cols] - f[rows], atol=1e-9)
    primal = float(np.sum(flows * C[rows, cols]))
    assert abs(primal - (b @ g - a @ f)) < 1e-9


def test_simplex_budget_error(rng):
    a, b = random_hist(rng, 4, 4), random_hist(rng, 4, 4)
    with pytest.raises(NumericalError, match="duality gap"):
        solve_exact(a, b, max_iter=1)


def test_entropic_identity_limit(rng):
    a = random_hist(rng, 3, 3)
    costs = [solve_entropic(a, a, eps, tol=1e-6, max_iter=100_000).cost for eps in (1.0, 0.5, 0.25, 0.125, 0.0625)]
    assert all(x > y for x, y in zip(costs, costs[1:]))
    assert costs[-1] < 1e-3


@given(st.floats(0.05, 0.95), st.floats(0.05, 0.95), st.booleans())
def test_entropic_high_temperature_product(p, q, vertical):
    # Coupling entries are probabilities; deviation is measured in absolute mass.
    g = PixelGrid(2, 1) if vertical else PixelGrid(1, 2)
    a = ImageHistogram(g, np.array([p, 1 - p]))
    b = ImageHistogram(g, np.array([q, 1 - q]))
    plan = solve_entropic(a, b, 10.0, tol=1e-12)
    P = plan.coupling.toarray()
    assert np.max(np.abs(P - np.outer(a.weights, b.weights))) < 0.05


def test_entropic_schedule_close_to_exact():
    rng = np.random.default_rng(7)
    a, b = random_hist(rng, 3, 3), random_hist(rng, 3, 3)
    exact = solve_exact(a, b).cost
    plan = solve_entropic(a, b, epsilon_schedule(1.0, 1e-3, 10), tol=1e-9)
    assert abs(plan.cost - exact) <= 0.01 * exact


def test_entropic_plain_kernel_underflow():
    # Every source point is ~30 pixels from every target: exp(-C / eps) is 0.
    xs = np.array([[0.0, 0.0], [1.0, 0.0]])
    xt = np.array([[30.0, 0.0], [31.0, 0.0], [32.0, 0.0]])
    C = squared_distances(xs, xt)
    a, b = np.array([0.4, 0.6]), np.array([0.2, 0.3, 0.5])
    with pytest.raises(NumericalError, match="underflow"):
        sinkhorn(a, b, C, 0.5, log_domain=False)
    res = sinkhorn(a, b, C, 0.5, log_domain=True, tol=1e-10)
    assert res.converged
    P = a[:, None] * b[None, :] * np.exp((res.f[:, None] + res.g[None, :] - C) / 0.5)
    np.testing.assert_allclose(P.sum(axis=1), a, atol=1e-9)


def test_entropic_nonconvergence_reports(rng):
    a, b = random_hist(rng, 4, 4), random_hist(rng, 4, 4)
    with pytest.raises(NumericalError, match="marginal error"):
        solve_entropic(a, b, 1e-3, max_iter=2)


def test_epsilon_schedule_validation():
    with pytest.raises(DomainError):
        epsilon_schedule(1e-3, 1.0, 5)
    with pytest.raises(DomainError):
        solve_entropic(random_hist(np.random.default_rng(0), 2, 2), random_hist(np.random.default_rng(1), 2, 2),
                       [0.1, 0.5])
    assert epsilon_schedule(1.0, 0.5, 1).tolist() == [0.5]


def test_barycentric_identity(rng):
    a = random_hist(rng, 3, 4, sparsity=0.3)
    T = barycentric_map(solve_exact(a, a))
    np.testing.assert_array_equal(T.targets, a.grid.coordinates())


def test_barycentric_split_midpoint():
    g = PixelGrid(3, 1)
    src = point_mass(g, 1, 0)
    tgt = ImageHistogram(g, np.array([0.5, 0.0, 0.5]))
    coupling = sparse.csr_matrix(([0.5, 0.5], ([1, 1], [0, 2])), shape=(3, 3))
    plan = TransportPlan(src, tgt, coupling, 1.0)
    assert barycentric_map(plan).targets[1].tolist() == [1.0, 0.0]
    assert not plan.is_map()


def test_barycentric_reproduces_permutation(rng):
    g = PixelGrid(2, 3)
    perm = rng.permutation(6)
    w = np.full(6, 1 / 6)
    src, tgt = ImageHistogram(g, w), ImageHistogram(g, w)
    coupling = sparse.csr_matrix((w, (np.arange(6), perm)), shape=(6, 6))
    T = barycentric_map(TransportPlan(src, tgt, coupling, 0.0))
    np.testing.assert_array_equal(T.targets, g.coordinates()[perm])


def test_wasserstein_basics(rng):
    a = random_hist(rng, 3, 3)
    assert wasserstein(a, a) == 0.0
    g = PixelGrid(1, 5)
    assert wasserstein(point_mass(g, 0, 1), point_mass(g, 0, 4)) == 3.0


def test_triangle_inequality():
    for seed in range(30):
        rng = np.random.default_rng(seed)
        a, b, c = (random_hist(rng, 3, 3, 0.2) for _ in range(3))
        assert wasserstein(a, c) <= wasserstein(a, b) + wasserstein(b, c) + 1e-9


@given(st.integers(0, 10_000), st.integers(1, 40), st.integers(0, 10), st.integers(1, 4))
def test_assignment_matches_hungarian(seed, n, extra, d):
    rng = np.random.default_rng(seed)
    A, B = rng.normal(size=(n, d)), rng.normal(size=(n + extra, d))
    match, f, g = max_inner_assignment(A, B)
    assert len(set(match.tolist())) == n
    S = A @ B.T
    ref = hungarian_max_inner(A, B)
    assert abs(S[np.arange(n), match].sum() - S[np.arange(n), ref].sum()) < 1e-9
    assert np.all(f[:, None] + g[None, :] - S >= -1e-9)
    np.testing.assert_allclose(f + g[match], S[np.arange(n), match], atol=1e-9)


def test_assignment_warm_start_path():
    rng = np.random.default_rng(3)
    A, B = rng.normal(size=(600, 2)), rng.uniform(-1, 1, size=(600, 2))
    match, _, _ = max_inner_assignment(A, B)
    S = A @ B.T
    ref = hungarian_max_inner(A, B)
    assert abs(S[np.arange(600), match].sum() - S[np.arange(600), ref].sum()) < 1e-8


def test_assignment_validation():
    with pytest.raises(DomainError):
        max_inner_assignment(np.zeros((3, 2)), np.zeros((2, 2)))
    with pytest.raises(DomainError):
        max_inner_assignment(np.zeros((2, 2)), np.zeros((2, 3)))
