"""Reference computations that share no code with the package under test.

Everything here is plain numpy/scipy: a dense LP over the coupling
polytope, brute-force and Hungarian assignments, Monte-Carlo estimates and
a pairwise AUC.
"""

from __future__ import annotations

import itertools

import numpy as np
from scipy.optimize import linear_sum_assignment, linprog


def grid_points(h: int, w: int) -> np.ndarray:
    r, c = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    return np.c_[r.ravel(), c.ravel()].astype(float)


def lp_transport(a, b, xs, xt):
    """Optimal cost and coupling of the dense transport LP (HiGHS)."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    n, m = a.size, b.size
    C = ((xs[:, None, :] - xt[None, :, :]) ** 2).sum(-1)
    A_eq = np.zeros((n + m, n * m))
    for i in range(n):
        A_eq[i, i * m:(i + 1) * m] = 1.0
    for j in range(m):
        A_eq[n + j, j::m] = 1.0
    res = linprog(C.ravel(), A_eq=A_eq, b_eq=np.r_[a, b], bounds=(0, None), method="highs",
                  options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10})
    assert res.status == 0, res.message
    return float(res.fun), res.x.reshape(n, m)


def brute_force_assignment(cost: np.ndarray) -> tuple[int, ...]:
    """Permutation minimizing ``sum_i cost[i, perm[i]]`` by enumeration (lowest first on ties)."""
    n = cost.shape[0]
    best, arg = np.inf, None
    for perm in itertools.permutations(range(n)):
        c = sum(cost[i, perm[i]] for i in range(n))
        if c < best - 1e-12:
            best, arg = c, perm
    return arg


def hungarian_max_inner(X: np.ndarray, U: np.ndarray) -> np.ndarray:
    """Reference index assigned to each data row, maximizing ``sum <u, x>``."""
    rows, cols = linear_sum_assignment(-(X @ U.T))
    out = np.empty(len(X), dtype=int)
    out[rows] = cols
    return out


def monte_carlo_halfspace_depth(r: float, d: int, draws: int, seed: int) -> float:
    """``P(<R Phi, e1> >= r)`` with ``R ~ U[0, 1]`` and ``Phi`` uniform on the sphere."""
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((draws, d))
    first = z[:, 0] / np.linalg.norm(z, axis=1)
    radius = rng.uniform(0.0, 1.0, draws)
    return float(np.mean(radius * first >= r))


def pairwise_auc(scores, labels) -> float:
    """``P(outlier score < inlier score) + P(tie) / 2`` over all pairs."""
    s = np.asarray(scores, float)
    y = np.asarray(labels, bool)
    pos, neg = s[y], s[~y]
    less = (pos[:, None] < neg[None, :]).sum()
    ties = (pos[:, None] == neg[None, :]).sum()
    return float((less + 0.5 * ties) / (pos.size * neg.size))


def chi2_monte_carlo_quantile(d: int, prob: float, draws: int, seed: int) -> float:
    rng = np.random.default_rng(seed)
    total = np.zeros(draws)
    for _ in range(d):
        total += rng.standard_normal(draws) ** 2
    return float(np.quantile(total, prob))


def ks_uniform_statistic(x) -> float:
    """Two-sided Kolmogorov-Smirnov distance between a sample and Uniform[0, 1]."""
    x = np.sort(np.asarray(x, float))
    n = x.size
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - x), np.max(x - (i - 1) / n)))


def ks_critical(n: int, level: float) -> float:
    """Asymptotic two-sided KS critical value ``sqrt(-log(level / 2) / 2) / sqrt(n)``."""
    return float(np.sqrt(-0.5 * np.log(level / 2.0)) / np.sqrt(n))
