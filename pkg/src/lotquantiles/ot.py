"""Discrete optimal transport between histograms, squared Euclidean cost.

Two solvers are provided:

* :func:`solve_exact` runs a primal network simplex on the bipartite
  transport graph. Costs are evaluated on the fly from pixel coordinates, so
  no dense ``p x p`` matrix is ever stored; only the ``n + m`` arcs of the
  current spanning tree carry flow.
* :func:`solve_entropic` runs Sinkhorn iterations, log-stabilized by
  absorbing the scalings into dual potentials.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np
from scipy import sparse
from scipy.special import logsumexp

from .errors import DomainError, NumericalError
from .histogram import ImageHistogram, PixelGrid

LOG_DOMAIN_THRESHOLD = 0.01
_EPS = 2.220446049250313e-15
_ABSORB = 50.0


@dataclass(frozen=True, eq=False)
class TransportPlan:
    """A coupling between two histograms with its squared-distance cost."""

    source: ImageHistogram
    target: ImageHistogram
    coupling: sparse.csr_matrix = field(repr=False)
    cost: float
    n_iter: int = 0
    # Dual potentials on the supports: cost_ij >= g_j - f_i for the simplex.
    duals: tuple | None = field(default=None, repr=False)

    def is_map(self) -> bool:
        """True if every source pixel sends all of its mass to one target pixel."""
        counts = np.diff(self.coupling.indptr)
        supported = self.source.weights > 0
        return bool(np.all(counts[supported] == 1))

    def marginal_errors(self) -> tuple[float, float]:
        rows = np.asarray(self.coupling.sum(axis=1)).ravel()
        cols = np.asarray(self.coupling.sum(axis=0)).ravel()
        return (float(np.abs(rows - self.source.weights).max()),
                float(np.abs(cols - self.target.weights).max()))

    def recompute_cost(self) -> float:
        return transport_cost(self.coupling, self.source.grid, self.target.grid)


@dataclass(frozen=True, eq=False)
class MongeMapGrid:
    """Images ``T(omega_i)`` of every source pixel, shape ``(p, 2)``."""

    grid: PixelGrid
    targets: np.ndarray


def squared_distances(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    # Exact for integer pixel coordinates, unlike the |x|^2 + |y|^2 - 2xy expansion.
    diff = x[:, None, :] - y[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def transport_cost(coupling, source_grid: PixelGrid, target_grid: PixelGrid) -> float:
    coo = coupling.tocoo()
    xs = source_grid.coordinates()[coo.row]
    xt = target_grid.coordinates()[coo.col]
    return float(np.sum(coo.data * np.sum((xs - xt) ** 2, axis=1)))


# --------------------------------------------------------------------------
# Network simplex
# --------------------------------------------------------------------------

@numba.njit(cache=True, nogil=True)
def _arc_cost(e, n, m, xs, xt, art):
    n_arcs = n * m
    if e >= n_arcs:
        node = e - n_arcs
        return 0.0 if node < n else art
    i = e // m
    j = e - i * m
    c = 0.0
    for k in range(xs.shape[1]):
        d = xs[i, k] - xt[j, k]
        c += d * d
    return c


@numba.njit(cache=True, nogil=True)
def _arc_ends(e, n, m):
    n_arcs = n * m
    root = n + m
    if e >= n_arcs:
        node = e - n_arcs
        if node < n:
            return node, root
        return root, node
    i = e // m
    return i, n + (e - i * m)


@numba.njit(cache=True, nogil=True)
def _rebuild_tree(tree_arc, n, m, xs, xt, art, parent, pslot, up, depth, pi,
                  deg, offs, adj_node, adj_slot, queue):
    n_nodes = n + m + 1
    root = n + m
    deg[:] = 0
    for s in range(tree_arc.size):
        u, v = _arc_ends(tree_arc[s], n, m)
        deg[u] += 1
        deg[v] += 1
    offs[0] = 0
    for k in range(n_nodes):
        offs[k + 1] = offs[k] + deg[k]
    deg[:] = 0
    for s in range(tree_arc.size):
        u, v = _arc_ends(tree_arc[s], n, m)
        adj_node[offs[u] + deg[u]] = v
        adj_slot[offs[u] + deg[u]] = s
        deg[u] += 1
        adj_node[offs[v] + deg[v]] = u
        adj_slot[offs[v] + deg[v]] = s
        deg[v] += 1
    parent[:] = -1
    parent[root] = root
    depth[root] = 0
    pi[root] = 0.0
    head = 0
    tail = 1
    queue[0] = root
    while head < tail:
        p = queue[head]
        head += 1
        for q in range(offs[p], offs[p + 1]):
            w = adj_node[q]
            if parent[w] != -1:
                continue
            s = adj_slot[q]
            parent[w] = p
            pslot[w] = s
            depth[w] = depth[p] + 1
            c = _arc_cost(tree_arc[s], n, m, xs, xt, art)
            src, _ = _arc_ends(tree_arc[s], n, m)
            if src == w:
                up[w] = True
                pi[w] = pi[p] - c
            else:
                up[w] = False
                pi[w] = pi[p] + c
            queue[tail] = w
            tail += 1
    return tail


@numba.njit(cache=True, nogil=True)
def _network_simplex(a, b, xs, xt, max_iter):
    n = a.size
    m = b.size
    n_nodes = n + m + 1
    root = n + m
    n_arcs = n * m

    cmax = 0.0
    for k in range(xs.shape[1]):
        lo = min(xs[:, k].min(), xt[:, k].min())
        hi = max(xs[:, k].max(), xt[:, k].max())
        cmax += (hi - lo) ** 2
    art = (cmax + 1.0) * n_nodes

    tree_arc = np.empty(n + m, dtype=np.int64)
    tree_flow = np.empty(n + m, dtype=np.float64)
    for k in range(n):
        tree_arc[k] = n_arcs + k
        tree_flow[k] = a[k]
    for k in range(m):
        tree_arc[n + k] = n_arcs + n + k
        tree_flow[n + k] = b[k]

    parent = np.empty(n_nodes, dtype=np.int64)
    pslot = np.zeros(n_nodes, dtype=np.int64)
    up = np.zeros(n_nodes, dtype=np.bool_)
    depth = np.zeros(n_nodes, dtype=np.int64)
    pi = np.zeros(n_nodes, dtype=np.float64)
    deg = np.zeros(n_nodes, dtype=np.int64)
    offs = np.zeros(n_nodes + 1, dtype=np.int64)
    adj_node = np.empty(2 * (n + m), dtype=np.int64)
    adj_slot = np.empty(2 * (n + m), dtype=np.int64)
    queue = np.empty(n_nodes, dtype=np.int64)

    block = max(10, int(np.sqrt(n_arcs)))
    next_arc = 0
    it = 0
    optimal = False
    while it < max_iter:
        _rebuild_tree(tree_arc, n, m, xs, xt, art, parent, pslot, up, depth, pi,
                      deg, offs, adj_node, adj_slot, queue)

        # Block search pricing: the most negative reduced cost in the first
        # block that contains an eligible arc, scanning cyclically.
        best = 0.0
        e_in = -1
        cnt = block
        found = False
        for step in range(n_arcs):
            e = next_arc + step
            if e >= n_arcs:
                e -= n_arcs
            i = e // m
            t = n + (e - i * m)
            c = _arc_cost(e, n, m, xs, xt, art)
            rc = c + pi[i] - pi[t]
            if rc < best:
                scale = max(abs(c), max(abs(pi[i]), abs(pi[t])))
                if rc < -_EPS * scale * 10.0:
                    is_tree = (parent[i] == t and tree_arc[pslot[i]] == e) or \
                              (parent[t] == i and tree_arc[pslot[t]] == e)
                    if not is_tree:
                        best = rc
                        e_in = e
            cnt -= 1
            if cnt == 0:
                if e_in >= 0:
                    next_arc = e + 1
                    if next_arc >= n_arcs:
                        next_arc = 0
                    found = True
                    break
                cnt = block
        if not found and e_in >= 0:
            found = True
        if not found:
            optimal = True
            break

        u_s = e_in // m
        u_t = n + (e_in - u_s * m)
        # Join node of the cycle.
        x = u_s
        y = u_t
        while x != y:
            if depth[x] >= depth[y]:
                x = parent[x]
            else:
                y = parent[y]
        join = x

        # Leaving arc: last blocking arc along the cycle orientation
        # join -> ... -> source -> target -> ... -> join (strongly feasible tree).
        delta = np.inf
        leave = -1
        w = u_s
        while w != join:
            if up[w]:
                f = tree_flow[pslot[w]]
                if f < delta:
                    delta = f
                    leave = w
            w = parent[w]
        w = u_t
        while w != join:
            if not up[w]:
                f = tree_flow[pslot[w]]
                if f <= delta:
                    delta = f
                    leave = w
            w = parent[w]
        if leave < 0:
            return tree_arc, tree_flow, pi, it, 2

        if delta > 0:
            w = u_s
            while w != join:
                s = pslot[w]
                if up[w]:
                    tree_flow[s] -= delta
                else:
                    tree_flow[s] += delta
                w = parent[w]
            w = u_t
            while w != join:
                s = pslot[w]
                if up[w]:
                    tree_flow[s] += delta
                else:
                    tree_flow[s] -= delta
                w = parent[w]
        s_out = pslot[leave]
        tree_arc[s_out] = e_in
        tree_flow[s_out] = delta
        it += 1

    if optimal:
        return tree_arc, tree_flow, pi, it, 0
    _rebuild_tree(tree_arc, n, m, xs, xt, art, parent, pslot, up, depth, pi,
                  deg, offs, adj_node, adj_slot, queue)
    return tree_arc, tree_flow, pi, it, 1


def network_simplex(a: np.ndarray, b: np.ndarray, xs: np.ndarray, xt: np.ndarray,
                    max_iter: int | None = None):
    """Exact OT between weighted point sets ``(a, xs)`` and ``(b, xt)``.

    Returns ``(rows, cols, flows, f, g, n_iter)`` where the coupling is
    sparse in ``(rows, cols, flows)`` and the duals satisfy
    ``|xs_i - xt_j|^2 >= g_j - f_i`` with equality on the support.
    Raises :class:`NumericalError` if the pivot budget is exhausted.
    """
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    xs = np.ascontiguousarray(xs, dtype=np.float64).reshape(a.size, -1)
    xt = np.ascontiguousarray(xt, dtype=np.float64).reshape(b.size, -1)
    n, m = a.size, b.size
    if max_iter is None:
        max_iter = 200 * (n + m) + 10_000
    tree_arc, tree_flow, pi, n_iter, status = _network_simplex(a, b, xs, xt, int(max_iter))
    f = pi[:n].copy()
    g = pi[n : n + m].copy()
    transport = tree_arc < n * m
    arcs = tree_arc[transport]
    flows = tree_flow[transport]
    keep = flows > 0
    arcs, flows = arcs[keep], flows[keep]
    rows, cols = np.divmod(arcs, m)
    primal = float(np.sum(flows * np.sum((xs[rows] - xt[cols]) ** 2, axis=1)))
    if status != 0:
        dual = float(b @ g - a @ f)
        raise NumericalError(
            f"network simplex stopped after {n_iter} pivots without reaching optimality "
            f"(duality gap {primal - dual:.3e})"
        )
    artificial = tree_flow[~transport]
    if artificial.size and artificial.max() > 1e-9:
        raise NumericalError(f"infeasible transport problem (artificial flow {artificial.max():.3e})")
    order = np.lexsort((cols, rows))
    return rows[order], cols[order], flows[order], f, g, n_iter


def solve_exact(a: ImageHistogram, b: ImageHistogram, max_iter: int | None = None) -> TransportPlan:
    """Optimal coupling for the squared Euclidean cost between two histograms.

    Zero-mass pixels are removed before solving; the plan is returned on the
    full grids. ``plan.cost`` is the squared 2-Wasserstein distance.
    """
    sa, sb = a.support(), b.support()
    xs = a.grid.coordinates()[sa]
    xt = b.grid.coordinates()[sb]
    rows, cols, flows, f, g, n_iter = network_simplex(a.weights[sa], b.weights[sb], xs, xt, max_iter)
    coupling = sparse.csr_matrix((flows, (sa[rows], sb[cols])), shape=(a.grid.size, b.grid.size))
    cost = float(np.sum(flows * np.sum((xs[rows] - xt[cols]) ** 2, axis=1)))
    return TransportPlan(a, b, coupling, cost, n_iter=n_iter, duals=(f, g))


# --------------------------------------------------------------------------
# Assignment (uniform weights, equal or larger target set)
# --------------------------------------------------------------------------

@numba.njit(cache=True, nogil=True)
def _inner(A, B, i, j):
    c = 0.0
    for t in range(A.shape[1]):
        c += A[i, t] * B[j, t]
    return c


@numba.njit(cache=True, nogil=True)
def _assignment_inner(A, B, f0, g0):
    # Shortest augmenting paths on the cost -<a_i, b_j>, 1-based with a
    # virtual column 0. Starts from feasible duals (f0, g0), <a_i, b_j> <=
    # f_i + g_j, greedily matches tight pairs, then augments the remaining
    # rows one at a time. u = -f and v = -g are the cost-side potentials.
    n, m = A.shape[0], B.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    p = np.zeros(m + 1, dtype=np.int64)
    way = np.zeros(m + 1, dtype=np.int64)
    minv = np.empty(m + 1)
    used = np.zeros(m + 1, dtype=np.bool_)
    for j in range(m):
        v[j + 1] = -g0[j]
    for i in range(n):
        u[i + 1] = -f0[i]
    matched = np.zeros(n + 1, dtype=np.bool_)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            if p[j] == 0 and -_inner(A, B, i - 1, j - 1) - u[i] - v[j] <= 0.0:
                p[j] = i
                matched[i] = True
                break
    for i in range(1, n + 1):
        if matched[i]:
            continue
        p[0] = i
        j0 = 0
        minv[:] = np.inf
        used[:] = False
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = np.inf
            j1 = 0
            for j in range(1, m + 1):
                if used[j]:
                    continue
                cur = -_inner(A, B, i0 - 1, j - 1) - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(m + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0 != 0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    match = np.empty(n, dtype=np.int64)
    for j in range(1, m + 1):
        if p[j] != 0:
            match[p[j] - 1] = j - 1
    return match, -u[1:], -v[1:]


@numba.njit(cache=True, nogil=True)
def _c_transform(A, B, g):
    # f_i = max_j <a_i, b_j> - g_j
    n, m = A.shape[0], B.shape[0]
    f = np.empty(n)
    for i in range(n):
        best = -np.inf
        for j in range(m):
            val = _inner(A, B, i, j) - g[j]
            if val > best:
                best = val
        f[i] = best
    return f


_COARSE_MIN = 512


def _initial_duals(A: np.ndarray, B: np.ndarray):
    """Feasible duals for the full problem, from a solve on a quarter subsample."""
    n, m = A.shape[0], B.shape[0]
    g = np.zeros(m)
    if n == m and n >= _COARSE_MIN:
        # Fixed subsample so that results do not depend on global RNG state.
        keep = np.sort(np.random.default_rng(0).permutation(n)[: n // 4])
        _, _, g_sub = max_inner_assignment(A[keep], B[keep])
        f_sub = _c_transform(A, B[keep], g_sub)
        g = _c_transform(B, A, f_sub)
    f = _c_transform(A, B, g)
    return f, g


def max_inner_assignment(A: np.ndarray, B: np.ndarray):
    """Injective map ``i -> match[i]`` maximizing ``sum_i <A_i, B_match[i]>``.

    Requires ``len(A) <= len(B)``. Returns ``(match, f, g)`` with
    ``<A_i, B_j> <= f_i + g_j`` for all pairs and equality on the matching.
    Large square problems are warm-started from a subsample solution
    extended by c-transforms, which keeps the duals feasible.
    """
    A = np.ascontiguousarray(A, dtype=np.float64)
    B = np.ascontiguousarray(B, dtype=np.float64)
    if A.ndim != 2 or B.ndim != 2 or A.shape[1] != B.shape[1]:
        raise DomainError("expected two point sets of equal dimension")
    if A.shape[0] > B.shape[0]:
        raise DomainError("assignment needs at least as many columns as rows")
    f0, g0 = _initial_duals(A, B)
    return _assignment_inner(A, B, f0, g0)


# --------------------------------------------------------------------------
# Sinkhorn
# --------------------------------------------------------------------------

def epsilon_schedule(start: float, end: float, stages: int) -> np.ndarray:
    """Geometric, strictly decreasing regularization schedule."""
    if stages < 1 or not start > 0 or not end > 0:
        raise DomainError("schedule needs stages >= 1 and positive endpoints")
    if stages == 1:
        return np.array([float(end)])
    if not start > end:
        raise DomainError("schedule must decrease")
    return np.geomspace(start, end, stages)


@dataclass
class SinkhornResult:
    f: np.ndarray
    g: np.ndarray
    n_iter: int
    error: float
    converged: bool


def _row_error(a, b, K, u, v):
    return float(np.abs(a * u * (K @ (b * v)) - a).sum())


def sinkhorn(a: np.ndarray, b: np.ndarray, C: np.ndarray, epsilon: float,
             f: np.ndarray | None = None, g: np.ndarray | None = None,
             max_iter: int = 10_000, tol: float = 1e-9, log_domain: bool | None = None,
             check_every: int = 10) -> SinkhornResult:
    """Entropic OT dual potentials for the plan ``a_i b_j exp((f_i + g_j - C_ij) / eps)``.

    In log-domain mode the scalings are periodically absorbed into ``f, g``
    (and a full log-sum-exp update is used whenever a kernel row underflows),
    so any ``epsilon > 0`` is safe. Without it, a single Gibbs kernel is used
    and an underflowing kernel raises :class:`NumericalError`.
    """
    if not epsilon > 0:
        raise DomainError("epsilon must be positive")
    # Below the threshold the plain Gibbs kernel underflows too easily.
    log_domain = True if log_domain is None or epsilon < LOG_DOMAIN_THRESHOLD else log_domain
    n, m = C.shape
    f = np.zeros(n) if f is None else np.array(f, dtype=np.float64)
    g = np.zeros(m) if g is None else np.array(g, dtype=np.float64)
    log_a, log_b = np.log(a), np.log(b)
    it = 0
    err = np.inf
    while it < max_iter:
        K = np.exp((f[:, None] + g[None, :] - C) / epsilon)
        u = np.ones(n)
        v = np.ones(m)
        absorb = False
        while it < max_iter:
            Kv = K @ (b * v)
            with np.errstate(divide="ignore"):
                u = 1.0 / Kv
            Ktu = K.T @ (a * u)
            with np.errstate(divide="ignore", invalid="ignore"):
                v = 1.0 / Ktu
            it += 1
            if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
                if not log_domain:
                    raise NumericalError(
                        f"Gibbs kernel underflow at epsilon={epsilon:g}; "
                        "use log_domain=True or a larger epsilon"
                    )
                # Exact log-sum-exp step re-centres the potentials.
                f = -epsilon * logsumexp((g[None, :] - C) / epsilon + log_b[None, :], axis=1)
                g = -epsilon * logsumexp((f[:, None] - C) / epsilon + log_a[:, None], axis=0)
                absorb = True
                u = v = None
                break
            if it % check_every == 0:
                err = _row_error(a, b, K, u, v)
                if err < tol:
                    break
            if log_domain and max(np.abs(np.log(u)).max(), np.abs(np.log(v)).max()) > _ABSORB:
                absorb = True
                break
        if u is not None:
            f = f + epsilon * np.log(u)
            g = g + epsilon * np.log(v)
        if err < tol:
            break
        if not absorb and it >= max_iter:
            break
    K = np.exp((f[:, None] + g[None, :] - C) / epsilon)
    err = float(np.abs(a * (K @ b) - a).sum() + np.abs(b * (K.T @ a) - b).sum())
    return SinkhornResult(f, g, it, err, err < tol)


def solve_entropic(a: ImageHistogram, b: ImageHistogram, epsilon, max_iter: int = 10_000,
                   tol: float = 1e-6, log_domain: bool | None = None) -> TransportPlan:
    """Entropic OT plan; ``epsilon`` may be a float or a decreasing schedule.

    Each stage is warm-started from the previous one. ``plan.cost`` is the
    unregularized cost of the returned coupling.
    """
    schedule = np.atleast_1d(np.asarray(epsilon, dtype=np.float64))
    if np.any(np.diff(schedule) >= 0):
        raise DomainError("epsilon schedule must be strictly decreasing")
    sa, sb = a.support(), b.support()
    wa, wb = a.weights[sa], b.weights[sb]
    C = squared_distances(a.grid.coordinates()[sa], b.grid.coordinates()[sb])
    f = g = None
    total = 0
    for stage, eps in enumerate(schedule):
        res = sinkhorn(wa, wb, C, float(eps), f, g, max_iter=max_iter, tol=tol, log_domain=log_domain)
        total += res.n_iter
        if not res.converged:
            raise NumericalError(
                f"Sinkhorn did not converge at stage {stage} (epsilon={eps:g}): "
                f"marginal error {res.error:.3e} after {res.n_iter} iterations"
            )
        f, g = res.f, res.g
    P = wa[:, None] * wb[None, :] * np.exp((f[:, None] + g[None, :] - C) / schedule[-1])
    coupling = sparse.csr_matrix(
        (P.ravel(), (np.repeat(sa, sb.size), np.tile(sb, sa.size))),
        shape=(a.grid.size, b.grid.size),
    )
    return TransportPlan(a, b, coupling, float(np.sum(P * C)), n_iter=total, duals=(f, g))


# --------------------------------------------------------------------------
# Monge map surrogate and distance
# --------------------------------------------------------------------------

def barycentric_map(plan: TransportPlan) -> MongeMapGrid:
    """Barycentric projection ``T(w_i) = sum_j pi_ij w'_j / sum_j pi_ij``.

    Pixels without source mass are mapped to themselves.
    """
    src = plan.source.grid.coordinates()
    tgt = plan.target.grid.coordinates()
    row_mass = np.asarray(plan.coupling.sum(axis=1)).ravel()
    moved = plan.coupling @ tgt
    targets = src.copy()
    ok = row_mass > 0
    targets[ok] = moved[ok] / row_mass[ok, None]
    # Rows with a single entry are exact lattice points; skip the division round-off.
    csr = plan.coupling.tocsr()
    single = np.flatnonzero(np.diff(csr.indptr) == 1)
    targets[single] = tgt[csr.indices[csr.indptr[single]]]
    return MongeMapGrid(plan.source.grid, targets)


def wasserstein(a: ImageHistogram, b: ImageHistogram) -> float:
    return float(np.sqrt(max(solve_exact(a, b).cost, 0.0)))
