"""Monge-Kantorovich ranks, quantiles and depth for a point cloud.

A reference sample ``u_1..u_M`` (spherical uniform or standard Gaussian) is
coupled to the data ``X_1..X_n`` by entropic OT for the cost
``-<u, x>``, annealed along a decreasing epsilon schedule. The resulting
dual potentials ``psi`` (on the reference) and ``psi_conj`` (on the data)
define

* ``rank(x)     = argmax_j <u_j, x> - psi_j``   (or its softmax average),
* ``quantile(u) = argmax_i <u, X_i> - psi_conj_i`` (or its softmax average),
* ``depth(x)``  = halfspace depth of ``rank(x)`` under the reference law.

Hard (argmax) maps use the potentials of the unregularized problem, the
limit of the schedule: at any fixed epsilon the entropic argmax need not
be injective on the data. Softmax maps use the entropic potentials.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numba
import numpy as np
from scipy import integrate, special, stats

from .errors import DomainError, NumericalError
from .ot import max_inner_assignment, network_simplex, sinkhorn

REFERENCE_KINDS = ("spherical_uniform", "gaussian")
DEFAULT_EPS_START = 1.0
DEFAULT_EPS_END = 1e-3
DEFAULT_STAGES = 10


@dataclass(frozen=True, eq=False)
class ReferenceSample:
    points: np.ndarray = field(repr=False)
    kind: str = "spherical_uniform"
    seed: int = 0

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True, eq=False)
class QuantileModel:
    """Dual potentials between a reference sample and the data.

    ``psi`` / ``psi_conj`` are the entropic potentials at the final epsilon
    (None when fitted with ``entropic=False``); ``psi_exact`` /
    ``psi_conj_exact`` are optimal duals of the unregularized problem, the
    epsilon -> 0 limit, and ``assignment[i]`` is the reference index
    transported to data point ``i``.
    """

    reference: ReferenceSample
    data: np.ndarray = field(repr=False)
    psi: np.ndarray | None = field(repr=False)
    psi_conj: np.ndarray | None = field(repr=False)
    psi_exact: np.ndarray = field(repr=False)
    psi_conj_exact: np.ndarray = field(repr=False)
    assignment: np.ndarray = field(repr=False)
    epsilon_schedule: np.ndarray = field(repr=False)
    n_iter: int = 0

    @property
    def final_epsilon(self) -> float:
        return float(self.epsilon_schedule[-1])

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    @property
    def entropic(self) -> bool:
        return self.psi is not None

    @cached_property
    def hard_potentials(self) -> tuple[np.ndarray, np.ndarray]:
        """Exact potentials used by the hard maps.

        When ``M == n`` these are re-centred inside the optimal dual face so
        that every pair outside the assignment is strictly suboptimal
        (computed on first use, cubic in ``n``); otherwise the solver's duals.
        """
        if self.reference.size != self.data.shape[0]:
            return self.psi_exact, self.psi_conj_exact
        return _centre_duals(self.reference.points, self.data, self.assignment, self.psi_exact,
                             self.psi_conj_exact)

    def fenchel_young_gap(self, exact: bool = False) -> float:
        """``min_ij psi_j + psi_conj_i - <u_j, X_i>``.

        Nonnegative up to round-off for the exact potentials; at least about
        ``-eps log max(M, n)`` for the entropic ones.
        """
        psi, conj = (self.psi_exact, self.psi_conj_exact) if exact else (self.psi, self.psi_conj)
        if psi is None:
            raise DomainError("model was fitted without entropic potentials")
        inner = self.reference.points @ self.data.T
        return float(np.min(psi[:, None] + conj[None, :] - inner))

    def fenchel_young_slack(self) -> float:
        """Bound on the entropic Fenchel-Young violation, ``eps log max(M, n)``."""
        return self.final_epsilon * math.log(max(self.reference.size, self.data.shape[0], 2))


def sample_reference(M: int, d: int, kind: str = "spherical_uniform", seed: int = 0) -> ReferenceSample:
    """Draw ``M`` reference points in dimension ``d``.

    ``spherical_uniform`` draws ``R * Phi`` with ``R ~ U[0, 1]`` and ``Phi``
    uniform on the unit sphere; ``gaussian`` draws ``N(0, I_d)``.
    """
    if M < 1 or d < 1:
        raise DomainError("reference sample needs M >= 1 and d >= 1")
    if kind not in REFERENCE_KINDS:
        raise DomainError(f"unknown reference kind {kind!r}")
    rng = np.random.default_rng(seed)
    if kind == "gaussian":
        pts = rng.standard_normal((M, d))
    else:
        z = rng.standard_normal((M, d))
        norms = np.linalg.norm(z, axis=1, keepdims=True)
        norms[norms == 0] = 1.0
        radius = rng.uniform(0.0, 1.0, size=(M, 1))
        pts = radius * z / norms
    return ReferenceSample(pts, kind, seed)


def cost_scale(reference: ReferenceSample, data: np.ndarray) -> float:
    """Typical magnitude of ``<u, x>``: RMS reference norm times RMS centred data norm."""
    ru = math.sqrt(float(np.mean(np.sum(reference.points**2, axis=1))))
    centred = data - data.mean(axis=0)
    rx = math.sqrt(float(np.mean(np.sum(centred**2, axis=1))))
    s = ru * rx
    return s if s > 0 else 1.0


def default_schedule(reference: ReferenceSample, data: np.ndarray, start: float = DEFAULT_EPS_START,
                     end: float = DEFAULT_EPS_END, stages: int = DEFAULT_STAGES) -> np.ndarray:
    s = cost_scale(reference, data)
    if stages == 1:
        return np.array([end * s])
    return s * np.geomspace(start, end, stages)


def _exact_potentials(X: np.ndarray, U: np.ndarray):
    """Optimal duals for the cost ``-<u, x>`` with uniform weights on both sides."""
    M, n = U.shape[0], X.shape[0]
    if M == n:
        match, conj, psi = max_inner_assignment(X, U)
        return psi, conj, match
    # Unequal sizes: the plan splits mass, solve the general transport problem.
    # Squared distances give the same plan; undo the quadratic terms in the duals.
    rows, cols, flows, f, g, _ = network_simplex(np.full(M, 1.0 / M), np.full(n, 1.0 / n), U, X)
    psi = 0.5 * (np.sum(U**2, axis=1) + f)
    conj = 0.5 * (np.sum(X**2, axis=1) - g)
    best = np.zeros(n)
    match = np.zeros(n, dtype=np.int64)
    for r, c, w in zip(rows, cols, flows):
        if w > best[c]:
            best[c] = w
            match[c] = r
    return psi, conj, match


@numba.njit(cache=True, nogil=True)
def _all_pairs_shortest(D):
    n = D.shape[0]
    for k in range(n):
        for i in range(n):
            dik = D[i, k]
            for j in range(n):
                alt = dik + D[k, j]
                if alt < D[i, j]:
                    D[i, j] = alt
    return D


def _centre_duals(U, X, match, psi, conj):
    """Average of the extreme optimal duals rooted at every reference point.

    With ``i = match[k]`` the dual constraints read
    ``psi_j - psi_i >= <u_j - u_i, x_k>``; their slacks under ``psi`` are
    nonnegative edge lengths ``i -> j``. Each ``psi - dist(r, .)`` is again
    optimal, and the one rooted at ``j`` leaves the edge ``i -> j`` slack
    unless a zero-length cycle (a second optimal assignment) passes
    through it.
    """
    n = U.shape[0]
    owner = np.empty(n, dtype=np.int64)
    owner[match] = np.arange(n)
    S = psi[None, :] + conj[owner][:, None] - X[owner] @ U.T
    S = np.maximum(S, 0.0)
    np.fill_diagonal(S, 0.0)
    dist = _all_pairs_shortest(S)
    centred = psi - dist.mean(axis=0)
    new_conj = np.einsum("ij,ij->i", U[match], X) - centred[match]
    shift = centred.mean()
    return centred - shift, new_conj + shift


def fit_potentials(data, reference: ReferenceSample, schedule=None, entropic: bool = True,
                   max_iter: int = 50_000, tol: float = 1e-4) -> QuantileModel:
    """Dual potentials between the reference sample and the data.

    Both sides carry uniform weights. The entropic potentials follow the
    decreasing ``schedule``, each stage warm-started from the previous one.
    The exact potentials come from an exact solver (an assignment when
    ``M == n``). Both pairs are shifted so that ``psi`` has mean zero.
    """
    X = np.atleast_2d(np.asarray(data, dtype=np.float64))
    if X.shape[1] != reference.dim:
        raise DomainError(f"data dimension {X.shape[1]} != reference dimension {reference.dim}")
    if not np.all(np.isfinite(X)):
        raise DomainError("data must be finite")
    schedule = default_schedule(reference, X) if schedule is None else np.atleast_1d(
        np.asarray(schedule, dtype=np.float64))
    if schedule.size == 0 or np.any(schedule <= 0) or np.any(np.diff(schedule) >= 0):
        raise DomainError("schedule must be a nonempty, strictly decreasing positive sequence")
    U = reference.points
    psi0, conj0, match = _exact_potentials(X, U)
    shift = psi0.mean()
    psi0, conj0 = psi0 - shift, conj0 + shift

    psi = conj = None
    total = 0
    if entropic:
        M, n = U.shape[0], X.shape[0]
        a = np.full(M, 1.0 / M)
        b = np.full(n, 1.0 / n)
        C = -(U @ X.T)
        f = g = None
        for stage, eps in enumerate(schedule):
            res = sinkhorn(a, b, C, float(eps), f, g, max_iter=max_iter, tol=tol, log_domain=True)
            total += res.n_iter
            if not res.converged:
                raise NumericalError(
                    f"potential fit did not converge at stage {stage} (epsilon={eps:.3g}): "
                    f"marginal gap {res.error:.3e}"
                )
            f, g = res.f, res.g
        psi, conj = -f, -g
        shift = psi.mean()
        psi, conj = psi - shift, conj + shift
    return QuantileModel(reference, X, psi, conj, psi0, conj0, match, schedule, total)


def _lookup(rows: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Index of the first point bitwise equal to each row, or -1."""
    table = {}
    for k, p in enumerate(points):
        table.setdefault(p.tobytes(), k)
    return np.array([table.get(r.tobytes(), -1) for r in rows], dtype=np.int64)


def _softmax_rows(S: np.ndarray) -> np.ndarray:
    S = S - S.max(axis=1, keepdims=True)
    W = np.exp(S)
    return W / W.sum(axis=1, keepdims=True)


def _require_entropic(model: QuantileModel):
    if model.psi is None:
        raise DomainError("entropic mode needs a model fitted with entropic=True")


def hard_assignment(model: QuantileModel, X=None) -> np.ndarray:
    """Reference index that each row of ``X`` (default: the data) is ranked to.

    Scores ``<u_j, x> - psi_j`` use the exact potentials, lowest index on
    ties. Rows equal to a fitted data point return that point's transport
    assignment, which resolves the ties that exact duals leave on degenerate
    pairs.
    """
    if X is None:
        return model.assignment.copy()
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    psi, _ = model.hard_potentials
    idx = np.argmax(X @ model.reference.points.T - psi[None, :], axis=1)
    hit = _lookup(X, model.data)
    idx[hit >= 0] = model.assignment[hit[hit >= 0]]
    return idx


def rank_matrix(X, model: QuantileModel, mode: str = "entropic") -> np.ndarray:
    """Ranks of every row of ``X``."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    U = model.reference.points
    if mode == "hard":
        return U[hard_assignment(model, X)]
    if mode == "entropic":
        _require_entropic(model)
        S = X @ U.T - model.psi[None, :]
        return _softmax_rows(S / model.final_epsilon) @ U
    raise DomainError(f"unknown mode {mode!r}")


def rank(x, model: QuantileModel, mode: str = "entropic") -> np.ndarray:
    return rank_matrix(np.asarray(x, dtype=np.float64)[None, :], model, mode)[0]


def quantile_matrix(u, model: QuantileModel, mode: str = "entropic") -> np.ndarray:
    """Quantiles at every row of ``u``.

    ``hard`` extends the optimal assignment from the reference points to
    the whole ball by nearest reference point, so that ``Q(R(x_i)) = x_i``
    and ``Q(0)`` is the data point with the smallest hard rank (the
    deepest one). ``entropic`` is the softmax barycentre under the
    entropic conjugate potential.
    """
    u = np.atleast_2d(np.asarray(u, dtype=np.float64))
    if model.reference.kind == "spherical_uniform" and np.any(np.linalg.norm(u, axis=1) > 1 + 1e-12):
        raise DomainError("quantile levels must lie in the closed unit ball")
    if mode == "hard":
        U = model.reference.points
        d2 = np.sum(u**2, axis=1)[:, None] - 2.0 * u @ U.T + np.sum(U**2, axis=1)[None, :]
        nearest = np.argmin(d2, axis=1)
        hit = _lookup(u, U)
        nearest[hit >= 0] = hit[hit >= 0]
        owner = _reference_owner(model)
        return model.data[owner[nearest]]
    if mode == "entropic":
        _require_entropic(model)
        S = u @ model.data.T - model.psi_conj[None, :]
        return _softmax_rows(S / model.final_epsilon) @ model.data
    raise DomainError(f"unknown mode {mode!r}")


def _reference_owner(model: QuantileModel) -> np.ndarray:
    """Data index matched to each reference point (largest share when mass splits)."""
    M, n = model.reference.size, model.data.shape[0]
    if M == n:
        owner = np.empty_like(model.assignment)
        owner[model.assignment] = np.arange(n)
        return owner
    psi, conj = model.hard_potentials
    S = model.reference.points @ model.data.T - conj[None, :]
    return np.argmax(S, axis=1)


def quantile(u, model: QuantileModel, mode: str = "entropic") -> np.ndarray:
    return quantile_matrix(np.asarray(u, dtype=np.float64)[None, :], model, mode)[0]


def tukey_depth_spherical(r: float, d: int) -> float:
    """Halfspace depth, under the spherical uniform in dimension ``d``, of a point at radius ``r``.

    Equals ``P(<R Phi, e> >= r)`` for a unit vector ``e``. With
    ``t = cos(theta)`` the first coordinate of ``Phi`` has density
    ``c_d sin(theta)^(d-2)`` in ``theta``, so the depth is
    ``c_d * int_0^arccos(r) (1 - r / cos(theta)) sin(theta)^(d-2) dtheta``.
    """
    if not 0.0 <= r <= 1.0:
        raise DomainError(f"radius must lie in [0, 1], got {r}")
    if d < 1:
        raise DomainError("dimension must be positive")
    if r == 0.0:
        return 0.5
    if r == 1.0:
        return 0.0
    if d == 1:
        return 0.5 * (1.0 - r)
    c_d = math.exp(special.gammaln(d / 2) - special.gammaln((d - 1) / 2)) / math.sqrt(math.pi)
    value, _ = integrate.quad(lambda th: (1.0 - r / math.cos(th)) * math.sin(th) ** (d - 2),
                              0.0, math.acos(r), epsabs=1e-13, epsrel=1e-12, limit=200)
    return float(min(max(c_d * value, 0.0), 0.5))


def reference_depth(r: float, d: int, kind: str = "spherical_uniform") -> float:
    """Halfspace depth of a point at radius ``r`` under the reference law."""
    if kind == "gaussian":
        return float(stats.norm.sf(r))
    return tukey_depth_spherical(min(max(r, 0.0), 1.0), d)


def mk_depth(x, model: QuantileModel, mode: str = "entropic") -> float:
    r = float(np.linalg.norm(rank(x, model, mode)))
    return reference_depth(r, model.dim, model.reference.kind)


def mk_depth_matrix(X, model: QuantileModel, mode: str = "entropic") -> np.ndarray:
    radii = np.linalg.norm(rank_matrix(X, model, mode), axis=1)
    return np.array([reference_depth(float(r), model.dim, model.reference.kind) for r in radii])
