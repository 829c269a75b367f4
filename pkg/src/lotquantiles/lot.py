"""Linear optimal transport embedding around a template image.

The logarithm map sends an image ``I`` to the displacement field
``v = T_I - id`` defined on the template's pixels, where ``T_I`` is the
barycentric projection of the exact optimal plan from the template to ``I``.
Tangent vectors flatten pixel-major: ``[v_0[row], v_0[col], v_1[row], ...]``.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import DomainError
from .histogram import ImageHistogram, PixelGrid
from .ot import barycentric_map, solve_exact

TEMPLATE_MODES = ("argmin_to_mean", "pixelwise_mean", "explicit_index")
FLATTEN_ORDER = "pixel-major/row-col/v1"
THREADS_ENV = "LOTQ_NUM_THREADS"


@dataclass(frozen=True, eq=False)
class TemplateModel:
    template: ImageHistogram
    origin: str = "argmin_to_mean"
    source_index: int | None = None

    @property
    def grid(self) -> PixelGrid:
        return self.template.grid

    @property
    def metric_weights(self) -> np.ndarray:
        """Template mass duplicated per coordinate, length ``2p``."""
        return np.repeat(self.template.weights, 2)


@dataclass(frozen=True, eq=False)
class TangentVector:
    grid: PixelGrid
    displacements: np.ndarray = field(repr=False)

    def __post_init__(self):
        d = np.asarray(self.displacements, dtype=np.float64).reshape(self.grid.size, 2)
        if not np.all(np.isfinite(d)):
            raise DomainError("tangent vectors must be finite")
        object.__setattr__(self, "displacements", d)

    def flatten(self) -> np.ndarray:
        return self.displacements.reshape(-1).copy()

    @classmethod
    def from_flat(cls, grid: PixelGrid, vector) -> "TangentVector":
        vector = np.asarray(vector, dtype=np.float64)
        if vector.size != 2 * grid.size:
            raise DomainError(f"expected {2 * grid.size} coordinates, got {vector.size}")
        return cls(grid, vector.reshape(grid.size, 2))


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def parallel_map(fn, items, n_jobs: int | None = None) -> list:
    """Order-preserving map over threads (numba kernels release the GIL)."""
    n_jobs = default_threads() if n_jobs is None else n_jobs
    items = list(items)
    if n_jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(fn, items))


def _common_grid(images) -> PixelGrid:
    grids = {im.grid for im in images}
    if len(grids) != 1:
        raise DomainError("all images must share one pixel grid")
    return grids.pop()


def pixelwise_mean(images) -> ImageHistogram:
    grid = _common_grid(images)
    mean = np.mean([im.weights for im in images], axis=0)
    return ImageHistogram(grid, mean / mean.sum())


def select_template(images, mode: str = "argmin_to_mean", index: int | None = None) -> TemplateModel:
    """Pick the template image.

    ``argmin_to_mean`` returns the dataset image closest (pixelwise 2-norm)
    to the pixelwise mean, lowest index on ties; ``pixelwise_mean`` returns
    the mean itself; ``explicit_index`` returns ``images[index]``.
    """
    images = list(images)
    if not images:
        raise DomainError("cannot select a template from an empty image list")
    if mode not in TEMPLATE_MODES:
        raise DomainError(f"unknown template mode {mode!r}")
    _common_grid(images)
    if mode == "explicit_index":
        if index is None or not 0 <= index < len(images):
            raise DomainError("explicit_index mode needs a valid index")
        return TemplateModel(images[index], mode, int(index))
    mean = pixelwise_mean(images)
    if mode == "pixelwise_mean":
        return TemplateModel(mean, mode, None)
    W = np.array([im.weights for im in images])
    dist = np.linalg.norm(W - mean.weights, axis=1)
    k = int(np.argmin(dist))
    return TemplateModel(images[k], mode, k)


def _check_grid(grid: PixelGrid, template: TemplateModel):
    if grid != template.grid:
        raise DomainError(f"grid {grid.shape} differs from template grid {template.grid.shape}")


def log_map(image: ImageHistogram, template: TemplateModel, return_plan: bool = False):
    """Displacement field of the optimal transport from the template to ``image``."""
    _check_grid(image.grid, template)
    plan = solve_exact(template.template, image)
    T = barycentric_map(plan).targets
    v = T - template.grid.coordinates()
    v[template.template.weights == 0] = 0.0
    vec = TangentVector(template.grid, v)
    return (vec, plan) if return_plan else vec


def log_maps(images, template: TemplateModel, n_jobs: int | None = None) -> list[TangentVector]:
    return parallel_map(lambda im: log_map(im, template), images, n_jobs)


def as_matrix(vectors) -> np.ndarray:
    """Stack tangent vectors into an ``(n, 2p)`` matrix."""
    return np.array([v.flatten() for v in vectors])


def exp_map(v: TangentVector, template: TemplateModel) -> ImageHistogram:
    """Push template mass along ``v`` with bilinear splatting, clamped to the grid.

    This is only a left inverse of :func:`log_map` up to discretization;
    for arbitrary tangent vectors it is an extension, not an exact inverse.
    """
    _check_grid(v.grid, template)
    grid = template.grid
    h, w = grid.shape
    mass = template.template.weights
    pos = grid.coordinates() + v.displacements
    r = np.clip(pos[:, 0], 0, h - 1)
    c = np.clip(pos[:, 1], 0, w - 1)
    r0 = np.floor(r).astype(np.int64)
    c0 = np.floor(c).astype(np.int64)
    fr = r - r0
    fc = c - c0
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    out = np.zeros(grid.size)
    np.add.at(out, r0 * w + c0, mass * (1 - fr) * (1 - fc))
    np.add.at(out, r0 * w + c1, mass * (1 - fr) * fc)
    np.add.at(out, r1 * w + c0, mass * fr * (1 - fc))
    np.add.at(out, r1 * w + c1, mass * fr * fc)
    if abs(out.sum() - 1.0) > 1e-13:
        out = out / out.sum()
    return ImageHistogram(grid, out)


def tangent_metric(v: TangentVector, w: TangentVector, template: TemplateModel) -> float:
    """Template-weighted inner product ``sum_i <v_i, w_i> I_r(w_i)``."""
    _check_grid(v.grid, template)
    _check_grid(w.grid, template)
    inner = np.sum(v.displacements * w.displacements, axis=1)
    return float(inner @ template.template.weights)


class BoundCheck(NamedTuple):
    lhs: float
    rhs: float
    maps: bool  # both optimal plans send each template pixel to a single pixel


def w2_upper_bound_check(I: ImageHistogram, J: ImageHistogram, template: TemplateModel) -> BoundCheck:
    """Compare ``W2^2(I, J)`` with the squared tangent distance of their embeddings.

    ``lhs <= rhs`` is guaranteed when both template plans are maps.
    """
    vi, pi = log_map(I, template, return_plan=True)
    vj, pj = log_map(J, template, return_plan=True)
    diff = TangentVector(template.grid, vi.displacements - vj.displacements)
    lhs = solve_exact(I, J).cost
    rhs = tangent_metric(diff, diff, template)
    return BoundCheck(lhs, rhs, pi.is_map() and pj.is_map())
