"""Inner and outer depths of images, order statistics and five-image summaries.

The inner depth of an image is the MK depth of its latent coordinates; the
outer depth is ``1 / (1 + r)`` where ``r`` is the distance of its tangent
vector to the principal subspace.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import pca as pca_mod
from .errors import DomainError
from .histogram import ImageHistogram
from .lot import TemplateModel, as_matrix, log_map, log_maps, select_template
from .quantiles import (QuantileModel, default_schedule, fit_potentials, mk_depth_matrix,
                        rank_matrix, sample_reference)
from .seeds import REFERENCE, derive_seed

DEPTH_KEYS = ("inner", "outer")
CSV_COLUMNS = ("id", "inner", "outer", "rank_norm", "residual")


@dataclass(frozen=True, eq=False)
class Pipeline:
    template: TemplateModel
    pca: pca_mod.PcaModel
    quantiles: QuantileModel | None = None
    depth_mode: str = "entropic"

    @property
    def latents(self) -> np.ndarray:
        """Latent coordinates of the training images (rows of the fitted data)."""
        if self.quantiles is None:
            raise DomainError("pipeline has no quantile model")
        return self.quantiles.data


def fit_pipeline(images, d: int, seed: int = 0, template_mode: str = "argmin_to_mean",
                 template_index: int | None = None, convention: str = "orthonormal",
                 weighted: bool = False, ref_kind: str = "spherical_uniform", ref_size: int | None = None,
                 eps_start: float = 1.0, eps_end: float = 1e-3, eps_stages: int = 10,
                 n_jobs: int | None = None) -> tuple[Pipeline, np.ndarray]:
    """Template, Log-PCA space and MK potentials fitted on ``images``.

    Returns the pipeline and the ``(n, 2p)`` matrix of training tangent
    vectors (handy for depth reports without re-solving OT).
    """
    images = list(images)
    template = select_template(images, template_mode, template_index)
    V = as_matrix(log_maps(images, template, n_jobs))
    weights = template.metric_weights if weighted else None
    model = pca_mod.fit(V, d, convention=convention, weights=weights, grid=template.grid)
    Z = pca_mod.project_matrix(V, model)
    reference = sample_reference(ref_size or len(images), d, ref_kind, derive_seed(seed, *REFERENCE))
    schedule = default_schedule(reference, Z, eps_start, eps_end, eps_stages)
    quantiles = fit_potentials(Z, reference, schedule)
    return Pipeline(template, model, quantiles), V


@dataclass(frozen=True)
class DepthRecord:
    id: str
    inner: float
    outer: float
    rank: tuple
    latent: tuple
    residual: float

    @property
    def rank_norm(self) -> float:
        return float(np.linalg.norm(self.rank))


@dataclass(frozen=True, eq=False)
class DepthReport:
    records: tuple = field(default_factory=tuple)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def ids(self) -> list[str]:
        return [r.id for r in self.records]

    def values(self, key: str) -> np.ndarray:
        if key not in DEPTH_KEYS:
            raise DomainError(f"unknown depth key {key!r}")
        return np.array([getattr(r, key) for r in self.records])


def outer_from_residual(residual):
    return 1.0 / (1.0 + np.asarray(residual, dtype=np.float64))


def depth_report_from_vectors(V: np.ndarray, pipeline: Pipeline, ids=None) -> DepthReport:
    """Depth report for precomputed tangent vectors (rows of ``V``)."""
    V = np.atleast_2d(V)
    ids = [str(k) for k in range(len(V))] if ids is None else [str(i) for i in ids]
    if len(ids) != len(V):
        raise DomainError("one id per vector is required")
    Z = pca_mod.project_matrix(V, pipeline.pca)
    residual = pca_mod.residual_matrix(V, pipeline.pca)
    R = rank_matrix(Z, pipeline.quantiles, pipeline.depth_mode)
    inner = mk_depth_matrix(Z, pipeline.quantiles, pipeline.depth_mode)
    outer = outer_from_residual(residual)
    records = tuple(
        DepthRecord(ids[k], float(inner[k]), float(outer[k]), tuple(map(float, R[k])),
                    tuple(map(float, Z[k])), float(residual[k]))
        for k in range(len(V))
    )
    return DepthReport(records)


def depth_report(images, pipeline: Pipeline, ids=None, n_jobs: int | None = None) -> DepthReport:
    V = as_matrix(log_maps(list(images), pipeline.template, n_jobs))
    return depth_report_from_vectors(V, pipeline, ids)


def inner_depth(image: ImageHistogram, pipeline: Pipeline) -> float:
    """MK depth of the latent projection of the image's tangent vector."""
    z = pca_mod.project(log_map(image, pipeline.template), pipeline.pca)
    return float(mk_depth_matrix(z[None, :], pipeline.quantiles, pipeline.depth_mode)[0])


def outer_depth(image: ImageHistogram, pipeline: Pipeline) -> float:
    """``1 / (1 + distance to the principal subspace)``."""
    r = pca_mod.residual_distance(log_map(image, pipeline.template), pipeline.pca)
    return float(outer_from_residual(r))


def order_indices(depths) -> np.ndarray:
    """Positions sorted by nonincreasing depth; ties keep their input order."""
    return np.argsort(-np.asarray(depths, dtype=np.float64), kind="stable")


def order_statistics(report: DepthReport, key: str = "inner") -> list[str]:
    if len(report) == 0:
        raise DomainError("empty report")
    ids = report.ids
    return [ids[k] for k in order_indices(report.values(key))]


def summary_positions(n: int) -> tuple[int, int, int, int, int]:
    """1-based positions ``1, ceil(n/4), ceil(n/2), ceil(3n/4), n``."""
    if n < 5:
        raise DomainError("a five-image summary needs at least five images")
    return (1, -(-n // 4), -(-n // 2), -(-3 * n // 4), n)


def five_summary(report: DepthReport, key: str = "inner") -> list[str]:
    order = order_statistics(report, key)
    return [order[p - 1] for p in summary_positions(len(order))]


def _fmt(x: float) -> str:
    return repr(float(x))


def write_csv(report: DepthReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in report.records:
            w.writerow([r.id, _fmt(r.inner), _fmt(r.outer), _fmt(r.rank_norm), _fmt(r.residual)])


def report_to_dict(report: DepthReport) -> dict:
    return {
        "records": [
            {"id": r.id, "inner": r.inner, "outer": r.outer, "rank": list(r.rank),
             "rank_norm": r.rank_norm, "latent": list(r.latent), "residual": r.residual}
            for r in report.records
        ]
    }


def write_json(report: DepthReport, path) -> None:
    Path(path).write_text(json.dumps(report_to_dict(report), indent=2) + "\n")
