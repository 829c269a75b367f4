"""Monge-Kantorovich quantiles, ranks and depths for images.

Images are normalized histograms on a pixel grid. Each one is embedded in
the tangent space at a template image by linear optimal transport, the
tangent vectors are reduced by PCA, and the latent points are ranked
against a reference sample through discrete MK potentials. The inner
depth is the halfspace depth of the rank under the reference law; the
outer depth measures the distance to the principal subspace.
"""

from .depths import (DepthReport, Pipeline, depth_report, fit_pipeline, five_summary, inner_depth,
                     order_statistics, outer_depth)
from .errors import (DegenerateDirectionError, DegenerateImageError, DomainError, FormatError,
                     LengthError, LotQuantilesError, NumericalError)
from .histogram import ImageHistogram, PixelGrid, load_grid, load_idx, load_idx_labels
from .lot import TangentVector, TemplateModel, exp_map, log_map, select_template
from .ot import TransportPlan, sinkhorn, solve_entropic, solve_exact, wasserstein
from .outlier import OutlierModel, calibrate, classify, roc_auc
from .pca import PcaModel
from .quantiles import (QuantileModel, ReferenceSample, fit_potentials, mk_depth, quantile, rank,
                        sample_reference, tukey_depth_spherical)
from .rank_test import TestResult, two_sample_test, two_sample_test_latent

__version__ = "0.1.0"

__all__ = [
    "DegenerateDirectionError", "DegenerateImageError", "DepthReport", "DomainError", "FormatError",
    "ImageHistogram", "LengthError", "LotQuantilesError", "NumericalError", "OutlierModel", "PcaModel",
    "Pipeline", "PixelGrid", "QuantileModel", "ReferenceSample", "TangentVector", "TemplateModel",
    "TestResult", "TransportPlan", "calibrate", "classify", "depth_report", "exp_map", "fit_pipeline",
    "fit_potentials", "five_summary", "inner_depth", "load_grid", "load_idx", "load_idx_labels", "log_map",
    "mk_depth", "order_statistics", "outer_depth", "quantile", "rank", "roc_auc", "sample_reference",
    "select_template", "sinkhorn", "solve_entropic", "solve_exact", "tukey_depth_spherical",
    "two_sample_test", "two_sample_test_latent", "wasserstein",
]
