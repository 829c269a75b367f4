import json
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import pairwise_auc
from lotquantiles.depths import depth_report, fit_pipeline
from lotquantiles.errors import DomainError
from lotquantiles.histogram import PixelGrid
from lotquantiles.lot import TangentVector, exp_map
from lotquantiles.outlier import (OutlierModel, calibrate, calibrate_depths, calibration_pvalue, classify,
                                  dd_plot_export, is_outlier, outlier_score, roc_auc, threshold,
                                  write_report_json, write_roc_csv)
from lotquantiles.synthetic import blob_corpus

GRID = PixelGrid(12, 12)


@pytest.fixture(scope="module")
def fitted():
    train = blob_corpus(80, GRID, seed=1)
    cal = blob_corpus(60, GRID, seed=1, start=80)
    pipe, _ = fit_pipeline(train, 3, seed=1)
    return pipe, calibrate(cal, pipe, 0.05), train


def test_threshold_example():
    depths = np.round(np.arange(100, 0, -1) / 100, 2)
    assert threshold(depths, 0.05) == 0.06
    assert np.sum(depths < 0.06) == 5
    shuffled = np.random.default_rng(0).permutation(depths)
    assert threshold(shuffled, 0.05) == 0.06


def test_threshold_alpha_zero():
    depths = np.random.default_rng(1).uniform(size=50)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        t = threshold(depths, 0.0)
    assert caught and t == depths.min()
    model = calibrate_depths(depths, depths, 0.0 + 1e-3)
    assert not np.any(is_outlier(depths, depths, model))


def test_threshold_validation():
    with pytest.raises(DomainError):
        threshold([], 0.05)
    with pytest.raises(DomainError):
        threshold([0.1], 1.0)
    with pytest.raises(DomainError):
        calibrate_depths([0.1, 0.2], [0.1], 0.05)


def test_template_image_is_inlier(fitted):
    pipe, model, _ = fitted
    verdict = classify(pipe.template.template, model)
    assert not verdict.is_outlier
    assert verdict.inner > model.inner_threshold and verdict.outer > model.outer_threshold
    assert verdict.outer > np.median(model.calibration_outer)


def test_off_subspace_image_is_outlier(fitted):
    pipe, model, _ = fitted
    B = pipe.pca.basis
    w = np.random.default_rng(2).normal(size=B.shape[0])
    w -= B @ (B.T @ w)
    w *= 15.0 / np.linalg.norm(w)
    image = exp_map(TangentVector.from_flat(pipe.template.grid, pipe.pca.mean + w), pipe.template)
    verdict = classify(image, model)
    assert verdict.outer < model.outer_threshold and verdict.is_outlier


def test_zero_thresholds_accept_everything():
    model = OutlierModel(None, 0.0, 0.0, 0.05)
    depths = np.random.default_rng(3).uniform(0, 0.5, 30)
    assert not np.any(is_outlier(depths, depths, model))
    with pytest.raises(DomainError):
        classify(None, model)


def test_dd_export(tmp_path, fitted):
    pipe, model, train = fitted
    report = depth_report(train[:15], pipe)
    dd_plot_export(report, model, tmp_path / "a.csv", labels=[0] * 15)
    dd_plot_export(report, model, tmp_path / "b.csv", labels=[0] * 15)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    lines = (tmp_path / "a.csv").read_text().splitlines()
    head = dict(kv.split("=") for kv in lines[0][2:].split(","))
    assert float(head["inner_threshold"]) == model.inner_threshold
    assert float(head["outer_threshold"]) == model.outer_threshold
    assert lines[1] == "id,inner,outer,is_outlier,label"
    assert len(lines) == 2 + 15
    with pytest.raises(DomainError):
        dd_plot_export(report, model, tmp_path / "c.csv", labels=[0])


def test_roc_extremes():
    scores = np.r_[np.linspace(0, 0.1, 5), np.linspace(0.2, 0.5, 20)]
    labels = np.r_[np.ones(5, bool), np.zeros(20, bool)]
    curve, auc = roc_auc(scores, labels)
    assert auc == 1.0
    assert curve.fpr[0] == 0 and curve.tpr[-1] == 1 and curve.fpr[-1] == 1
    _, auc = roc_auc(np.full(25, 0.3), labels)
    assert auc == 0.5
    with pytest.raises(DomainError):
        roc_auc(scores, np.zeros(25, bool))
    with pytest.raises(DomainError):
        roc_auc(scores[:3], labels)


@given(st.lists(st.tuples(st.sampled_from([0.0, 0.1, 0.2, 0.3, 0.4]), st.booleans()), min_size=2, max_size=60))
def test_roc_matches_pairwise_oracle(pairs):
    scores = np.array([p[0] for p in pairs])
    labels = np.array([p[1] for p in pairs])
    if labels.all() or not labels.any():
        return
    _, auc = roc_auc(scores, labels)
    assert abs(auc - pairwise_auc(scores, labels)) < 1e-12


def test_blob_auc_pairwise_oracle(fitted):
    pipe, model, _ = fitted
    inl = blob_corpus(180, GRID, seed=7, start=500)
    out = blob_corpus(20, GRID, "shifted", seed=7)
    report = depth_report(inl + out, pipe)
    labels = np.r_[np.zeros(180, bool), np.ones(20, bool)]
    for method in ("inner", "outer", "min-quantile"):
        scores = outlier_score(report.values("inner"), report.values("outer"), model, method)
        _, auc = roc_auc(scores, labels)
        assert abs(auc - pairwise_auc(scores, labels)) < 1e-9
    with pytest.raises(DomainError):
        outlier_score([0.1], [0.1], model, "max")


def test_calibration_pvalues():
    cal = np.sort(np.array([0.1, 0.2, 0.3, 0.4]))
    np.testing.assert_allclose(calibration_pvalue([0.05, 0.2, 0.45], cal), [0.2, 0.6, 1.0])


def test_report_json_and_roc_csv(tmp_path):
    model = calibrate_depths(np.linspace(0, 0.5, 40), np.linspace(0.1, 1, 40), 0.1)
    curve, auc = roc_auc([0.1, 0.2, 0.3], [True, False, False])
    write_roc_csv(curve, tmp_path / "roc.csv")
    assert (tmp_path / "roc.csv").read_text().splitlines()[0] == "fpr,tpr,threshold"
    write_report_json(tmp_path / "o.json", model, auc, "inner")
    doc = json.loads((tmp_path / "o.json").read_text())
    assert doc["auc"] == 1.0 and doc["alpha"] == 0.1
