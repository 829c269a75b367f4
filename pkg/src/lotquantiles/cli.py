"""Command-line entry point: ``lotq <command> [options]``.

Commands
--------
embed     fit template, Log-PCA and MK potentials; write ``model.lotq``
depth     inner/outer depth report (``depth.csv`` / ``depth.json``)
summary   five-image depth summary (``summary.csv`` + PGMs)
quantile  quantile points on circles of levels 0.25, 0.5, 0.75 (+ centre)
test      two-sample rank test (``test.json``, optional ``rates.csv``)
outlier   calibrated outlier verdicts, DD-plot and ROC data
synth     seeded blob corpora as IDX files

Exit codes: 0 success, 1 runtime error, 2 usage error, 3 self-check failure.
Every output file is a deterministic function of inputs, flags and seed.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import depths as depths_mod
from . import outlier as outlier_mod
from . import pca as pca_mod
from . import rank_test
from .container import RunConfig, load_pipeline, save_pipeline
from .errors import LotQuantilesError
from .histogram import (ImageHistogram, PixelGrid, downscale, load_grid, load_idx_labels,
                        read_idx_images, write_idx_images, write_idx_labels, write_pgm)
from .lot import TangentVector, default_threads, exp_map
from .quantiles import quantile_matrix
from .synthetic import KINDS, blob_corpus

EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_SELF_CHECK = 0, 1, 2, 3
MODEL_FILE = "model.lotq"
LEVELS = (0.25, 0.5, 0.75)
REF_KINDS = {"sphere": "spherical_uniform", "gauss": "gaussian"}
IDX_MAGIC = b"\x00\x00\x08\x03"


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# input handling
# ---------------------------------------------------------------------------

def _is_idx(path: Path) -> bool:
    if path.suffix == ".gz":
        import gzip

        with gzip.open(path, "rb") as fh:
            return fh.read(4) == IDX_MAGIC
    with open(path, "rb") as fh:
        return fh.read(4) == IDX_MAGIC


def _expand(paths) -> list[Path]:
    out = []
    for p in map(Path, paths):
        if p.is_dir():
            out.extend(sorted(q for q in p.iterdir() if q.suffix.lower() in (".pgm", ".csv")))
        elif p.exists():
            out.append(p)
        else:
            raise UsageError(f"input not found: {p}")
    return out


def _parse_shape(text: str | None):
    if not text:
        return None
    try:
        h, w = (int(t) for t in text.lower().split("x"))
    except ValueError:
        raise UsageError(f"--resize expects HxW, got {text!r}") from None
    return h, w


def load_images(paths, labels=None, select=None, limit=None, smooth=False, resize=None):
    """Images and ids from IDX files, PGM/CSV files or directories of them.

    IDX images are named by their running index over all IDX inputs; grid
    files by their stem. ``labels`` (an IDX label file aligned with the IDX
    images) and ``select`` filter by class; ``limit`` keeps the first items.
    """
    files = _expand(paths)
    if not files:
        raise UsageError("no input images")
    images, ids, idx_count = [], [], 0
    for f in files:
        if _is_idx(f):
            for arr in read_idx_images(f):
                images.append(ImageHistogram.from_array(arr, smooth=smooth))
                ids.append(str(idx_count))
                idx_count += 1
        else:
            images.append(load_grid(f, smooth=smooth))
            ids.append(f.stem)
    if labels is not None:
        lab = load_idx_labels(labels)
        if lab.size != len(images):
            raise UsageError(f"{labels}: {lab.size} labels for {len(images)} images")
        if select is not None:
            keep = [k for k in range(len(images)) if int(lab[k]) in select]
            images, ids = [images[k] for k in keep], [ids[k] for k in keep]
    elif select is not None:
        raise UsageError("--select needs --labels")
    if limit is not None:
        images, ids = images[:limit], ids[:limit]
    if resize is not None:
        images = [downscale(im, resize) for im in images]
    if len(set(ids)) != len(ids):
        raise UsageError("input image names are not unique")
    return images, ids


def _images_from_args(args, paths=None):
    select = None
    if args.select:
        select = {int(t) for t in args.select.split(",")}
    return load_images(paths if paths is not None else args.input, args.labels, select, args.limit,
                       args.smooth, _parse_shape(args.resize))


def _load_model(args):
    if not args.model:
        raise UsageError("--model is required")
    if not Path(args.model).is_file():
        raise UsageError(f"model container not found: {args.model}")
    return load_pipeline(args.model)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _config(args, **extra) -> RunConfig:
    return RunConfig(
        command=args.command, inputs=[str(p) for p in (getattr(args, "input", None) or [])],
        model=getattr(args, "model", None), out=str(args.out),
        template_mode=getattr(args, "template_mode", "argmin_to_mean"), dim=args.dim,
        convention=getattr(args, "convention", "orthonormal"), weighted=getattr(args, "weighted", False),
        ref_kind=args.ref_kind, ref_size=args.ref_size, eps_start=args.eps_start, eps_end=args.eps_end,
        eps_stages=args.eps_stages, alpha=args.alpha, seed=args.seed, formats=list(args.format or ["csv"]),
        extra=extra,
    )


def _fmt(x) -> str:
    return repr(float(x))


def _write_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _write_json(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# commands; each returns the list of failed self-checks
# ---------------------------------------------------------------------------

def cmd_embed(args) -> list[str]:
    images, ids = _images_from_args(args)
    out = _out_dir(args)
    config = _config(args)
    pipeline, V = depths_mod.fit_pipeline(
        images, args.dim, seed=args.seed, template_mode=args.template_mode,
        template_index=args.template_index, convention=args.convention, weighted=args.weighted,
        ref_kind=REF_KINDS[args.ref_kind], ref_size=args.ref_size, eps_start=args.eps_start,
        eps_end=args.eps_end, eps_stages=args.eps_stages, n_jobs=args.threads)
    path = out / MODEL_FILE
    save_pipeline(path, pipeline, V, ids, config.to_dict())
    config.save(out / "config.json")
    ratio = pipeline.pca.explained_variance_ratio()
    for k, r in enumerate(ratio, start=1):
        print(f"component {k}: explained variance ratio {r:.6f}")
    print(f"total: {ratio.sum():.6f}")
    _write_json(out / "embed.json", {
        "n": len(images), "dim": args.dim, "grid": list(pipeline.template.grid.shape),
        "template_origin": pipeline.template.origin, "template_index": pipeline.template.source_index,
        "explained_variance_ratio": [float(r) for r in ratio], "sinkhorn_iterations": pipeline.quantiles.n_iter,
    })

    failed = []
    reloaded = load_pipeline(path)
    Z = pca_mod.project_matrix(reloaded.embeddings, reloaded.pipeline.pca)
    if not np.array_equal(Z, pipeline.quantiles.data):
        failed.append("reloaded container does not reproject to the fitted latents")
    B = pipeline.pca.basis
    if args.convention == "orthonormal" and not args.weighted and B.size:
        if np.max(np.abs(B.T @ B - np.eye(B.shape[1]))) > 1e-9:
            failed.append("principal directions are not orthonormal")
    if np.any(ratio < -1e-12) or ratio.sum() > 1 + 1e-9:
        failed.append("explained variance ratios out of range")
    return failed


def _report_for(args, loaded):
    if args.input:
        images, ids = _images_from_args(args)
        return depths_mod.depth_report(images, loaded.pipeline, ids, n_jobs=args.threads), images
    if loaded.embeddings is None:
        raise UsageError("model holds no embeddings; pass --input")
    return depths_mod.depth_report_from_vectors(loaded.embeddings, loaded.pipeline, loaded.ids), None


def _depth_checks(report) -> list[str]:
    failed = []
    inner, outer = report.values("inner"), report.values("outer")
    if np.any(~np.isfinite(inner)) or np.any(inner < 0) or np.any(inner > 0.5):
        failed.append("inner depths outside [0, 1/2]")
    if np.any(~np.isfinite(outer)) or np.any(outer <= 0) or np.any(outer > 1):
        failed.append("outer depths outside (0, 1]")
    return failed


def cmd_depth(args) -> list[str]:
    loaded = _load_model(args)
    out = _out_dir(args)
    report, _ = _report_for(args, loaded)
    formats = args.format or ["csv"]
    if "csv" in formats:
        depths_mod.write_csv(report, out / "depth.csv")
    if "json" in formats:
        depths_mod.write_json(report, out / "depth.json")
    return _depth_checks(report)


def cmd_summary(args) -> list[str]:
    loaded = _load_model(args)
    out = _out_dir(args)
    report, images = _report_for(args, loaded)
    n = len(report)
    positions = depths_mod.summary_positions(n)
    order = depths_mod.order_indices(report.values(args.key))
    rows = []
    template = loaded.pipeline.template
    for pos in positions:
        k = int(order[pos - 1])
        rec = report.records[k]
        if images is not None:
            img = images[k]
        else:
            img = exp_map(TangentVector.from_flat(template.grid, loaded.embeddings[k]), template)
        name = f"summary_{pos:0{len(str(n))}d}.pgm"
        write_pgm(out / name, img)
        rows.append([pos, rec.id, _fmt(rec.inner), _fmt(rec.outer), name])
    _write_rows(out / "summary.csv", ("position", "id", "inner", "outer", "image"), rows)
    if "json" in (args.format or []):
        _write_json(out / "summary.json", {"key": args.key, "summary": [
            {"position": r[0], "id": r[1], "inner": float(r[2]), "outer": float(r[3]), "image": r[4]}
            for r in rows]})
    failed = _depth_checks(report)
    vals = report.values(args.key)[order[np.array(positions) - 1]]
    if len(rows) != 5 or np.any(np.diff(vals) > 0):
        failed.append("summary depths are not nonincreasing")
    return failed


def _level_radius(level: float, d: int, kind: str) -> float:
    """Radius of the centred ball holding probability ``level`` under the reference."""
    if kind == "gaussian":
        return math.sqrt(rank_test.chi2_quantile(d, level))
    return level


def quantile_levels(d: int, angles: int, kind: str = "spherical_uniform"):
    """``(level, angle index, u)`` for the centre and ``angles`` points per circle.

    Circles lie in the plane of the first two latent coordinates (the
    first axis when ``d = 1``, where each circle has two points).
    """
    rows = [(0.0, 0, np.zeros(d))]
    for level in LEVELS:
        r = _level_radius(level, d, kind)
        count = 2 if d == 1 else angles
        for a in range(count):
            u = np.zeros(d)
            if d == 1:
                u[0] = r if a == 0 else -r
            else:
                theta = 2.0 * math.pi * a / count
                u[0], u[1] = r * math.cos(theta), r * math.sin(theta)
            rows.append((level, a, u))
    return rows


def cmd_quantile(args) -> list[str]:
    loaded = _load_model(args)
    out = _out_dir(args)
    pipeline = loaded.pipeline
    q = pipeline.quantiles
    d = q.dim
    grid_rows = quantile_levels(d, args.angles, q.reference.kind)
    U = np.array([u for _, _, u in grid_rows])
    Q = quantile_matrix(U, q, args.mode)
    ids = loaded.ids or [str(k) for k in range(len(q.data))]
    header = ["level", "angle", "image"] + [f"u{k + 1}" for k in range(d)] + [f"q{k + 1}" for k in range(d)]
    if args.mode == "hard":
        header.append("data_id")
    rows = []
    for (level, a, u), qk in zip(grid_rows, Q):
        name = "quantile_center.pgm" if level == 0 else f"quantile_{level:.2f}_{a:02d}.pgm"
        image = exp_map(pca_mod.reconstruct(qk, pipeline.pca), pipeline.template)
        write_pgm(out / name, image)
        row = [_fmt(level), a, name] + [_fmt(x) for x in u] + [_fmt(x) for x in qk]
        if args.mode == "hard":
            hit = np.flatnonzero(np.all(q.data == qk, axis=1))
            row.append(ids[int(hit[0])] if hit.size else "")
        rows.append(row)
    _write_rows(out / "quantiles.csv", header, rows)
    if "json" in (args.format or []):
        _write_json(out / "quantiles.json", {"mode": args.mode, "rows": [dict(zip(header, r)) for r in rows]})
    failed = []
    if not np.all(np.isfinite(Q)):
        failed.append("non-finite quantile points")
    return failed


def _subsample_generator(images):
    def gen(rng, size):
        idx = rng.choice(len(images), size=size, replace=False)
        return [images[k] for k in np.sort(idx)]
    return gen


def cmd_test(args) -> list[str]:
    if not args.input_b:
        raise UsageError("--input-b is required")
    A, _ = _images_from_args(args)
    B, _ = _images_from_args(args, args.input_b)
    out = _out_dir(args)
    result = rank_test.two_sample_test(A, B, d=args.dim, alpha=args.alpha, seed=args.seed,
                                       template_mode=args.template_mode, n_jobs=args.threads)
    doc = result.to_dict()
    failed = []
    if not (math.isfinite(result.statistic) and result.statistic >= 0):
        failed.append("test statistic is not a finite nonnegative number")
    if args.repetitions:
        m = args.subsample or min(len(A), len(B)) // 2
        if not 2 <= m <= min(len(A), len(B)):
            raise UsageError("--subsample must lie between 2 and the smaller sample size")
        rate = rank_test.rejection_rate_experiment(
            _subsample_generator(A), _subsample_generator(B), m, m, args.dim, args.alpha,
            args.repetitions, seed=args.seed, n_jobs=args.threads)
        rank_test.write_rates_csv([(args.pair, m, m, args.dim, args.alpha, rate)], out / "rates.csv")
        doc["repetitions"] = {"count": args.repetitions, "subsample": m, "rejection_rate": rate}
        if not 0.0 <= rate <= 1.0:
            failed.append("rejection rate outside [0, 1]")
    _write_json(out / "test.json", doc)
    print(f"T = {result.statistic:.6g}, critical value = {result.critical_value:.6g}, "
          f"reject = {str(result.reject).lower()}")
    return failed


def _read_truth(path, n: int) -> np.ndarray:
    p = Path(path)
    with open(p, "rb") as fh:
        head = fh.read(4)
    if head == b"\x00\x00\x08\x01":
        truth = load_idx_labels(p)
    else:
        truth = np.array([int(t) for t in p.read_text().split()], dtype=np.int64)
    if truth.size != n:
        raise UsageError(f"{path}: {truth.size} truth labels for {n} images")
    return truth != 0


def cmd_outlier(args) -> list[str]:
    loaded = _load_model(args)
    if not args.calibration:
        raise UsageError("--calibration is required")
    out = _out_dir(args)
    pipeline = loaded.pipeline
    cal_images, _ = _images_from_args(args, args.calibration)
    model = outlier_mod.calibrate(cal_images, pipeline, args.alpha, n_jobs=args.threads)
    report, _ = _report_for(args, loaded)
    inner, outer = report.values("inner"), report.values("outer")
    flags = outlier_mod.is_outlier(inner, outer, model)
    truth = _read_truth(args.truth, len(report)) if args.truth else None
    outlier_mod.dd_plot_export(report, model, out / "dd.csv",
                               None if truth is None else truth.astype(int))
    verdicts = [(r.id, outlier_mod.Verdict(bool(f), r.inner, r.outer)) for r, f in zip(report.records, flags)]
    _write_rows(out / "verdicts.csv", ("id", "is_outlier", "inner", "outer"),
                [[i, int(v.is_outlier), _fmt(v.inner), _fmt(v.outer)] for i, v in verdicts])
    auc = None
    if truth is not None:
        scores = outlier_mod.outlier_score(inner, outer, model, args.score)
        curve, auc = outlier_mod.roc_auc(scores, truth)
        outlier_mod.write_roc_csv(curve, out / "roc.csv")
        print(f"AUC ({args.score}) = {auc:.6f}")
    outlier_mod.write_report_json(out / "outlier.json", model, auc, args.score if auc is not None else None,
                                  verdicts)
    print(f"{int(flags.sum())} of {len(flags)} images flagged at alpha = {args.alpha}")
    failed = _depth_checks(report)
    if not (math.isfinite(model.inner_threshold) and math.isfinite(model.outer_threshold)):
        failed.append("non-finite thresholds")
    return failed


def cmd_synth(args) -> list[str]:
    out = _out_dir(args)
    h, w = _parse_shape(args.size)
    images = blob_corpus(args.count, PixelGrid(h, w), args.kind, args.seed, args.start)
    raster = np.stack([np.rint(im.as_array() / im.weights.max() * 255) for im in images]).astype(np.uint8)
    write_idx_images(out / f"{args.kind}.idx", raster)
    write_idx_labels(out / f"{args.kind}.labels.idx", np.full(args.count, KINDS.index(args.kind)))
    return []


COMMANDS = {"embed": cmd_embed, "depth": cmd_depth, "summary": cmd_summary, "quantile": cmd_quantile,
            "test": cmd_test, "outlier": cmd_outlier, "synth": cmd_synth}


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--input", action="append", default=[], help="IDX, PGM or CSV file, or directory")
    common.add_argument("--labels", help="IDX label file aligned with the IDX inputs")
    common.add_argument("--select", help="comma-separated labels to keep (needs --labels)")
    common.add_argument("--limit", type=int, help="keep only the first N images")
    common.add_argument("--resize", help="bilinear downscale to HxW")
    common.add_argument("--smooth", action="store_true", help="add a tiny uniform mass to every pixel")
    common.add_argument("--model", help=f"model container (written by embed as {MODEL_FILE})")
    common.add_argument("--dim", type=int, default=2, help="latent dimension d")
    common.add_argument("--alpha", type=float, default=0.05)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--ref-kind", choices=sorted(REF_KINDS), default="sphere")
    common.add_argument("--ref-size", type=int, help="reference sample size M (default: n)")
    common.add_argument("--eps-start", type=float, default=1.0, help="first epsilon, relative to the cost scale")
    common.add_argument("--eps-end", type=float, default=1e-3, help="last epsilon, relative to the cost scale")
    common.add_argument("--eps-stages", type=int, default=10)
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--format", action="append", choices=("csv", "json"),
                        help="output format (repeatable, default csv)")
    common.add_argument("--threads", type=int, default=None,
                        help="worker threads (default: $LOTQ_NUM_THREADS or 1)")
    common.add_argument("--template-mode", default="argmin_to_mean",
                        choices=("argmin_to_mean", "pixelwise_mean", "explicit_index"))

    parser = _Parser(prog="lotq", description="Monge-Kantorovich quantiles and depths for images.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("embed", parents=[common], help="fit and save a model")
    p.add_argument("--template-index", type=int)
    p.add_argument("--convention", choices=pca_mod.CONVENTIONS, default="orthonormal")
    p.add_argument("--weighted", action="store_true", help="template-mass weighted tangent metric")

    sub.add_parser("depth", parents=[common], help="depth report")

    p = sub.add_parser("summary", parents=[common], help="five-image depth summary")
    p.add_argument("--key", choices=depths_mod.DEPTH_KEYS, default="inner")

    p = sub.add_parser("quantile", parents=[common], help="quantile contours")
    p.add_argument("--mode", choices=("hard", "entropic"), default="hard")
    p.add_argument("--angles", type=int, default=8, help="points per circle")

    p = sub.add_parser("test", parents=[common], help="two-sample rank test")
    p.add_argument("--input-b", action="append", default=[], help="second sample")
    p.add_argument("--repetitions", type=int, default=0, help="subsampling repetitions for a rejection rate")
    p.add_argument("--subsample", type=int, help="subsample size per repetition")
    p.add_argument("--pair", default="A-B", help="label of the pair in rates.csv")

    p = sub.add_parser("outlier", parents=[common], help="outlier detection")
    p.add_argument("--calibration", action="append", default=[], help="calibration images")
    p.add_argument("--truth", help="0/1 outlier labels of the --input images (text or IDX)")
    p.add_argument("--score", choices=outlier_mod.SCORE_METHODS, default="min-quantile")

    p = sub.add_parser("synth", parents=[common], help="seeded blob corpus")
    p.add_argument("--kind", choices=KINDS, default="inlier")
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--size", default="16x16", help="grid HxW")
    p.add_argument("--start", type=int, default=0, help="index of the first item")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.threads is None:
            args.threads = default_threads()
        if args.command != "synth" and args.command not in ("depth", "summary", "quantile", "outlier") \
                and not args.input:
            raise UsageError("--input is required")
        failed = COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"lotq: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (LotQuantilesError, ValueError, RuntimeError, OSError) as exc:
        print(f"lotq: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    if failed:
        for msg in failed:
            print(f"lotq: self-check failed: {msg}", file=sys.stderr)
        return EXIT_SELF_CHECK
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
