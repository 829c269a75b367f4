"""Versioned binary container for fitted models and embeddings, and run configs.

Layout (little-endian)::

    bytes 0-3    magic b"LOTQ"
    bytes 4-5    uint16 format version (1)
    bytes 6-9    uint32 header length L
    bytes 10..   UTF-8 JSON header, L bytes, keys sorted
    then         raw array payloads, back to back, in header order

The header holds scalar metadata plus, under ``"arrays"``, a list of
``{"name", "dtype", "shape", "offset", "nbytes"}`` entries whose offsets
count from the end of the header. Serialization is deterministic: the same
objects always produce the same bytes.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .depths import Pipeline
from .errors import FormatError, LengthError
from .histogram import ImageHistogram, PixelGrid
from .lot import FLATTEN_ORDER, TemplateModel
from .pca import PcaModel
from .quantiles import QuantileModel, ReferenceSample

MAGIC = b"LOTQ"
VERSION = 1


def template_hash(template: ImageHistogram) -> str:
    return hashlib.sha256(template.weights.tobytes()).hexdigest()


def write_container(path, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    entries = []
    payload = []
    offset = 0
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = arr.tobytes()
        entries.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape),
                        "offset": offset, "nbytes": len(raw)})
        payload.append(raw)
        offset += len(raw)
    header = json.dumps({"meta": meta, "arrays": entries}, sort_keys=True, separators=(",", ":")).encode()
    Path(path).write_bytes(MAGIC + struct.pack("<HI", VERSION, len(header)) + header + b"".join(payload))


def read_container(path) -> tuple[dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if len(data) < 10:
        raise LengthError(f"{path}: truncated container")
    if data[:4] != MAGIC:
        raise FormatError(f"{path}: not a model container")
    version, hlen = struct.unpack("<HI", data[4:10])
    if version != VERSION:
        raise FormatError(f"{path}: unsupported container version {version}")
    if len(data) < 10 + hlen:
        raise LengthError(f"{path}: truncated container header")
    header = json.loads(data[10 : 10 + hlen])
    body = data[10 + hlen :]
    arrays = {}
    for e in header["arrays"]:
        end = e["offset"] + e["nbytes"]
        if end > len(body):
            raise LengthError(f"{path}: array {e['name']!r} is truncated")
        arrays[e["name"]] = np.frombuffer(body[e["offset"] : end], dtype=np.dtype(e["dtype"])).reshape(
            e["shape"]).copy()
    return header["meta"], arrays


def save_pipeline(path, pipeline: Pipeline, embeddings: np.ndarray | None = None, ids=None,
                  config: dict | None = None) -> None:
    """Template, Log-PCA model, quantile model and (optionally) training embeddings."""
    t, p, q = pipeline.template, pipeline.pca, pipeline.quantiles
    meta = {
        "grid": list(t.grid.shape),
        "flatten_order": FLATTEN_ORDER,
        "template": {"origin": t.origin, "source_index": t.source_index, "sha256": template_hash(t.template)},
        "pca": {"convention": p.convention, "dim": p.dim, "weighted": p.weighted,
                "total_variance": p.total_variance},
        "depth_mode": pipeline.depth_mode,
        "ids": None if ids is None else [str(i) for i in ids],
        "config": config,
    }
    arrays = {
        "template.weights": t.template.weights,
        "pca.mean": p.mean,
        "pca.basis": p.basis,
        "pca.eigenvalues": p.eigenvalues,
    }
    if p.metric_weights is not None:
        arrays["pca.metric_weights"] = p.metric_weights
    if q is not None:
        meta["quantiles"] = {"kind": q.reference.kind, "seed": q.reference.seed, "n_iter": q.n_iter,
                             "entropic": q.entropic}
        arrays.update({
            "q.reference": q.reference.points, "q.data": q.data, "q.psi_exact": q.psi_exact,
            "q.psi_conj_exact": q.psi_conj_exact, "q.assignment": q.assignment.astype(np.int64),
            "q.schedule": q.epsilon_schedule,
        })
        if q.entropic:
            arrays["q.psi"] = q.psi
            arrays["q.psi_conj"] = q.psi_conj
    if embeddings is not None:
        arrays["embeddings"] = np.asarray(embeddings, dtype=np.float64)
    write_container(path, meta, arrays)


@dataclass(frozen=True, eq=False)
class LoadedModel:
    pipeline: Pipeline
    embeddings: np.ndarray | None
    ids: list | None
    config: dict | None
    meta: dict


def load_pipeline(path) -> LoadedModel:
    meta, arrays = read_container(path)
    if meta.get("flatten_order") != FLATTEN_ORDER:
        raise FormatError(f"{path}: flattening order {meta.get('flatten_order')!r} is not supported")
    grid = PixelGrid(*meta["grid"])
    template = ImageHistogram(grid, arrays["template.weights"])
    if template_hash(template) != meta["template"]["sha256"]:
        raise FormatError(f"{path}: template hash mismatch")
    tm = TemplateModel(template, meta["template"]["origin"], meta["template"]["source_index"])
    pm = meta["pca"]
    pca = PcaModel(grid, arrays["pca.mean"], arrays["pca.basis"], arrays["pca.eigenvalues"],
                   pm["convention"], arrays.get("pca.metric_weights"), pm["total_variance"])
    quantiles = None
    if "quantiles" in meta:
        qm = meta["quantiles"]
        ref = ReferenceSample(arrays["q.reference"], qm["kind"], qm["seed"])
        quantiles = QuantileModel(ref, arrays["q.data"], arrays.get("q.psi"), arrays.get("q.psi_conj"),
                                  arrays["q.psi_exact"], arrays["q.psi_conj_exact"], arrays["q.assignment"],
                                  arrays["q.schedule"], qm["n_iter"])
    pipeline = Pipeline(tm, pca, quantiles, meta.get("depth_mode", "entropic"))
    return LoadedModel(pipeline, arrays.get("embeddings"), meta.get("ids"), meta.get("config"), meta)


@dataclass
class RunConfig:
    """Everything a CLI run depends on besides its input files."""

    command: str = ""
    inputs: list = field(default_factory=list)
    model: str | None = None
    out: str = "."
    template_mode: str = "argmin_to_mean"
    dim: int = 2
    convention: str = "orthonormal"
    weighted: bool = False
    ref_kind: str = "sphere"
    ref_size: int | None = None
    eps_start: float = 1.0
    eps_end: float = 1e-3
    eps_stages: int = 10
    alpha: float = 0.05
    seed: int = 0
    formats: list = field(default_factory=lambda: ["csv"])
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(doc) - names
        if unknown:
            raise FormatError(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        return cls.from_dict(json.loads(text))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_json(Path(path).read_text())
