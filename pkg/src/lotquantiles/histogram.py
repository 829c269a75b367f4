"""Images as probability histograms on a pixel grid.

Readers for IDX (MNIST), PGM (P2/P5) and CSV grids, plus a synthetic
Gaussian-blob generator. Pixels are indexed row-major; pixel ``k`` sits at
coordinate ``(k // width, k % width)`` (row, column), unit spacing.

IDX layout (all integers big-endian)::

    [offset] [type]   [value]
    0000     uint32   0x00000803 (images) / 0x00000801 (labels)
    0004     uint32   number of items
    0008     uint32   rows           (images only)
    0012     uint32   columns        (images only)
    ....     uint8    pixels / labels, row-major, item after item

Files ending in ``.gz`` are transparently decompressed.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import DegenerateImageError, DomainError, FormatError, LengthError

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801
SMOOTHING_DELTA = 1e-9
MASS_TOL = 1e-12


@dataclass(frozen=True)
class PixelGrid:
    height: int
    width: int

    def __post_init__(self):
        if int(self.height) < 1 or int(self.width) < 1:
            raise DomainError(f"grid dimensions must be positive, got {self.height}x{self.width}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def size(self) -> int:
        return self.height * self.width

    def coordinates(self) -> np.ndarray:
        """(p, 2) array of pixel positions (row, column), row-major order."""
        rows, cols = np.divmod(np.arange(self.size), self.width)
        return np.column_stack([rows, cols]).astype(np.float64)


@dataclass(frozen=True, eq=False)
class ImageHistogram:
    """A nonnegative field on ``grid`` with total mass one."""

    grid: PixelGrid
    weights: np.ndarray = field(repr=False)

    def __post_init__(self):
        w = np.ascontiguousarray(self.weights, dtype=np.float64).reshape(-1)
        if w.size != self.grid.size:
            raise DomainError(f"expected {self.grid.size} weights, got {w.size}")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise DomainError("histogram weights must be finite and nonnegative")
        if abs(w.sum() - 1.0) > MASS_TOL:
            raise DomainError(f"histogram mass is {w.sum()!r}, expected 1")
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_array(cls, values, smooth: bool = False) -> "ImageHistogram":
        """Normalize a 2-D intensity array by its total sum.

        With ``smooth=True`` a constant ``1e-9`` is added to every pixel
        before normalization so that the histogram has full support.
        """
        arr = np.asarray(values, dtype=np.float64)
        if arr.ndim != 2:
            raise DomainError(f"expected a 2-D array, got shape {arr.shape}")
        if np.any(arr < 0):
            raise DomainError("pixel intensities must be nonnegative")
        if not np.all(np.isfinite(arr)):
            raise DomainError("pixel intensities must be finite")
        if smooth:
            arr = arr + SMOOTHING_DELTA
        total = arr.sum()
        if not total > 0:
            raise DegenerateImageError("image has zero total intensity")
        w = arr.reshape(-1) / total
        # Re-normalize once more so the sum is 1 to machine precision.
        w = w / w.sum()
        return cls(PixelGrid(*arr.shape), w)

    def as_array(self) -> np.ndarray:
        return self.weights.reshape(self.grid.shape)

    def support(self) -> np.ndarray:
        return np.flatnonzero(self.weights > 0)

    def __eq__(self, other):
        if not isinstance(other, ImageHistogram):
            return NotImplemented
        return self.grid == other.grid and np.array_equal(self.weights, other.weights)

    __hash__ = None


def _open(path):
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_idx(path, magic: int, ndim: int) -> np.ndarray:
    with _open(path) as fh:
        raw = fh.read()
    header_len = 4 * (1 + ndim)
    if len(raw) < header_len:
        raise LengthError(f"{path}: truncated IDX header")
    found = struct.unpack(">I", raw[:4])[0]
    if found != magic:
        raise FormatError(f"{path}: bad IDX magic 0x{found:08x}, expected 0x{magic:08x}")
    dims = struct.unpack(">" + "I" * ndim, raw[4:header_len])
    n_bytes = int(np.prod(dims, dtype=np.int64))
    payload = raw[header_len:]
    if len(payload) < n_bytes:
        raise LengthError(f"{path}: payload has {len(payload)} bytes, header announces {n_bytes}")
    return np.frombuffer(payload[:n_bytes], dtype=np.uint8).reshape(dims)


def read_idx_images(path) -> np.ndarray:
    """Raw ``(count, rows, cols)`` uint8 tensor from an IDX image file."""
    return _read_idx(path, IDX_IMAGE_MAGIC, 3)


def load_idx(path, smooth: bool = False) -> list[ImageHistogram]:
    """One normalized histogram per image stored in an IDX image file."""
    return [ImageHistogram.from_array(img, smooth=smooth) for img in read_idx_images(path)]


def load_idx_labels(path) -> np.ndarray:
    return _read_idx(path, IDX_LABEL_MAGIC, 1).astype(np.int64)


def write_idx_images(path, images) -> None:
    images = np.asarray(images)
    if images.ndim != 3:
        raise DomainError("expected a (count, rows, cols) array")
    if images.min(initial=0) < 0 or images.max(initial=0) > 255:
        raise DomainError("IDX images hold uint8 values")
    header = struct.pack(">IIII", IDX_IMAGE_MAGIC, *images.shape)
    Path(path).write_bytes(header + images.astype(np.uint8).tobytes())


def write_idx_labels(path, labels) -> None:
    labels = np.asarray(labels).astype(np.uint8)
    Path(path).write_bytes(struct.pack(">II", IDX_LABEL_MAGIC, labels.size) + labels.tobytes())


def _pgm_tokens(data: bytes, count: int, start: int) -> tuple[list[bytes], int]:
    """Read ``count`` whitespace-separated header tokens, skipping comments."""
    tokens = []
    i = start
    while len(tokens) < count:
        while i < len(data) and data[i : i + 1].isspace():
            i += 1
        if i >= len(data):
            raise LengthError("truncated PGM header")
        if data[i : i + 1] == b"#":
            while i < len(data) and data[i : i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < len(data) and not data[j : j + 1].isspace() and data[j : j + 1] != b"#":
            j += 1
        tokens.append(data[i:j])
        i = j
    return tokens, i


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    magic = data[:2]
    if magic not in (b"P2", b"P5"):
        raise FormatError(f"{path}: not a P2/P5 PGM file")
    (w, h, maxval), pos = _pgm_tokens(data, 3, 2)
    width, height, maxval = int(w), int(h), int(maxval)
    if width < 1 or height < 1 or not 0 < maxval < 65536:
        raise FormatError(f"{path}: invalid PGM header")
    n = width * height
    if magic == b"P2":
        values = data[pos:].split()
        if len(values) < n:
            raise LengthError(f"{path}: expected {n} values, found {len(values)}")
        arr = np.array([int(v) for v in values[:n]], dtype=np.float64)
    else:
        # Exactly one whitespace byte separates the header from the raster.
        raster = data[pos + 1 :]
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
        if len(raster) < n * dtype.itemsize:
            raise LengthError(f"{path}: truncated PGM raster")
        arr = np.frombuffer(raster[: n * dtype.itemsize], dtype=dtype).astype(np.float64)
    return arr.reshape(height, width)


def read_csv_grid(path) -> np.ndarray:
    rows = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if line:
            rows.append([float(tok) for tok in line.split(",")])
    if not rows or len({len(r) for r in rows}) != 1:
        raise FormatError(f"{path}: CSV grid must be a nonempty rectangle")
    arr = np.array(rows, dtype=np.float64)
    if np.any(arr < 0):
        raise DomainError(f"{path}: negative intensities")
    return arr


def load_grid(path, format: str | None = None, smooth: bool = False) -> ImageHistogram:
    """Load a PGM (P2/P5) or CSV grayscale grid as a histogram.

    ``format`` defaults to the file extension.
    """
    fmt = (format or Path(path).suffix.lstrip(".")).lower()
    if fmt == "pgm":
        arr = read_pgm(path)
    elif fmt == "csv":
        arr = read_csv_grid(path)
    else:
        raise FormatError(f"unsupported grid format {fmt!r}")
    return ImageHistogram.from_array(arr, smooth=smooth)


def write_pgm(path, image, maxval: int = 255) -> None:
    """Write a P5 PGM; histograms are rescaled so their max maps to ``maxval``."""
    arr = image.as_array() if isinstance(image, ImageHistogram) else np.asarray(image, float)
    top = arr.max()
    scaled = np.zeros_like(arr) if top <= 0 else arr / top * maxval
    pixels = np.rint(scaled).astype(np.uint8 if maxval < 256 else ">u2")
    h, w = arr.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n{maxval}\n".encode() + pixels.tobytes())


def synth_blob(grid: PixelGrid, center, scale: float, seed: int = 0, noise: float = 0.0,
               smooth: bool = False) -> ImageHistogram:
    """Discretized isotropic Gaussian bump, truncated to ``grid``.

    ``center`` is (row, column). ``noise`` > 0 multiplies every pixel by an
    independent ``1 + noise * U[-1, 1]`` factor drawn from ``seed``.
    """
    if not scale > 0:
        raise DomainError("blob scale must be positive")
    coords = grid.coordinates()
    d2 = np.sum((coords - np.asarray(center, dtype=np.float64)) ** 2, axis=1)
    values = np.exp(-0.5 * d2 / scale**2)
    if noise:
        rng = np.random.default_rng(seed)
        values = values * (1.0 + noise * rng.uniform(-1.0, 1.0, size=values.size))
    if not values.sum() > 0:
        raise DegenerateImageError("blob mass underflows on the grid")
    return ImageHistogram.from_array(values.reshape(grid.shape), smooth=smooth)


def downscale(image: ImageHistogram, shape: tuple[int, int]) -> ImageHistogram:
    """Bilinear resampling to ``shape`` followed by renormalization."""
    arr = image.as_array()
    factors = (shape[0] / arr.shape[0], shape[1] / arr.shape[1])
    out = np.clip(ndimage.zoom(arr, factors, order=1, grid_mode=True, mode="nearest"), 0, None)
    return ImageHistogram.from_array(out[: shape[0], : shape[1]])
