"""Seeded synthetic image corpora built from Gaussian blobs.

``inlier`` images are isotropic blobs with a jittered centre and width;
``shifted`` moves the centre well outside the inlier range; ``deformed``
stretches the blob along a random direction. Item ``k`` of a corpus draws
from ``derive_seed(seed, 1, k)``, so corpora are prefix-stable.
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateImageError, DomainError
from .histogram import ImageHistogram, PixelGrid
from .seeds import SYNTHETIC, derive_rng

KINDS = ("inlier", "shifted", "deformed")


def anisotropic_blob(grid: PixelGrid, center, scales, angle: float, noise: float = 0.0,
                     rng: np.random.Generator | None = None) -> ImageHistogram:
    """Gaussian bump with standard deviations ``scales`` along axes rotated by ``angle``."""
    s1, s2 = scales
    if not (s1 > 0 and s2 > 0):
        raise DomainError("blob scales must be positive")
    d = grid.coordinates() - np.asarray(center, dtype=np.float64)
    c, s = np.cos(angle), np.sin(angle)
    a = c * d[:, 0] + s * d[:, 1]
    b = -s * d[:, 0] + c * d[:, 1]
    values = np.exp(-0.5 * ((a / s1) ** 2 + (b / s2) ** 2))
    if noise:
        rng = rng or np.random.default_rng(0)
        values = values * (1.0 + noise * rng.uniform(-1.0, 1.0, size=values.size))
    if not values.sum() > 0:
        raise DegenerateImageError("blob mass underflows on the grid")
    return ImageHistogram.from_array(values.reshape(grid.shape))


def blob_image(grid: PixelGrid, kind: str, rng: np.random.Generator, jitter: float = 1.5,
               width: float | None = None, noise: float = 0.05) -> ImageHistogram:
    if kind not in KINDS:
        raise DomainError(f"unknown corpus kind {kind!r}")
    h, w = grid.shape
    mid = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    base = width or min(h, w) / 6.0
    center = mid + rng.uniform(-jitter, jitter, size=2)
    scale = base * (1.0 + rng.uniform(-0.2, 0.2))
    angle = rng.uniform(0.0, np.pi)
    if kind == "inlier":
        scales = (scale, scale)
    elif kind == "shifted":
        direction = np.array([np.cos(angle), np.sin(angle)])
        center = mid + (jitter + rng.uniform(1.5, 2.5)) * direction
        scales = (scale, scale)
    else:
        stretch = rng.uniform(2.0, 2.5)
        scales = (scale * np.sqrt(stretch), scale / np.sqrt(stretch))
    return anisotropic_blob(grid, center, scales, angle, noise, rng)


def blob_corpus(count: int, grid: PixelGrid, kind: str = "inlier", seed: int = 0, start: int = 0,
                **kwargs) -> list[ImageHistogram]:
    """Items ``start .. start + count - 1`` of the seeded corpus of ``kind``."""
    offset = KINDS.index(kind) * 1_000_000 if kind in KINDS else 0
    return [blob_image(grid, kind, derive_rng(seed, SYNTHETIC, offset + start + k), **kwargs)
            for k in range(count)]
