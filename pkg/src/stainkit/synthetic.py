"""Synthetic two-stain imagery for demos, benchmarks and tests."""

from __future__ import annotations

import numpy as np
from scipy.ndimage import gaussian_filter

from .stain_math import StainMatrix, reconstruct


def synth_concentrations(
    size: int,
    rng: np.random.Generator,
    n_stains: int = 2,
    peak: tuple[float, ...] = (1.1, 0.8),
    smooth: float = 12.0,
) -> np.ndarray:
    """Smooth non-negative concentration fields, one per stain."""
    fields = []
    for i in range(n_stains):
        f = gaussian_filter(rng.uniform(0.0, 1.0, (size, size)), smooth, mode="mirror")
        f -= f.min()
        m = f.max()
        if m > 0:
            f *= peak[i % len(peak)] / m
        fields.append(f)
    return np.stack(fields, axis=-1)


def synth_patch(
    matrix: StainMatrix,
    size: int,
    rng: np.random.Generator,
    n_blobs: int = 4,
) -> tuple[np.ndarray, np.ndarray]:
    """A tissue-like patch and a binary blob mask.

    Round blobs of extra stain-0 uptake are planted on a smooth
    background so that deconvolution, masking and montage rendering all
    have something to bite on. Returns ``(image, mask)`` with the mask
    in {0, 255}.
    """
    c = synth_concentrations(size, rng, matrix.n_stains)
    yy, xx = np.mgrid[0:size, 0:size]
    mask = np.zeros((size, size), dtype=bool)
    for _ in range(n_blobs):
        cy, cx = rng.integers(size // 6, size - size // 6, size=2)
        r = int(rng.integers(size // 12, size // 6))
        blob = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
        c[..., 0] += 0.9 * blob
        mask |= blob
    image = reconstruct(c, matrix)
    return image, (mask.astype(np.uint8) * 255)
