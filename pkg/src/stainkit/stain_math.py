"""Optical-density conversion and Ruifrok-Johnston colour deconvolution.

Images are ``uint8`` arrays with RGB on the last axis; optical density
(OD) and concentration arrays are ``float64`` with the same leading
shape. Per pixel the Beer-Lambert model is ``od = M @ c`` where the
columns of ``M`` are unit stain vectors and ``c`` holds the per-stain
concentrations, following Ruifrok & Johnston's colour deconvolution.

All functions are pure: identical inputs give bit-identical outputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    ChannelCountError,
    DimensionError,
    DomainError,
    SingularStainMatrix,
)

__all__ = [
    "DEFAULT_I0",
    "PRESET_STAINS",
    "StainMatrix",
    "preset_matrix",
    "rgb_to_od",
    "od_to_rgb",
    "deconvolve",
    "reconstruct",
    "load_stain_matrix",
    "save_stain_matrix",
]

DEFAULT_I0 = 255

# Ruifrok & Johnston's published absorbance vectors (normalised on use).
PRESET_STAINS = {
    "haematoxylin": (0.65, 0.70, 0.29),
    "eosin": (0.07, 0.99, 0.11),
    "dab": (0.27, 0.57, 0.78),
}

_PRESET_MATRICES = {
    "h-e": ("haematoxylin", "eosin"),
    "h-dab": ("haematoxylin", "dab"),
    "h-e-dab": ("haematoxylin", "eosin", "dab"),
}

_MIN_PAIR_ANGLE_DEG = 1.0
_MAX_CONDITION = 1e6


@dataclass(frozen=True, eq=False)
class StainMatrix:
    """Ordered set of 2 or 3 unit optical-density stain vectors.

    ``vectors`` has one stain per row; rows are re-normalised on
    construction. Components must be non-negative and the vectors
    pairwise non-parallel (> 1 degree apart).
    """

    vectors: np.ndarray
    names: tuple[str, ...]

    def __post_init__(self):
        v = np.array(self.vectors, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] != 3 or v.shape[0] not in (2, 3):
            raise DimensionError(f"stain matrix must be (2,3) or (3,3), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise DomainError("stain vectors must be finite")
        if v.min() < -1e-9:
            raise DomainError("stain vector components must be non-negative")
        v = np.maximum(v, 0.0)
        norms = np.linalg.norm(v, axis=1)
        if np.any(norms == 0.0):
            raise DomainError("stain vectors must be non-zero")
        v = v / norms[:, None]
        for i in range(v.shape[0]):
            for j in range(i + 1, v.shape[0]):
                cos = float(np.clip(np.dot(v[i], v[j]), -1.0, 1.0))
                angle = np.degrees(np.arccos(cos))
                if angle <= _MIN_PAIR_ANGLE_DEG:
                    raise SingularStainMatrix(
                        f"stains {i} and {j} are {angle:.3f} degrees apart (minimum 1)"
                    )
        names = tuple(str(n) for n in self.names)
        if len(names) != v.shape[0] or any(not n for n in names):
            raise DimensionError("one non-empty name is required per stain")
        v.setflags(write=False)
        object.__setattr__(self, "vectors", v)
        object.__setattr__(self, "names", names)

    @property
    def n_stains(self) -> int:
        return self.vectors.shape[0]

    def completed(self) -> np.ndarray:
        """Square (3, 3) basis with stain vectors as columns.

        A two-stain matrix is completed with the normalised cross
        product of its stains; its concentration is solved for but
        discarded by :func:`deconvolve`.
        """
        if self.n_stains == 3:
            return self.vectors.T.copy()
        third = np.cross(self.vectors[0], self.vectors[1])
        third = third / np.linalg.norm(third)
        return np.column_stack([self.vectors[0], self.vectors[1], third])

    def to_dict(self, i0: int = DEFAULT_I0) -> dict:
        return {
            "i0": int(i0),
            "stains": [
                {"name": name, "od": [float(x) for x in vec]}
                for name, vec in zip(self.names, self.vectors)
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "StainMatrix":
        stains = doc["stains"]
        vectors = np.array([s["od"] for s in stains], dtype=np.float64)
        names = tuple(s["name"] for s in stains)
        return cls(vectors, names)


def preset_matrix(name: str) -> StainMatrix:
    """Named reference matrix built from the published stain vectors."""
    try:
        stain_names = _PRESET_MATRICES[name]
    except KeyError:
        raise DomainError(
            f"unknown preset {name!r}; available: {sorted(_PRESET_MATRICES)}"
        ) from None
    vectors = np.array([PRESET_STAINS[n] for n in stain_names], dtype=np.float64)
    return StainMatrix(vectors, stain_names)


def _check_i0(i0) -> float:
    i0 = float(i0)
    if not np.isfinite(i0) or i0 < 1:
        raise DomainError(f"i0 must be a positive intensity, got {i0}")
    return i0


def rgb_to_od(image, i0: int = DEFAULT_I0) -> np.ndarray:
    """Convert 8-bit RGB values to optical density.

    Per channel ``od = -log10((v + 1) / (i0 + 1))``; the +1 offset keeps
    v = 0 finite and makes the round trip through :func:`od_to_rgb`
    exact. Output is clamped at 0 (values brighter than ``i0`` carry no
    absorbance).
    """
    i0 = _check_i0(i0)
    arr = np.asarray(image)
    if arr.ndim < 1 or arr.shape[-1] != 3:
        raise ChannelCountError(f"expected 3 channels on the last axis, got shape {arr.shape}")
    arr = arr.astype(np.float64)
    if arr.min() < 0 or arr.max() > 255:
        raise DomainError("intensities must lie in [0, 255]")
    od = -np.log10((arr + 1.0) / (i0 + 1.0))
    return np.maximum(od, 0.0)


def od_to_rgb(od, i0: int = DEFAULT_I0) -> np.ndarray:
    """Invert :func:`rgb_to_od`: ``v = round((i0 + 1) * 10**(-od) - 1)``.

    Rounding is half-to-even; results are clamped to [0, 255].
    """
    i0 = _check_i0(i0)
    arr = np.asarray(od, dtype=np.float64)
    if arr.size and arr.min() < 0:
        raise DomainError("optical densities must be non-negative")
    v = np.rint((i0 + 1.0) * np.power(10.0, -arr) - 1.0)
    return np.clip(v, 0, 255).astype(np.uint8)


def deconvolve(od, m: StainMatrix, return_residual: bool = False):
    """Per-pixel least-squares stain concentrations for ``M @ c = od``.

    Concentrations are clamped to be non-negative (negative amounts of
    stain are physically meaningless). With ``return_residual`` the
    Euclidean OD residual of the clamped solution is returned as well.
    """
    arr = np.asarray(od, dtype=np.float64)
    if arr.ndim < 1 or arr.shape[-1] != 3:
        raise ChannelCountError(f"expected 3 OD components on the last axis, got {arr.shape}")
    basis = m.completed()
    cond = np.linalg.cond(basis)
    if cond > _MAX_CONDITION:
        raise SingularStainMatrix(f"stain basis condition number {cond:.3g} exceeds 1e6")
    inv = np.linalg.inv(basis)
    c = arr @ inv.T
    c = np.maximum(c[..., : m.n_stains], 0.0)
    if return_residual:
        residual = np.linalg.norm(arr - c @ m.vectors, axis=-1)
        return c, residual
    return c


def reconstruct(c, m: StainMatrix, i0: int = DEFAULT_I0) -> np.ndarray:
    """Rebuild an 8-bit RGB image from concentrations and stain vectors."""
    arr = np.asarray(c, dtype=np.float64)
    if arr.ndim < 1 or arr.shape[-1] != m.n_stains:
        raise DimensionError(
            f"concentration map has {arr.shape[-1] if arr.ndim else 0} stains, matrix has {m.n_stains}"
        )
    od = arr @ m.vectors
    return od_to_rgb(od, i0)


def save_stain_matrix(path, m: StainMatrix, i0: int = DEFAULT_I0) -> None:
    """Write the stain-matrix document ``{"i0": ..., "stains": [...]}``."""
    Path(path).write_text(json.dumps(m.to_dict(i0), indent=2) + "\n")


def load_stain_matrix(path) -> StainMatrix:
    """Read a stain-matrix document; vectors are re-normalised and validated."""
    doc = json.loads(Path(path).read_text())
    return StainMatrix.from_dict(doc)
