"""Automatic stain-vector estimation in the style of Macenko et al.

The stain plane is the span of the two principal eigenvectors of the
optical-density covariance; the stain vectors are the robust angular
extremes of the projected pixel cloud. A profile couples the estimated
matrix with a robust concentration maximum per stain, which colour
transfer uses to rescale concentrations between stainings.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    ChannelCountError,
    DegenerateStainDistribution,
    DomainError,
    EmptyInput,
    InsufficientTissue,
)
from .stain_math import DEFAULT_I0, StainMatrix, deconvolve, rgb_to_od

__all__ = [
    "MacenkoParams",
    "StainProfile",
    "estimate_stain_profile",
    "concentration_scales",
    "load_stain_profile",
    "save_stain_profile",
]

_MIN_SPREAD_DEG = 1.0
_ABSENT_SCALE = 1e-6


@dataclass(frozen=True)
class MacenkoParams:
    """Estimation parameters (the method's customary defaults)."""

    od_threshold: float = 0.15
    angle_percentile: float = 1.0
    concentration_percentile: float = 99.0
    min_tissue_pixels: int = 1000

    def __post_init__(self):
        if not 0 < self.od_threshold < 2:
            raise DomainError(f"od_threshold must be in (0, 2), got {self.od_threshold}")
        if not 0 < self.angle_percentile < 50:
            raise DomainError(f"angle_percentile must be in (0, 50), got {self.angle_percentile}")
        if not 50 < self.concentration_percentile <= 100:
            raise DomainError(
                f"concentration_percentile must be in (50, 100], got {self.concentration_percentile}"
            )
        if self.min_tissue_pixels < 1:
            raise DomainError("min_tissue_pixels must be positive")


@dataclass(frozen=True, eq=False)
class StainProfile:
    """Estimated two-stain matrix plus a robust concentration maximum per stain."""

    matrix: StainMatrix
    robust_max: np.ndarray
    absent: tuple[bool, ...] = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        rm = np.array(self.robust_max, dtype=np.float64)
        if rm.shape != (self.matrix.n_stains,):
            raise DomainError(
                f"robust_max must have one entry per stain, got shape {rm.shape}"
            )
        if np.any(rm <= 0) or not np.all(np.isfinite(rm)):
            raise DomainError("robust_max entries must be positive and finite")
        rm.setflags(write=False)
        object.__setattr__(self, "robust_max", rm)
        absent = self.absent
        if absent is None:
            absent = (False,) * self.matrix.n_stains
        absent = tuple(bool(a) for a in absent)
        if len(absent) != self.matrix.n_stains:
            raise DomainError("absent flags must have one entry per stain")
        object.__setattr__(self, "absent", absent)

    def to_dict(self, i0: int = DEFAULT_I0) -> dict:
        doc = self.matrix.to_dict(i0)
        doc["robust_max"] = [float(x) for x in self.robust_max]
        if any(self.absent):
            doc["absent_stains"] = list(self.absent)
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "StainProfile":
        matrix = StainMatrix.from_dict(doc)
        absent = doc.get("absent_stains")
        return cls(matrix, np.asarray(doc["robust_max"], dtype=np.float64),
                   tuple(absent) if absent is not None else None)


def concentration_scales(c, percentile: float):
    """Robust per-stain maxima of a concentration map.

    Returns ``(scales, absent)`` where an all-but-absent stain (its
    percentile below 1e-6) gets the neutral scale 1 and its flag set.
    Percentiles interpolate linearly between order statistics.
    """
    arr = np.asarray(c, dtype=np.float64)
    if arr.size == 0:
        raise EmptyInput("concentration map is empty")
    if arr.ndim < 1:
        arr = arr.reshape(1, 1)
    flat = arr.reshape(-1, arr.shape[-1])
    scales = np.percentile(flat, percentile, axis=0)
    absent = scales < _ABSENT_SCALE
    scales = np.where(absent, 1.0, scales)
    return scales, tuple(bool(a) for a in absent)


def estimate_stain_profile(
    image,
    params: MacenkoParams | None = None,
    i0: int = DEFAULT_I0,
) -> StainProfile:
    """Estimate a two-stain profile from an RGB image.

    Pixels whose maximum OD channel falls below ``od_threshold`` are
    treated as background and discarded; the surviving cloud must hold
    at least ``min_tissue_pixels`` pixels and span more than 1 degree of
    angle in the principal plane. The stain with the larger red-channel
    OD component is ordered first and labelled "haematoxylin".
    """
    if params is None:
        params = MacenkoParams()
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ChannelCountError(f"expected an (H, W, 3) image, got shape {arr.shape}")

    od = rgb_to_od(arr, i0).reshape(-1, 3)
    tissue = od[od.max(axis=1) >= params.od_threshold]
    if tissue.shape[0] < params.min_tissue_pixels:
        raise InsufficientTissue(
            f"{tissue.shape[0]} tissue pixels survive the OD threshold "
            f"(minimum {params.min_tissue_pixels})"
        )

    cov = np.cov(tissue, rowvar=False)
    eigvals, eigvecs = np.linalg.eigh(cov)
    plane = eigvecs[:, 1:]  # two principal eigenvectors, ascending order
    # fix eigenvector signs so the decomposition is reproducible
    for k in range(2):
        pivot = np.argmax(np.abs(plane[:, k]))
        if plane[pivot, k] < 0:
            plane[:, k] = -plane[:, k]

    proj = tissue @ plane
    phi = np.arctan2(proj[:, 1], proj[:, 0])
    spread = np.degrees(phi.max() - phi.min())
    if spread < _MIN_SPREAD_DEG:
        raise DegenerateStainDistribution(
            f"optical densities span {spread:.3f} degrees (minimum 1)"
        )

    lo = np.percentile(phi, params.angle_percentile)
    hi = np.percentile(phi, 100.0 - params.angle_percentile)
    extremes = []
    for angle in (lo, hi):
        v = plane @ np.array([np.cos(angle), np.sin(angle)])
        if v.sum() < 0:
            v = -v
        v[np.abs(v) < 1e-8] = 0.0
        extremes.append(v / np.linalg.norm(v))

    # haematoxylin absorbs red the most: larger red-channel OD goes first
    if extremes[0][0] >= extremes[1][0]:
        ordered = extremes
    else:
        ordered = [extremes[1], extremes[0]]
    matrix = StainMatrix(np.stack(ordered), ("haematoxylin", "secondary"))

    concentrations = deconvolve(od, matrix)
    robust_max, absent = concentration_scales(
        concentrations, params.concentration_percentile
    )
    return StainProfile(matrix, robust_max, absent)


def save_stain_profile(path, profile: StainProfile, i0: int = DEFAULT_I0) -> None:
    """Write a profile as the stain-matrix document extended with robust_max."""
    Path(path).write_text(json.dumps(profile.to_dict(i0), indent=2) + "\n")


def load_stain_profile(path) -> StainProfile:
    doc = json.loads(Path(path).read_text())
    return StainProfile.from_dict(doc)
