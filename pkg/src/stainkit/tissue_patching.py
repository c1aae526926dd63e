"""Slide background removal, patch extraction and training-set statistics.

Coordinates are (x, y) with x the column and y the row, matching the
annotation document format ``{"objects": [{"id": ..., "polygon":
[[x, y], ...]}]}``. Patches cut beyond the slide edge are completed by
reflection through the edge pixels, consistent with the augmentation
module's border policy.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from matplotlib.path import Path as MplPath
from scipy import ndimage

from .augmentation import Sample
from .errors import (
    ChannelCountError,
    ConfigError,
    DegenerateImage,
    DimensionError,
    EmptyInput,
    InsufficientTissueArea,
)
from .transforms import to_greyscale

_EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)
_REJECTION_CAP_PER_PATCH = 1000


@dataclass(frozen=True, eq=False)
class DatasetStats:
    """Per-channel mean and population std of intensities on [0, 1]."""

    mean: np.ndarray
    std: np.ndarray
    pixel_count: int

    def to_dict(self) -> dict:
        return {
            "mean": [float(x) for x in self.mean],
            "std": [float(x) for x in self.std],
            "pixel_count": int(self.pixel_count),
        }


class AnnotationObject:
    """One annotated object, backed by a polygon or by labelled pixels."""

    __slots__ = ("id", "polygon", "_rows", "_cols")

    def __init__(self, object_id: int, polygon=None, pixels=None):
        self.id = int(object_id)
        if (polygon is None) == (pixels is None):
            raise ConfigError("provide exactly one of polygon or pixels")
        if polygon is not None:
            poly = np.asarray(polygon, dtype=np.float64)
            if poly.ndim != 2 or poly.shape[1] != 2 or poly.shape[0] < 3:
                raise ConfigError(f"polygon must be (k>=3, 2) [x, y] pairs, got {poly.shape}")
            if not np.all(np.isfinite(poly)):
                raise ConfigError("polygon coordinates must be finite")
            self.polygon = poly
            self._rows = self._cols = None
        else:
            rows, cols = pixels
            self.polygon = None
            self._rows = np.asarray(rows, dtype=np.intp)
            self._cols = np.asarray(cols, dtype=np.intp)
            if self._rows.size == 0:
                raise ConfigError("pixel-backed object has no pixels")

    def centroid(self) -> tuple[float, float]:
        """(x, y) area centroid for polygons, pixel mean for rasters."""
        if self.polygon is None:
            return float(self._cols.mean()), float(self._rows.mean())
        x = self.polygon[:, 0]
        y = self.polygon[:, 1]
        x1, y1 = np.roll(x, -1), np.roll(y, -1)
        cross = x * y1 - x1 * y
        area = cross.sum() / 2.0
        if abs(area) < 1e-9:
            return float(x.mean()), float(y.mean())
        cx = ((x + x1) * cross).sum() / (6.0 * area)
        cy = ((y + y1) * cross).sum() / (6.0 * area)
        return float(cx), float(cy)

    def bbox(self) -> tuple[float, float, float, float]:
        """(x0, y0, x1, y1), inclusive bounds."""
        if self.polygon is None:
            return (
                float(self._cols.min()),
                float(self._rows.min()),
                float(self._cols.max()),
                float(self._rows.max()),
            )
        return (
            float(self.polygon[:, 0].min()),
            float(self.polygon[:, 1].min()),
            float(self.polygon[:, 0].max()),
            float(self.polygon[:, 1].max()),
        )

    def contains(self, x: float, y: float) -> bool:
        if self.polygon is None:
            hit = (self._rows == int(round(y))) & (self._cols == int(round(x)))
            return bool(hit.any())
        return bool(MplPath(self.polygon).contains_point((x, y)))

    def rasterise(self, y0: int, x0: int, height: int, width: int) -> np.ndarray:
        """Boolean mask of the object over the given window (pixel centres)."""
        out = np.zeros((height, width), dtype=bool)
        bx0, by0, bx1, by1 = self.bbox()
        if bx1 < x0 or by1 < y0 or bx0 > x0 + width - 1 or by0 > y0 + height - 1:
            return out
        if self.polygon is None:
            keep = (
                (self._rows >= y0)
                & (self._rows < y0 + height)
                & (self._cols >= x0)
                & (self._cols < x0 + width)
            )
            out[self._rows[keep] - y0, self._cols[keep] - x0] = True
            return out
        r0 = max(int(np.floor(by0)) - y0, 0)
        r1 = min(int(np.ceil(by1)) - y0, height - 1)
        c0 = max(int(np.floor(bx0)) - x0, 0)
        c1 = min(int(np.ceil(bx1)) - x0, width - 1)
        if r1 < r0 or c1 < c0:
            return out
        yy, xx = np.mgrid[r0 : r1 + 1, c0 : c1 + 1]
        points = np.column_stack([(xx + x0).ravel(), (yy + y0).ravel()])
        inside = MplPath(self.polygon).contains_points(points)
        out[r0 : r1 + 1, c0 : c1 + 1] = inside.reshape(yy.shape)
        return out


class AnnotationSet:
    """Ordered collection of annotated objects."""

    def __init__(self, objects):
        self.objects = tuple(objects)

    def __len__(self):
        return len(self.objects)

    def __iter__(self):
        return iter(self.objects)

    def rasterise(self, shape) -> np.ndarray:
        """Union raster of all objects at the given (H, W)."""
        h, w = shape
        out = np.zeros((h, w), dtype=bool)
        for obj in self.objects:
            out |= obj.rasterise(0, 0, h, w)
        return out

    @classmethod
    def from_dict(cls, doc: dict) -> "AnnotationSet":
        objects = [
            AnnotationObject(item["id"], polygon=item["polygon"])
            for item in doc.get("objects", [])
        ]
        return cls(objects)

    def to_dict(self) -> dict:
        items = []
        for obj in self.objects:
            if obj.polygon is None:
                raise ConfigError("pixel-backed annotations cannot be exported as polygons")
            items.append(
                {"id": obj.id, "polygon": [[float(x), float(y)] for x, y in obj.polygon]}
            )
        return {"objects": items}

    @classmethod
    def load(cls, path) -> "AnnotationSet":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def from_labelled_raster(cls, raster) -> "AnnotationSet":
        """Build objects from an integer raster (0 = background)."""
        arr = np.asarray(raster)
        if arr.ndim != 2:
            raise DimensionError(f"labelled raster must be 2-D, got shape {arr.shape}")
        objects = []
        for object_id in np.unique(arr):
            if object_id == 0:
                continue
            rows, cols = np.nonzero(arr == object_id)
            objects.append(AnnotationObject(int(object_id), pixels=(rows, cols)))
        return cls(objects)


def tissue_mask(image, min_object_px: int = 500, fill_holes: bool = True) -> np.ndarray:
    """Boolean tissue mask: threshold at the mean grey, drop small
    components (8-connected), fill enclosed holes."""
    grey = to_greyscale(image)
    if grey.min() == grey.max():
        raise DegenerateImage("image is constant; no threshold separates tissue")
    tissue = grey < grey.mean()
    if min_object_px > 1:
        labels, n = ndimage.label(tissue, structure=_EIGHT_CONNECTED)
        if n:
            sizes = np.bincount(labels.ravel())
            keep = sizes >= min_object_px
            keep[0] = False
            tissue = keep[labels]
    if fill_holes:
        tissue = ndimage.binary_fill_holes(tissue)
    return tissue


def _mirror_indices(start: int, count: int, n: int) -> np.ndarray:
    idx = np.arange(start, start + count)
    if n == 1:
        return np.zeros(count, dtype=np.intp)
    period = 2 * (n - 1)
    folded = np.abs(idx) % period
    return np.where(folded > n - 1, period - folded, folded).astype(np.intp)


def crop_with_reflection(image, y0: int, x0: int, height: int, width: int) -> np.ndarray:
    """Window crop, reflecting through the edge pixels where it overhangs."""
    arr = np.asarray(image)
    ys = _mirror_indices(y0, height, arr.shape[0])
    xs = _mirror_indices(x0, width, arr.shape[1])
    return arr[ys[:, None], xs[None, :]]


def _window_origin(centre_x: float, centre_y: float, size: int) -> tuple[int, int]:
    cx = int(np.rint(centre_x))
    cy = int(np.rint(centre_y))
    return cy - size // 2, cx - size // 2


def extract_glomerulus_patches(slide, annotations: AnnotationSet, size: int = 508) -> list[Sample]:
    """One patch per annotated object, centred on its centroid.

    The patch mask rasterises every annotation that intersects the
    window, so neighbouring objects appear in each other's patches.
    """
    arr = np.asarray(slide)
    samples = []
    for obj in annotations:
        cx, cy = obj.centroid()
        y0, x0 = _window_origin(cx, cy, size)
        image = crop_with_reflection(arr, y0, x0, size, size)
        mask = np.zeros((size, size), dtype=bool)
        for other in annotations:
            mask |= other.rasterise(y0, x0, size, size)
        samples.append(Sample(image, mask.astype(np.uint8) * 255, "glomerulus"))
    return samples


def sample_tissue_patches(
    slide,
    mask,
    annotations: AnnotationSet,
    n: int,
    size: int = 508,
    rng: np.random.Generator = None,
    exclude_overlap: bool = False,
) -> list[Sample]:
    """Random patches centred on tissue pixels outside every annotation.

    Centres are uniform over the tissue mask; draws landing inside an
    annotation are rejected (with ``exclude_overlap``, any window
    touching an annotation is rejected). A budget of 1000 draws per
    requested patch guards against undersized tissue.
    """
    if n == 0:
        return []
    if rng is None:
        raise ConfigError("sample_tissue_patches needs a random generator")
    arr = np.asarray(slide)
    tissue = np.asarray(mask, dtype=bool)
    if tissue.shape != arr.shape[:2]:
        raise DimensionError(
            f"tissue mask shape {tissue.shape} does not match slide {arr.shape[:2]}"
        )
    candidates = np.flatnonzero(tissue.ravel())
    if candidates.size == 0:
        raise InsufficientTissueArea("tissue mask is empty")
    anno_raster = annotations.rasterise(tissue.shape)
    width = tissue.shape[1]
    zero_mask = np.zeros((size, size), dtype=np.uint8)

    samples: list[Sample] = []
    budget = _REJECTION_CAP_PER_PATCH * n
    draws = 0
    while len(samples) < n:
        if draws >= budget:
            raise InsufficientTissueArea(
                f"accepted {len(samples)}/{n} patches after {draws} draws"
            )
        draws += 1
        flat = int(candidates[int(rng.integers(candidates.size))])
        cy, cx = divmod(flat, width)
        if anno_raster[cy, cx]:
            continue
        y0, x0 = _window_origin(cx, cy, size)
        if exclude_overlap:
            ys = slice(max(y0, 0), min(y0 + size, tissue.shape[0]))
            xs = slice(max(x0, 0), min(x0 + size, width))
            if anno_raster[ys, xs].any():
                continue
        image = crop_with_reflection(arr, y0, x0, size, size)
        samples.append(Sample(image, zero_mask.copy(), "tissue"))
    return samples


def dataset_stats(patches) -> DatasetStats:
    """Per-channel mean and population std of v/255 over all patches."""
    patches = list(patches)
    if not patches:
        raise EmptyInput("no patches given")
    first = np.asarray(patches[0])
    channels = 1 if first.ndim == 2 else first.shape[2]
    total = np.zeros(channels)
    total_sq = np.zeros(channels)
    count = 0
    for patch in patches:
        arr = np.asarray(patch)
        arr_channels = 1 if arr.ndim == 2 else arr.shape[2]
        if arr_channels != channels:
            raise ChannelCountError("all patches must share a channel count")
        values = arr.reshape(-1, channels).astype(np.float64) / 255.0
        total += values.sum(axis=0)
        total_sq += (values * values).sum(axis=0)
        count += values.shape[0]
    mean = total / count
    variance = np.maximum(total_sq / count - mean * mean, 0.0)
    std = np.sqrt(variance)
    # accumulation error leaves ~1e-17 of dust where the variance is truly zero
    if np.any(std < 1e-7):
        raise DegenerateImage("zero variance in at least one channel")
    return DatasetStats(mean, std, count)
