"""Stochastic on-the-fly augmentation of (image, mask) samples.

The pipeline applies, in this fixed order: elastic deformation, then an
affine step, additive Gaussian noise, Gaussian blur, brightness, colour
and contrast enhancement and stain variation, each gated independently
(probability 0.5 by default), and finally the training-strategy step
(greyscale, haematoxylin channel, random channel swap, or colour
transfer toward one of N stainings chosen uniformly, so a non-source
staining is picked with probability (N-1)/N).

Geometric steps resample the image bilinearly and the mask with nearest
neighbour; borders everywhere reflect through the edge pixel. Only the
seed changes outcomes, never the order of application.

Randomness for one sample is a pure function of (seed, sample index)
via :func:`stainkit.rng.derive_rng`, so batches may be split across any
number of workers. The draw order per sample is fixed: one gate draw
per step in pipeline order, each followed immediately by that step's
parameter draws when it fires, then the strategy draws.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Mapping, Sequence

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import ChannelCountError, ConfigError, DimensionError
from .rng import derive_rng
from .stain_estimation import StainProfile, estimate_stain_profile
from .stain_math import StainMatrix, deconvolve, preset_matrix, reconstruct, rgb_to_od
from .transforms import (
    ChannelPermutation,
    channel_swap,
    colour_transfer,
    extract_haematoxylin,
    luma,
    to_greyscale,
)

STEP_NAMES = ("affine", "noise", "blur", "brightness", "colour", "contrast", "stain_variation")
STRATEGIES = ("rgb", "greyscale", "haematoxylin", "channel_swap", "colour_transfer")
PIXEL_KINDS = ("noise", "blur", "brightness", "colour", "contrast")

_FIELD_SEED_MAX = 2**63


@dataclass(frozen=True, eq=False)
class Sample:
    """An image with its binary segmentation mask."""

    image: np.ndarray
    mask: np.ndarray
    label: str = "tissue"

    def __post_init__(self):
        image = np.asarray(self.image)
        mask = np.asarray(self.mask)
        if image.dtype != np.uint8 or mask.dtype != np.uint8:
            raise ConfigError("sample image and mask must be uint8")
        if image.ndim not in (2, 3) or (image.ndim == 3 and image.shape[2] != 3):
            raise ChannelCountError(f"image must be (H, W) or (H, W, 3), got {image.shape}")
        if mask.ndim != 2 or mask.shape != image.shape[:2]:
            raise DimensionError(
                f"mask shape {mask.shape} does not match image shape {image.shape[:2]}"
            )
        if not np.isin(mask, (0, 255)).all():
            raise ConfigError("mask values must be 0 or 255")
        if self.label not in ("glomerulus", "tissue"):
            raise ConfigError(f"unknown sample label {self.label!r}")
        object.__setattr__(self, "image", image)
        object.__setattr__(self, "mask", mask)


@dataclass(frozen=True)
class ElasticParams:
    """Peak displacement ``alpha`` (pixels) and field smoothing ``sigma``."""

    sigma: float = 10.0
    alpha: float = 100.0

    def __post_init__(self):
        if self.sigma <= 0:
            raise ConfigError(f"elastic sigma must be positive, got {self.sigma}")
        if self.alpha < 0:
            raise ConfigError(f"elastic alpha must be non-negative, got {self.alpha}")


def _check_range(name, rng_pair):
    lo, hi = (float(rng_pair[0]), float(rng_pair[1]))
    if not (np.isfinite(lo) and np.isfinite(hi)) or lo > hi:
        raise ConfigError(f"{name} must be an ordered (low, high) pair, got {rng_pair}")
    return (lo, hi)


@dataclass(frozen=True, eq=False)
class AugmentationConfig:
    """Sampling ranges, gate probabilities and the strategy step.

    ``elastic_probability`` defaults to 1 (deformation always applied);
    set it below 1 to gate deformation like the other steps.
    ``target_pools`` holds one pool of stain profiles per staining; the
    pool at ``source_pool_index`` stands for the source staining, for
    which colour transfer is skipped.
    """

    probabilities: Mapping[str, float] = field(
        default_factory=lambda: dict.fromkeys(STEP_NAMES, 0.5)
    )
    elastic_probability: float = 1.0
    rotation_range: tuple[float, float] = (0.0, 180.0)
    shift_range: tuple[float, float] = (-205.0, 205.0)
    zoom_range: tuple[float, float] = (0.8, 1.2)
    flip_horizontal: bool = True
    flip_vertical: bool = True
    noise_sigma_range: tuple[float, float] = (0.0, 2.55)
    blur_sigma_range: tuple[float, float] = (0.0, 1.0)
    brightness_range: tuple[float, float] = (0.9, 1.1)
    colour_range: tuple[float, float] = (0.9, 1.1)
    contrast_range: tuple[float, float] = (0.9, 1.1)
    stain_alpha_range: tuple[float, float] = (-0.25, 0.25)
    stain_beta_range: tuple[float, float] = (-0.05, 0.05)
    elastic: ElasticParams = field(default_factory=ElasticParams)
    strategy: str = "rgb"
    stain_matrix: StainMatrix = field(default_factory=lambda: preset_matrix("h-e"))
    source_profile: StainProfile | None = None
    target_pools: tuple[tuple[StainProfile, ...], ...] = ()
    source_pool_index: int = 0

    def __post_init__(self):
        probs = dict.fromkeys(STEP_NAMES, 0.5)
        for name, p in dict(self.probabilities).items():
            if name not in STEP_NAMES:
                raise ConfigError(f"unknown augmentation step {name!r}")
            p = float(p)
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"probability for {name} must be in [0, 1], got {p}")
            probs[name] = p
        object.__setattr__(self, "probabilities", MappingProxyType(probs))
        if not 0.0 <= self.elastic_probability <= 1.0:
            raise ConfigError("elastic_probability must be in [0, 1]")
        for name in (
            "rotation_range",
            "shift_range",
            "zoom_range",
            "noise_sigma_range",
            "blur_sigma_range",
            "brightness_range",
            "colour_range",
            "contrast_range",
            "stain_alpha_range",
            "stain_beta_range",
        ):
            object.__setattr__(self, name, _check_range(name, getattr(self, name)))
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}; one of {STRATEGIES}")
        pools = tuple(tuple(pool) for pool in self.target_pools)
        object.__setattr__(self, "target_pools", pools)
        if self.strategy == "colour_transfer":
            if not pools or any(len(pool) == 0 for pool in pools):
                raise ConfigError("colour_transfer strategy needs non-empty target_pools")
            if not 0 <= self.source_pool_index < len(pools):
                raise ConfigError(
                    f"source_pool_index {self.source_pool_index} outside the {len(pools)} pools"
                )

    def to_dict(self) -> dict:
        return {
            "probabilities": dict(self.probabilities),
            "elastic_probability": self.elastic_probability,
            "rotation_range": list(self.rotation_range),
            "shift_range": list(self.shift_range),
            "zoom_range": list(self.zoom_range),
            "flip_horizontal": self.flip_horizontal,
            "flip_vertical": self.flip_vertical,
            "noise_sigma_range": list(self.noise_sigma_range),
            "blur_sigma_range": list(self.blur_sigma_range),
            "brightness_range": list(self.brightness_range),
            "colour_range": list(self.colour_range),
            "contrast_range": list(self.contrast_range),
            "stain_alpha_range": list(self.stain_alpha_range),
            "stain_beta_range": list(self.stain_beta_range),
            "elastic": {"sigma": self.elastic.sigma, "alpha": self.elastic.alpha},
            "strategy": self.strategy,
            "stain_matrix": self.stain_matrix.to_dict(),
            "source_profile": (
                self.source_profile.to_dict() if self.source_profile is not None else None
            ),
            "target_pools": [[p.to_dict() for p in pool] for pool in self.target_pools],
            "source_pool_index": self.source_pool_index,
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "AugmentationConfig":
        doc = dict(doc)
        kwargs = {}
        for name in (
            "probabilities",
            "elastic_probability",
            "flip_horizontal",
            "flip_vertical",
            "strategy",
            "source_pool_index",
        ):
            if name in doc:
                kwargs[name] = doc[name]
        for name in (
            "rotation_range",
            "shift_range",
            "zoom_range",
            "noise_sigma_range",
            "blur_sigma_range",
            "brightness_range",
            "colour_range",
            "contrast_range",
            "stain_alpha_range",
            "stain_beta_range",
        ):
            if name in doc:
                kwargs[name] = tuple(doc[name])
        if "elastic" in doc:
            kwargs["elastic"] = ElasticParams(**doc["elastic"])
        if "stain_matrix" in doc and doc["stain_matrix"] is not None:
            m = doc["stain_matrix"]
            kwargs["stain_matrix"] = preset_matrix(m) if isinstance(m, str) else StainMatrix.from_dict(m)
        if doc.get("source_profile") is not None:
            kwargs["source_profile"] = StainProfile.from_dict(doc["source_profile"])
        if "target_pools" in doc:
            kwargs["target_pools"] = tuple(
                tuple(StainProfile.from_dict(p) for p in pool) for pool in doc["target_pools"]
            )
        return cls(**kwargs)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "AugmentationConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


# --------------------------------------------------------------------------
# resampling core (reflection borders, image bilinear / mask nearest)


def _mirror(coords: np.ndarray, n: int) -> np.ndarray:
    """Fold continuous coordinates into [0, n-1] by reflection through
    the edge pixel centres."""
    if n == 1:
        return np.zeros_like(coords)
    period = 2.0 * (n - 1)
    c = np.abs(coords) % period
    return np.where(c > n - 1, period - c, c)


def _sample_bilinear(img: np.ndarray, sy: np.ndarray, sx: np.ndarray) -> np.ndarray:
    h, w = img.shape[:2]
    sy = _mirror(sy, h)
    sx = _mirror(sx, w)
    y0 = np.floor(sy).astype(np.intp)
    x0 = np.floor(sx).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = sy - y0
    fx = sx - x0
    if img.ndim == 3:
        fy = fy[..., None]
        fx = fx[..., None]
    arr = img.astype(np.float64)
    top = arr[y0, x0] * (1.0 - fx) + arr[y0, x1] * fx
    bottom = arr[y1, x0] * (1.0 - fx) + arr[y1, x1] * fx
    values = top * (1.0 - fy) + bottom * fy
    return np.clip(np.rint(values), 0, 255).astype(np.uint8)


def _sample_nearest(img: np.ndarray, sy: np.ndarray, sx: np.ndarray) -> np.ndarray:
    h, w = img.shape[:2]
    yi = np.rint(_mirror(sy, h)).astype(np.intp)
    xi = np.rint(_mirror(sx, w)).astype(np.intp)
    return img[yi, xi]


def _resample_sample(sample: Sample, sy: np.ndarray, sx: np.ndarray) -> Sample:
    return Sample(
        _sample_bilinear(sample.image, sy, sx),
        _sample_nearest(sample.mask, sy, sx),
        sample.label,
    )


# --------------------------------------------------------------------------
# per-step draws and their deterministic application


@dataclass(frozen=True)
class AffineDraw:
    angle_deg: float
    shift_x: float
    shift_y: float
    zoom: float
    flip_h: bool
    flip_v: bool


@dataclass(frozen=True)
class StainVariationDraw:
    alphas: tuple[float, ...]
    betas: tuple[float, ...]


@dataclass(frozen=True)
class StrategyDraw:
    kind: str
    permutation: ChannelPermutation | None = None
    pool_index: int | None = None
    profile_index: int | None = None


@dataclass(frozen=True)
class AugmentationPlan:
    """Every random decision for one sample, drawn up front.

    ``apply_plan`` turns a plan into pixels deterministically; field
    seeds carry the randomness of the dense elastic/noise draws.
    """

    elastic_seed: int | None
    affine: AffineDraw | None
    noise_sigma: float | None
    noise_seed: int | None
    blur_sigma: float | None
    brightness: float | None
    colour: float | None
    contrast: float | None
    stain: StainVariationDraw | None
    strategy: StrategyDraw


def _draw_affine(cfg: AugmentationConfig, rng: np.random.Generator) -> AffineDraw:
    return AffineDraw(
        angle_deg=float(rng.uniform(*cfg.rotation_range)),
        shift_x=float(rng.uniform(*cfg.shift_range)),
        shift_y=float(rng.uniform(*cfg.shift_range)),
        zoom=float(rng.uniform(*cfg.zoom_range)),
        flip_h=cfg.flip_horizontal and bool(rng.random() < 0.5),
        flip_v=cfg.flip_vertical and bool(rng.random() < 0.5),
    )


def draw_plan(cfg: AugmentationConfig, rng: np.random.Generator) -> AugmentationPlan:
    """Sample all pipeline decisions for one sample, in the fixed order."""
    elastic_seed = None
    if rng.random() < cfg.elastic_probability:
        elastic_seed = int(rng.integers(_FIELD_SEED_MAX))

    affine = _draw_affine(cfg, rng) if rng.random() < cfg.probabilities["affine"] else None

    noise_sigma = noise_seed = None
    if rng.random() < cfg.probabilities["noise"]:
        noise_sigma = float(rng.uniform(*cfg.noise_sigma_range))
        noise_seed = int(rng.integers(_FIELD_SEED_MAX))

    blur_sigma = (
        float(rng.uniform(*cfg.blur_sigma_range))
        if rng.random() < cfg.probabilities["blur"]
        else None
    )
    brightness = (
        float(rng.uniform(*cfg.brightness_range))
        if rng.random() < cfg.probabilities["brightness"]
        else None
    )
    colour = (
        float(rng.uniform(*cfg.colour_range))
        if rng.random() < cfg.probabilities["colour"]
        else None
    )
    contrast = (
        float(rng.uniform(*cfg.contrast_range))
        if rng.random() < cfg.probabilities["contrast"]
        else None
    )

    stain = None
    if rng.random() < cfg.probabilities["stain_variation"]:
        n = cfg.stain_matrix.n_stains
        alphas = tuple(float(a) for a in rng.uniform(*cfg.stain_alpha_range, size=n))
        betas = tuple(float(b) for b in rng.uniform(*cfg.stain_beta_range, size=n))
        stain = StainVariationDraw(alphas, betas)

    if cfg.strategy == "channel_swap":
        strategy = StrategyDraw("channel_swap", permutation=ChannelPermutation.random(rng))
    elif cfg.strategy == "colour_transfer":
        pool_index = int(rng.integers(len(cfg.target_pools)))
        profile_index = None
        if pool_index != cfg.source_pool_index:
            profile_index = int(rng.integers(len(cfg.target_pools[pool_index])))
        strategy = StrategyDraw("colour_transfer", pool_index=pool_index, profile_index=profile_index)
    else:
        strategy = StrategyDraw(cfg.strategy)

    return AugmentationPlan(
        elastic_seed=elastic_seed,
        affine=affine,
        noise_sigma=noise_sigma,
        noise_seed=noise_seed,
        blur_sigma=blur_sigma,
        brightness=brightness,
        colour=colour,
        contrast=contrast,
        stain=stain,
        strategy=strategy,
    )


def apply_affine(sample: Sample, draw: AffineDraw) -> Sample:
    """Rotate, zoom and flip about the patch centre, then shift."""
    h, w = sample.mask.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    ux = xx - cx - draw.shift_x
    uy = yy - cy - draw.shift_y
    if draw.flip_h:
        ux = -ux
    if draw.flip_v:
        uy = -uy
    ux /= draw.zoom
    uy /= draw.zoom
    theta = np.deg2rad(draw.angle_deg)
    cos, sin = np.cos(theta), np.sin(theta)
    sx = cos * ux + sin * uy + cx
    sy = -sin * ux + cos * uy + cy
    return _resample_sample(sample, sy, sx)


def affine_augment(sample: Sample, cfg: AugmentationConfig, rng: np.random.Generator) -> Sample:
    """Draw one random affine map from the config ranges and apply it."""
    return apply_affine(sample, _draw_affine(cfg, rng))


def elastic_deform(sample: Sample, params: ElasticParams, rng: np.random.Generator) -> Sample:
    """Smooth random displacement field with peak magnitude ``alpha``.

    Two uniform fields are blurred with a Gaussian of std ``sigma`` and
    rescaled so their largest absolute displacement equals ``alpha``.
    """
    h, w = sample.mask.shape
    dx = rng.uniform(-1.0, 1.0, (h, w))
    dy = rng.uniform(-1.0, 1.0, (h, w))
    if params.alpha == 0:
        return sample
    dx = gaussian_filter(dx, params.sigma, mode="mirror")
    dy = gaussian_filter(dy, params.sigma, mode="mirror")
    for f in (dx, dy):
        peak = np.abs(f).max()
        if peak > 0:
            f *= params.alpha / peak
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    return _resample_sample(sample, yy + dy, xx + dx)


def _clip_u8(values: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(values), 0, 255).astype(np.uint8)


def pixel_augment(image, kind: str, magnitude: float, rng: np.random.Generator | None = None):
    """One photometric step: noise, blur, brightness, colour or contrast.

    Brightness scales toward black, colour blends with the greyscale
    image, contrast blends with the image's mean grey; magnitude 1 (or
    noise/blur sigma 0) is the identity.
    """
    arr = np.asarray(image)
    if arr.dtype != np.uint8:
        raise ConfigError("pixel_augment expects a uint8 image")
    values = arr.astype(np.float64)
    if kind == "noise":
        if rng is None:
            raise ConfigError("noise needs a random generator")
        return _clip_u8(values + rng.normal(0.0, magnitude, arr.shape))
    if kind == "blur":
        sigma = (magnitude, magnitude, 0.0)[: values.ndim] if values.ndim == 3 else magnitude
        return _clip_u8(gaussian_filter(values, sigma, mode="mirror"))
    if kind == "brightness":
        return _clip_u8(magnitude * values)
    if kind == "colour":
        if arr.ndim == 3:
            grey = luma(arr)[..., None]
        else:
            grey = values
        return _clip_u8(grey + magnitude * (values - grey))
    if kind == "contrast":
        mean_grey = luma(arr).mean() if arr.ndim == 3 else values.mean()
        return _clip_u8(mean_grey + magnitude * (values - mean_grey))
    raise ConfigError(f"unknown pixel augmentation {kind!r}; one of {PIXEL_KINDS}")


def apply_stain_variation(image, m: StainMatrix, alphas, betas) -> np.ndarray:
    """Perturb each stain concentration: ``c' = (1 + alpha) * c + beta``."""
    alphas = np.asarray(alphas, dtype=np.float64)
    betas = np.asarray(betas, dtype=np.float64)
    if alphas.shape != (m.n_stains,) or betas.shape != (m.n_stains,):
        raise DimensionError("one alpha and beta per stain required")
    c = deconvolve(rgb_to_od(image), m)
    c = np.maximum((1.0 + alphas) * c + betas, 0.0)
    return reconstruct(c, m)


def stain_variation(image, m: StainMatrix, alpha_range, beta_range, rng: np.random.Generator):
    """Draw per-stain perturbations from the given ranges and apply them."""
    alpha_range = _check_range("alpha_range", alpha_range)
    beta_range = _check_range("beta_range", beta_range)
    alphas = rng.uniform(*alpha_range, size=m.n_stains)
    betas = rng.uniform(*beta_range, size=m.n_stains)
    return apply_stain_variation(image, m, alphas, betas)


def _source_profile_for(cfg: AugmentationConfig, image) -> StainProfile:
    if cfg.source_profile is not None:
        return cfg.source_profile
    return estimate_stain_profile(image)


def apply_plan(sample: Sample, cfg: AugmentationConfig, plan: AugmentationPlan) -> Sample:
    """Deterministically apply a drawn plan to one sample."""
    if plan.elastic_seed is not None:
        sample = elastic_deform(sample, cfg.elastic, derive_rng(plan.elastic_seed))
    if plan.affine is not None:
        sample = apply_affine(sample, plan.affine)

    image = sample.image
    if plan.noise_sigma is not None:
        image = pixel_augment(image, "noise", plan.noise_sigma, derive_rng(plan.noise_seed))
    if plan.blur_sigma is not None:
        image = pixel_augment(image, "blur", plan.blur_sigma)
    if plan.brightness is not None:
        image = pixel_augment(image, "brightness", plan.brightness)
    if plan.colour is not None:
        image = pixel_augment(image, "colour", plan.colour)
    if plan.contrast is not None:
        image = pixel_augment(image, "contrast", plan.contrast)
    if plan.stain is not None:
        image = apply_stain_variation(image, cfg.stain_matrix, plan.stain.alphas, plan.stain.betas)

    strategy = plan.strategy
    if strategy.kind == "greyscale":
        image = to_greyscale(image)
    elif strategy.kind == "haematoxylin":
        image = extract_haematoxylin(image, cfg.stain_matrix)
    elif strategy.kind == "channel_swap":
        image = channel_swap(image, strategy.permutation)
    elif strategy.kind == "colour_transfer" and strategy.profile_index is not None:
        target = cfg.target_pools[strategy.pool_index][strategy.profile_index]
        image = colour_transfer(image, _source_profile_for(cfg, image), target)

    return Sample(image, sample.mask, sample.label)


def augment_sample(sample: Sample, cfg: AugmentationConfig, rng: np.random.Generator) -> Sample:
    """Run the full pipeline on one sample with the given substream."""
    return apply_plan(sample, cfg, draw_plan(cfg, rng))


def augment_batch(
    samples: Sequence[Sample],
    cfg: AugmentationConfig,
    seed: int,
    start_index: int = 0,
) -> list[Sample]:
    """Augment a batch; element i uses substream (seed, start_index + i)."""
    return [
        augment_sample(s, cfg, derive_rng(seed, start_index + i))
        for i, s in enumerate(samples)
    ]


def standardize(image, mean, std) -> np.ndarray:
    """Map 8-bit intensities to ``(v / 255 - mean) / std`` per channel."""
    mean = np.asarray(mean, dtype=np.float64)
    std = np.asarray(std, dtype=np.float64)
    if np.any(std <= 0) or not np.all(np.isfinite(std)):
        raise ConfigError("std must be positive per channel")
    arr = np.asarray(image).astype(np.float64)
    try:
        return (arr / 255.0 - mean) / std
    except ValueError as exc:
        raise DimensionError(f"mean/std do not broadcast over shape {arr.shape}") from exc
