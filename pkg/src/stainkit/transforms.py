"""The four stain-strategy transforms: greyscale, haematoxylin channel,
channel swap and colour transfer.

All transforms are deterministic; randomness (which permutation, which
target staining) is drawn by the augmentation pipeline and passed in.
Rounding is half-to-even throughout.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import ChannelCountError, ConfigError, DimensionError
from .stain_estimation import StainProfile
from .stain_math import DEFAULT_I0, StainMatrix, deconvolve, reconstruct, rgb_to_od

__all__ = [
    "GREY_WEIGHTS",
    "ChannelPermutation",
    "luma",
    "to_greyscale",
    "concentration_to_intensity",
    "extract_haematoxylin",
    "channel_swap",
    "colour_transfer",
]

GREY_WEIGHTS = (0.2125, 0.7154, 0.0721)

_ALL_PERMUTATIONS = tuple(itertools.permutations((0, 1, 2)))


def luma(image) -> np.ndarray:
    """Unquantised greyscale values, ``0.2125 R + 0.7154 G + 0.0721 B``."""
    arr = np.asarray(image)
    if arr.ndim < 1 or arr.shape[-1] != 3:
        raise ChannelCountError(f"expected 3 channels on the last axis, got shape {arr.shape}")
    return arr.astype(np.float64) @ np.asarray(GREY_WEIGHTS)


def to_greyscale(image) -> np.ndarray:
    """Collapse RGB to a single luminance channel (round half to even)."""
    return np.clip(np.rint(luma(image)), 0, 255).astype(np.uint8)


def concentration_to_intensity(c) -> np.ndarray:
    """Map stain concentration to 8-bit transmission, ``round(255 * 10**-c)``.

    Zero concentration maps to white, matching stained-slide polarity.
    """
    arr = np.asarray(c, dtype=np.float64)
    v = np.rint(255.0 * np.power(10.0, -arr))
    return np.clip(v, 0, 255).astype(np.uint8)


def extract_haematoxylin(
    image, m: StainMatrix, i0: int = DEFAULT_I0
) -> np.ndarray:
    """Single-channel haematoxylin image by colour deconvolution.

    The first stain of ``m`` is taken to be haematoxylin; its
    concentration plane is mapped back through the transmission curve so
    unstained pixels come out white.
    """
    c = deconvolve(rgb_to_od(image, i0), m)
    return concentration_to_intensity(c[..., 0])


@dataclass(frozen=True)
class ChannelPermutation:
    """A bijection on the three colour channels."""

    mapping: tuple[int, int, int]

    def __post_init__(self):
        mapping = tuple(int(i) for i in self.mapping)
        if sorted(mapping) != [0, 1, 2]:
            raise ConfigError(f"{mapping} is not a permutation of (0, 1, 2)")
        object.__setattr__(self, "mapping", mapping)

    def inverse(self) -> "ChannelPermutation":
        inv = [0, 0, 0]
        for i, p in enumerate(self.mapping):
            inv[p] = i
        return ChannelPermutation(tuple(inv))

    @classmethod
    def all(cls) -> tuple["ChannelPermutation", ...]:
        return tuple(cls(p) for p in _ALL_PERMUTATIONS)

    @classmethod
    def random(cls, rng: np.random.Generator) -> "ChannelPermutation":
        """Uniform over all six permutations (the identity included)."""
        return cls(_ALL_PERMUTATIONS[int(rng.integers(len(_ALL_PERMUTATIONS)))])


def channel_swap(image, perm: ChannelPermutation) -> np.ndarray:
    """Reorder colour channels: output channel i is input channel perm[i]."""
    arr = np.asarray(image)
    if arr.ndim < 1 or arr.shape[-1] != 3:
        raise ChannelCountError(f"expected 3 channels on the last axis, got shape {arr.shape}")
    return arr[..., list(perm.mapping)]


def colour_transfer(
    source,
    source_profile: StainProfile,
    target_profile: StainProfile,
    i0: int = DEFAULT_I0,
) -> np.ndarray:
    """Re-express the source image's concentrations in the target staining.

    Concentrations are deconvolved with the source matrix, rescaled per
    stain by the ratio of the profiles' robust maxima, and reconstructed
    with the target matrix. Stains flagged absent in the source keep the
    neutral scale 1.
    """
    for name, profile in (("source", source_profile), ("target", target_profile)):
        if profile.matrix.n_stains != 2:
            raise DimensionError(f"{name} profile must have exactly 2 stains")
    c = deconvolve(rgb_to_od(source, i0), source_profile.matrix)
    factors = np.where(
        source_profile.absent,
        1.0,
        target_profile.robust_max / source_profile.robust_max,
    )
    return reconstruct(c * factors, target_profile.matrix, i0)
