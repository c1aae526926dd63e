"""8-bit PNG/TIFF image loading and saving.

Arrays are ``uint8``, shaped ``(H, W)`` for single-channel images and
``(H, W, 3)`` for RGB. Anything else (16-bit, float TIFFs, exotic
modes) is rejected rather than silently converted.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .errors import ConfigError

IMAGE_EXTENSIONS = (".png", ".tif", ".tiff")


def load_image(path) -> np.ndarray:
    """Load an 8-bit greyscale or RGB image."""
    with PILImage.open(path) as img:
        if img.mode in ("P", "RGBA"):
            img = img.convert("RGB")
        elif img.mode == "LA":
            img = img.convert("L")
        if img.mode not in ("L", "RGB"):
            raise ConfigError(
                f"unsupported image mode {img.mode!r} in {path}; 8-bit greyscale or RGB required"
            )
        return np.asarray(img, dtype=np.uint8)


def save_image(path, array: np.ndarray) -> None:
    """Write a ``uint8`` array as PNG or TIFF, chosen by file extension."""
    arr = np.asarray(array)
    if arr.dtype != np.uint8:
        raise ConfigError(f"images must be uint8, got {arr.dtype}")
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    if arr.ndim not in (2, 3) or (arr.ndim == 3 and arr.shape[2] != 3):
        raise ConfigError(f"cannot save image of shape {arr.shape}")
    path = Path(path)
    if path.suffix.lower() not in IMAGE_EXTENSIONS:
        raise ConfigError(f"unsupported image extension {path.suffix!r}; use PNG or TIFF")
    path.parent.mkdir(parents=True, exist_ok=True)
    PILImage.fromarray(arr).save(path)


def list_images(directory) -> list[Path]:
    """Image files directly under ``directory``, in lexicographic order."""
    directory = Path(directory)
    if not directory.is_dir():
        raise ConfigError(f"not a directory: {directory}")
    return sorted(
        p for p in directory.iterdir() if p.suffix.lower() in IMAGE_EXTENSIONS and p.is_file()
    )
