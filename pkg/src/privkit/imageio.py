"""PNG image I/O. 8-bit RGB on disk, float64 in [0, 1] in memory."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ContractViolation
from .types import check_pixels


def to_uint8(pixels: np.ndarray) -> np.ndarray:
    arr = np.asarray(pixels, dtype=np.float64)
    return np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)


def from_uint8(raw: np.ndarray) -> np.ndarray:
    return np.asarray(raw, dtype=np.float64) / 255.0


def load_png(path) -> np.ndarray:
    """Read a PNG as an H x W x 3 float64 array with values in [0, 1]."""
    with Image.open(path) as img:
        rgb = img.convert("RGB")
        return check_pixels(from_uint8(np.asarray(rgb)))


def save_png(path, pixels: np.ndarray) -> Path:
    """Write an H x W x 3 array in [0, 1] as an 8-bit RGB PNG."""
    arr = np.asarray(pixels, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ContractViolation(f"PNG output requires H x W x 3 pixels, got shape {arr.shape}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(arr), mode="RGB").save(path, format="PNG")
    return path
