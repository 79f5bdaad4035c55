"""8-bit grayscale PNG/PGM reading and writing."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


def read_image(path) -> np.ndarray:
    """Load a grayscale image as float64 in [0, 1] (1 = white)."""
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.float64) / 255.0


def write_image(path, pixels: np.ndarray) -> None:
    """Write pixels in [0, 1] as 8-bit grayscale; the suffix picks PNG or PGM."""
    path = Path(path)
    data = np.clip(np.rint(np.asarray(pixels) * 255.0), 0, 255).astype(np.uint8)
    fmt = "PPM" if path.suffix.lower() == ".pgm" else "PNG"
    Image.fromarray(data).save(path, format=fmt)
