"""
File I/O for Lmser runs: directories, CSV/JSON/YAML artifacts and PGM image grids
"""
import logging
import re
from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Union

import numpy as np
import pandas as pd
import yaml

from ..core.errors import DimensionError, FormatError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

_PGM_HEADER = re.compile(rb"P5\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s")


def initialize_directories(out_dir: PathLike) -> Path:
    """Create the run directory and its checkpoint folder"""
    out_dir = Path(out_dir)
    (out_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
    logger.info(f"📁 Output directory ready: {out_dir}")
    return out_dir


def save_csv(df: pd.DataFrame, filename: PathLike, description: str = "data"):
    """Save DataFrame to CSV with logging"""
    df.to_csv(filename, index=False)
    logger.info(f"💾 {description} saved to {filename}")


def append_csv_row(filename: PathLike, row: Dict[str, Any], columns: Sequence[str]):
    """Append one row, writing the header only when the file is new"""
    filename = Path(filename)
    new_file = not filename.exists()
    pd.DataFrame([row], columns=list(columns)).to_csv(filename, mode="a", header=new_file, index=False)


def save_yaml(data: dict, filename: PathLike, description: str = "data"):
    """Save dictionary to YAML with logging"""
    with open(filename, 'w') as f:
        yaml.safe_dump(data, f, sort_keys=False)
    logger.info(f"💾 {description} saved to {filename}")


def load_yaml(filename: PathLike) -> dict:
    with open(filename) as f:
        data = yaml.safe_load(f)
    return data or {}


def to_uint8(image: np.ndarray) -> np.ndarray:
    """Pixel = round(255 * value), values clipped to [0, 1]"""
    image = np.asarray(image)
    if image.dtype == np.uint8:
        return image
    return np.floor(np.clip(image.astype(np.float64), 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def write_pgm(filename: PathLike, image: np.ndarray, description: Optional[str] = None) -> Path:
    """Write a 2-D grayscale image as binary PGM (P5, maxval 255)"""
    pixels = to_uint8(image)
    if pixels.ndim != 2:
        raise DimensionError("PGM image must be 2-D", pixels.shape)
    height, width = pixels.shape
    filename = Path(filename)
    with open(filename, "wb") as f:
        f.write(f"P5\n{width} {height}\n255\n".encode("ascii"))
        f.write(np.ascontiguousarray(pixels).tobytes())
    if description:
        logger.info(f"🖼️ {description} saved to {filename}")
    return filename


def read_pgm(filename: PathLike) -> np.ndarray:
    """Read a binary PGM written by any conforming encoder (8-bit only)"""
    raw = Path(filename).read_bytes()
    match = _PGM_HEADER.match(raw)
    if match is None:
        raise FormatError(f"{filename}: not a binary PGM (P5) file")
    width, height, maxval = (int(g) for g in match.groups())
    if not 0 < maxval < 256:
        raise FormatError(f"{filename}: only 8-bit PGM is supported, maxval {maxval}")
    body = raw[match.end():]
    if len(body) != width * height:
        raise FormatError(f"{filename}: expected {width * height} pixel bytes, found {len(body)}")
    return np.frombuffer(body, dtype=np.uint8).reshape(height, width).copy()


def image_grid(rows: Sequence[Sequence[np.ndarray]], gap: int = 2, background: float = 1.0) -> np.ndarray:
    """Tile rows of equally sized images into one uint8 image

    The result is (r*h + (r-1)*gap) x (n*w + (n-1)*gap) for r rows of n images.
    """
    rows = [[np.asarray(img, dtype=np.float64).reshape(np.shape(img)[-2:]) for img in row] for row in rows]
    if not rows or not rows[0]:
        raise DimensionError("image grid needs at least one image")
    h, w = rows[0][0].shape
    n_cols = max(len(row) for row in rows)
    height = len(rows) * h + (len(rows) - 1) * gap
    width = n_cols * w + (n_cols - 1) * gap
    canvas = np.full((height, width), background, dtype=np.float64)
    for r, row in enumerate(rows):
        for c, img in enumerate(row):
            if img.shape != (h, w):
                raise DimensionError("grid images differ in size", img.shape, (h, w))
            top, left = r * (h + gap), c * (w + gap)
            canvas[top:top + h, left:left + w] = img
    return to_uint8(canvas)
