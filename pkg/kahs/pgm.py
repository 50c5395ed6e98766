"""Binary greyscale PGM (P5, maxval 255) through Pillow."""

from __future__ import annotations

import os
import re
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from kahs.utils import StrPath

MAXVAL = 255
HEADER_PEEK = 4096

_SEPARATOR = re.compile(rb"(?:\s|#[^\r\n]*)*")
_TOKEN = re.compile(rb"[^\s#]+")


class PGMError(OSError):
    """Unreadable or corrupt PGM file; `offset` is the byte where decoding failed."""

    def __init__(self, path: StrPath, offset: int, reason: str):
        super().__init__(f"{path}: {reason} at byte {offset}")
        self.path = Path(path)
        self.offset = offset
        self.reason = reason


def _header_tokens(path: Path, head: bytes) -> list[tuple[int, bytes]]:
    """Width, height and maxval tokens with their byte offsets."""
    tokens = []
    pos = 2
    for name in ("width", "height", "maxval"):
        pos = _SEPARATOR.match(head, pos).end()
        match = _TOKEN.match(head, pos)
        if match is None:
            raise PGMError(path, pos, f"missing {name}")
        tokens.append((match.start(), match.group()))
        pos = match.end()
    return tokens


def read_pgm(path: StrPath) -> np.ndarray:
    """Read a P5 image with maxval 255 as a ``(height, width)`` uint8 array."""
    path = Path(path)
    size = os.path.getsize(path)
    with open(path, "rb") as f:
        head = f.read(HEADER_PEEK)
    magic = head[:2]
    if magic != b"P5":
        raise PGMError(path, 0, f"expected magic P5, found {magic!r}")
    maxval_offset, maxval = _header_tokens(path, head)[2]
    if maxval != str(MAXVAL).encode():
        raise PGMError(path, maxval_offset, f"unsupported maxval {maxval.decode(errors='replace')}")

    try:
        img = Image.open(path)
    except (UnidentifiedImageError, ValueError, SyntaxError) as e:
        raise PGMError(path, 2, f"invalid header ({e})") from e

    with img:
        if img.mode != "L":
            raise PGMError(path, maxval_offset, f"unsupported pixel mode {img.mode}")
        offset = img.tile[0][2] if img.tile else size
        width, height = img.size
        if size - offset < width * height:
            raise PGMError(path, size, f"truncated raster, expected {width * height} bytes")
        try:
            img.load()
        except OSError as e:
            raise PGMError(path, offset, f"corrupt raster ({e})") from e
        return np.asarray(img, dtype=np.uint8).copy()


def write_pgm(path: StrPath, image: np.ndarray) -> Path:
    """Write a 2D uint8 array as P5; values outside [0, 255] are rejected."""
    image = np.asarray(image)
    if image.ndim != 2:
        raise ValueError(f"Expected a 2D image, got shape {image.shape}")
    if image.dtype != np.uint8:
        if image.size and (image.min() < 0 or image.max() > 255):
            raise ValueError("Pixel values must lie in [0, 255]")
        image = np.rint(image).astype(np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.ascontiguousarray(image)).save(path, format="PPM")
    return path


def to_pixels(image: np.ndarray) -> np.ndarray:
    """Clip and round a real-valued image to uint8."""
    return np.rint(np.clip(image, 0, 255)).astype(np.uint8)
