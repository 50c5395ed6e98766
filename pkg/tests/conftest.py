import os
from pathlib import Path

import numpy as np
import pytest

from kahs.pgm import read_pgm, write_pgm


@pytest.fixture
def smooth_image() -> np.ndarray:
    """A 64x64 8-bit image without edges."""
    u, v = np.meshgrid(np.arange(64) / 64, np.arange(64) / 64, indexing="ij")
    image = 128 + 70 * np.sin(2 * np.pi * 1.3 * u + 0.4) * np.cos(2 * np.pi * 0.7 * v) + 25 * u
    return np.rint(np.clip(image, 0, 255)).astype(np.uint8)


@pytest.fixture
def sparse_image() -> np.ndarray:
    """A 32x32 image with exactly eight nonzero pixels."""
    image = np.zeros((32, 32), dtype=np.uint8)
    rng = np.random.default_rng(3)
    flat = rng.choice(image.size, size=8, replace=False)
    image.flat[flat] = np.arange(200, 208)
    return image


@pytest.fixture
def pgm_file(tmp_path, smooth_image) -> Path:
    return write_pgm(tmp_path / "smooth.pgm", smooth_image[:32, :32])


@pytest.fixture
def cameraman() -> np.ndarray:
    directory = os.environ.get("KAHS_TEST_IMAGES")
    if not directory or not (Path(directory) / "cameraman.pgm").exists():
        pytest.skip("KAHS_TEST_IMAGES does not provide cameraman.pgm")
    return read_pgm(Path(directory) / "cameraman.pgm")
