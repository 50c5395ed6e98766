from __future__ import annotations

import hashlib
import logging
from pathlib import Path
from typing import TYPE_CHECKING, Union

import numpy as np

if TYPE_CHECKING:
    import pandas as pd

StrPath = Union[str, Path]

FLOAT_FORMAT = "%.17g"
"""Round-trip safe float format for every CSV the package writes."""


def setup_logging(level: int = logging.INFO) -> None:
    """Route log records through rich on stderr."""
    from rich.console import Console
    from rich.logging import RichHandler

    handler = RichHandler(
        console=Console(stderr=True),
        show_path=False,
        rich_tracebacks=True,
        log_time_format="[%X]",
    )
    logging.basicConfig(
        level=level, format="%(message)s", handlers=[handler], force=True
    )


def derive_seed(master_seed: int, *path: int) -> int:
    """Derive an independent 64-bit seed for the work item at `path`.

    Trial ``i`` of a run seeded with ``master_seed`` uses
    ``derive_seed(master_seed, i)``; nested grids append further indices. The
    derivation hashes the whole tuple, so seeds do not depend on execution
    order.
    """
    sequence = np.random.SeedSequence([int(master_seed), *(int(p) for p in path)])
    return int(sequence.generate_state(1, dtype=np.uint64)[0])


def is_power_of_two(value: int) -> bool:
    return value >= 1 and (value & (value - 1)) == 0


def sha256sum(path: StrPath) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_csv(frame: pd.DataFrame, path: StrPath) -> Path:
    """Write a table with header row, `.` decimals and LF line endings."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path
