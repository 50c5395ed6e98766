"""Adaptive hierarchical sensing (K-AHS).

The sensing tree is a perfect binary tree over the (padded) coefficient
domain. Node ``(l, n)`` sits on level ``l`` (0 = leaves) at 1-based position
``n`` and covers coefficients ``(n-1)*2**l + 1 .. n*2**l``; its measurement is
the sum of those coefficients, obtained from the signal through a
`MeasurementOracle`.

Public node identifiers (`NodeId`, RunLog CSV, `SparseEstimate.entries`) are
1-based. Array-valued internals (``positions``) are 0-based.
"""

from __future__ import annotations

import logging
import math
import threading
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from kahs.transforms import AnyPair, DimensionError, PermutedTransform
from kahs.utils import StrPath, is_power_of_two, write_csv

logger = logging.getLogger(__name__)

__all__ = [
    "SensingError",
    "InvalidSparsityError",
    "InfeasibleBudgetError",
    "NodeId",
    "SensingConfig",
    "MeasurementOracle",
    "RangeSumOracle",
    "InnerProductOracle",
    "SparseEstimate",
    "LevelRecord",
    "RunLog",
    "initial_level",
    "coefficient_range",
    "range_sum_oracle",
    "inner_product_oracle",
    "select_top_k",
    "top_k_positions",
    "k_ahs_sense",
    "measurement_count",
    "measurement_bound",
    "k_for_budget",
    "pad_dimension",
    "pad",
    "truncate",
    "reconstruct",
    "audit_run",
]


class SensingError(ValueError):
    """Base class for sensing failures."""


class InvalidSparsityError(SensingError):
    """Raised when K is outside ``1 <= K < Ñ/4``."""


class InfeasibleBudgetError(SensingError):
    """Raised when no admissible K fits a measurement budget."""


# -----------------------------------------------------------------------------
# Tree arithmetic
# -----------------------------------------------------------------------------
@dataclass(frozen=True, order=True)
class NodeId:
    level: int
    index: int

    @property
    def size(self) -> int:
        """Number of coefficients summed by this node."""
        return 1 << self.level

    def coefficient_range(self) -> Tuple[int, int]:
        return coefficient_range(self)

    def children(self) -> Tuple[NodeId, NodeId]:
        if self.level == 0:
            raise SensingError(f"Leaf {self} has no children")
        return NodeId(self.level - 1, 2 * self.index - 1), NodeId(self.level - 1, 2 * self.index)


def coefficient_range(node: NodeId) -> Tuple[int, int]:
    """Inclusive 1-based coefficient range covered by `node`."""
    size = 1 << node.level
    return (node.index - 1) * size + 1, node.index * size


def pad_dimension(n: int) -> int:
    """Smallest power of two that is at least `n`."""
    if n < 1:
        raise DimensionError(f"Dimension must be positive, got {n}")
    return 1 << (n - 1).bit_length()


def pad(coeffs: np.ndarray, padded: Optional[int] = None) -> np.ndarray:
    """Append zero coefficients up to `padded` (default: next power of two)."""
    coeffs = np.asarray(coeffs, dtype=float)
    padded = padded or pad_dimension(coeffs.size)
    if padded < coeffs.size:
        raise DimensionError(f"Cannot pad {coeffs.size} coefficients to {padded}")
    out = np.zeros(padded)
    out[: coeffs.size] = coeffs
    return out


def truncate(coeffs: np.ndarray, n: int) -> np.ndarray:
    return np.asarray(coeffs)[..., :n]


def initial_level(padded: int, k: int) -> int:
    """Starting level ``L = log2(Ñ) - floor(log2 K) - 2``."""
    if not is_power_of_two(padded):
        raise DimensionError(f"Padded dimension must be a power of two, got {padded}")
    if not 1 <= k < padded / 4:
        raise InvalidSparsityError(f"K must satisfy 1 <= K < {padded}/4, got K={k}")
    return (padded.bit_length() - 1) - (k.bit_length() - 1) - 2


@dataclass(frozen=True)
class SensingConfig:
    n: int
    padded: int
    k: int
    level: int

    def __post_init__(self) -> None:
        if self.padded != pad_dimension(self.n):
            raise DimensionError(
                f"Padded dimension {self.padded} does not match N={self.n}"
            )
        if self.level != initial_level(self.padded, self.k):
            raise SensingError(f"Initial level {self.level} is inconsistent with K={self.k}")

    @classmethod
    def from_dimension(cls, n: int, k: int) -> SensingConfig:
        padded = pad_dimension(n)
        return cls(n, padded, k, initial_level(padded, k))

    @property
    def measurements(self) -> int:
        return measurement_count(self.padded, self.k)


def measurement_bound(padded: int, k: int) -> float:
    """The bound ``2K log2(Ñ/K)`` on the number of measurements."""
    return 2 * k * math.log2(padded / k)


def measurement_count(padded: int, k: int) -> int:
    """Exact number of measurements ``Ñ 2^-L + 2KL`` of a K-AHS run."""
    level = initial_level(padded, k)
    count = (padded >> level) + 2 * k * level
    bound = measurement_bound(padded, k)
    if count > bound * (1 + 1e-12):
        raise SensingError(f"M={count} exceeds 2K log2(N/K)={bound} for N={padded}, K={k}")
    return count


def k_for_budget(padded: int, n: int, m_target: int) -> int:
    """Largest K whose measurement count does not exceed `m_target`.

    ``M(K)`` is strictly increasing on ``1 <= K < Ñ/4``; the scan covers the
    whole range and keeps the last admissible value.
    """
    if n > padded:
        raise DimensionError(f"N={n} exceeds padded dimension {padded}")
    candidates = np.arange(1, (padded + 3) // 4)
    if candidates.size == 0:
        raise InfeasibleBudgetError(f"No admissible K for padded dimension {padded}")
    levels = (padded.bit_length() - 1) - np.floor(np.log2(candidates)).astype(int) - 2
    counts = (padded >> levels) + 2 * candidates * levels
    feasible = candidates[counts <= m_target]
    if feasible.size == 0:
        raise InfeasibleBudgetError(
            f"Budget M={m_target} is below the smallest run (M={int(counts[0])}) "
            f"for N={padded}"
        )
    return int(feasible[-1])


# -----------------------------------------------------------------------------
# Oracles
# -----------------------------------------------------------------------------
class MeasurementOracle(ABC):
    """The only channel through which sensing touches the signal.

    Subclasses implement `_measure_many`. Every measured node counts as one
    query; the counter is safe under concurrent calls.
    """

    def __init__(self, padded: int):
        if not is_power_of_two(padded):
            raise DimensionError(f"Padded dimension must be a power of two, got {padded}")
        self.padded = padded
        self.depth = padded.bit_length() - 1
        self._queries = 0
        self._lock = threading.Lock()

    @property
    def queries(self) -> int:
        return self._queries

    def measure(self, node: NodeId) -> float:
        self._check_level(node.level)
        if not 1 <= node.index <= self.padded >> node.level:
            raise SensingError(f"{node} is outside the sensing tree of size {self.padded}")
        return float(self.measure_many(node.level, np.array([node.index - 1]))[0])

    def measure_many(self, level: int, positions: np.ndarray) -> np.ndarray:
        """Measure the nodes of `level` at 0-based `positions`."""
        self._check_level(level)
        positions = np.asarray(positions, dtype=np.intp)
        with self._lock:
            self._queries += positions.size
        return self._measure_many(level, positions)

    def _check_level(self, level: int) -> None:
        if not 0 <= level <= self.depth:
            raise SensingError(f"Level {level} outside [0, {self.depth}]")

    @abstractmethod
    def _measure_many(self, level: int, positions: np.ndarray) -> np.ndarray: ...


class RangeSumOracle(MeasurementOracle):
    """Sums coefficient ranges directly from a precomputed sum tree."""

    def __init__(self, coeffs: np.ndarray):
        coeffs = np.asarray(coeffs, dtype=float)
        super().__init__(coeffs.size)
        tree = [coeffs]
        for _ in range(self.depth):
            below = tree[-1]
            tree.append(below[0::2] + below[1::2])
        self._tree = tree

    def _measure_many(self, level: int, positions: np.ndarray) -> np.ndarray:
        return self._tree[level][positions]


class InnerProductOracle(MeasurementOracle):
    """Materializes each sensing vector and takes its inner product with `x`."""

    batch_size = 32

    def __init__(self, x: np.ndarray, pair: AnyPair):
        x = np.asarray(x, dtype=float).ravel()
        if x.size != pair.dimension:
            raise DimensionError(
                f"Signal has {x.size} entries, transform expects {pair.dimension}"
            )
        super().__init__(pad_dimension(pair.dimension))
        self.x = x
        self.pair = pair

    def sensing_vectors(self, level: int, positions: np.ndarray) -> np.ndarray:
        """Sensing vectors of the given nodes, one row each."""
        size = 1 << level
        n = self.pair.dimension
        indicators = np.zeros((len(positions), n))
        for row, position in enumerate(positions):
            start = int(position) * size
            indicators[row, start : min(start + size, n)] = 1.0
        return self.pair.adjoint(indicators)

    def _measure_many(self, level: int, positions: np.ndarray) -> np.ndarray:
        out = np.empty(len(positions))
        for start in range(0, len(positions), self.batch_size):
            chunk = positions[start : start + self.batch_size]
            out[start : start + len(chunk)] = self.sensing_vectors(level, chunk) @ self.x
        return out


def range_sum_oracle(coeffs: np.ndarray) -> RangeSumOracle:
    """Fast oracle over an already padded coefficient vector."""
    return RangeSumOracle(coeffs)


def inner_product_oracle(x: np.ndarray, pair: AnyPair) -> InnerProductOracle:
    return InnerProductOracle(x, pair)


# -----------------------------------------------------------------------------
# Results
# -----------------------------------------------------------------------------
@dataclass
class SparseEstimate:
    """At most 2K observed leaves of the (possibly permuted) coefficient domain."""

    n: int
    positions: np.ndarray
    values: np.ndarray
    perm: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        if self.positions.size and (self.positions.min() < 0 or self.positions.max() >= self.n):
            raise SensingError(f"Estimate positions must lie in [0, {self.n})")

    def __len__(self) -> int:
        return int(self.positions.size)

    def entries(self) -> list[tuple[int, float]]:
        return [(int(p) + 1, float(v)) for p, v in zip(self.positions, self.values)]

    def to_dense(self) -> np.ndarray:
        dense = np.zeros(self.n)
        dense[self.positions] = self.values
        return dense

    def coefficient_indices(self) -> np.ndarray:
        """0-based basis indices of the observed leaves (undoes the permutation)."""
        if self.perm is None:
            return self.positions.copy()
        return self.perm[self.positions]


@dataclass(frozen=True)
class LevelRecord:
    level: int
    positions: np.ndarray
    values: np.ndarray
    winners: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.intp))


@dataclass
class RunLog:
    """Every node visited by a run, level by level from L down to 0."""

    levels: list[LevelRecord]

    @property
    def total(self) -> int:
        return sum(record.positions.size for record in self.levels)

    def winners(self, level: int) -> list[NodeId]:
        record = self._record(level)
        return [NodeId(level, int(p) + 1) for p in record.winners]

    def to_frame(self) -> pd.DataFrame:
        frames = []
        for record in self.levels:
            frames.append(
                pd.DataFrame(
                    {
                        "level": record.level,
                        "node_index": record.positions + 1,
                        "value": record.values,
                        "winner": np.isin(record.positions, record.winners).astype(int),
                    }
                )
            )
        return pd.concat(frames, ignore_index=True)

    def write_csv(self, path: StrPath):
        return write_csv(self.to_frame(), path)

    def _record(self, level: int) -> LevelRecord:
        for record in self.levels:
            if record.level == level:
                return record
        raise KeyError(f"Level {level} was not visited")


# -----------------------------------------------------------------------------
# The algorithm
# -----------------------------------------------------------------------------
Selector = Callable[[np.ndarray, np.ndarray, int], np.ndarray]


def top_k_positions(positions: np.ndarray, values: np.ndarray, k: int) -> np.ndarray:
    """Positions of the `k` largest magnitudes, ties to the smaller position.

    The result is sorted ascending.
    """
    if k > positions.size:
        raise SensingError(f"Cannot select {k} of {positions.size} measurements")
    order = np.lexsort((positions, -np.abs(values)))
    return np.sort(positions[order[:k]])


def select_top_k(measurements: Sequence[tuple[NodeId, float]], k: int) -> list[NodeId]:
    """The `k` nodes with the largest ``|value|``, ties broken by (level, index)."""
    if not measurements:
        raise SensingError("No measurements to select from")
    if not 1 <= k <= len(measurements):
        raise SensingError(f"Cannot select {k} of {len(measurements)} measurements")
    ranked = sorted(measurements, key=lambda item: (-abs(item[1]), item[0]))
    return [node for node, _ in ranked[:k]]


def k_ahs_sense(
    oracle: MeasurementOracle,
    cfg: SensingConfig,
    *,
    perm: Optional[np.ndarray] = None,
    selector: Selector = top_k_positions,
) -> tuple[SparseEstimate, RunLog]:
    """Run K-AHS against `oracle`.

    The whole initial level is measured; from level L down to 1 the children of
    the K largest measurements are measured. Observed leaves within the
    original dimension form the estimate.
    """
    if oracle.padded != cfg.padded:
        raise DimensionError(f"Oracle covers {oracle.padded} leaves, config expects {cfg.padded}")
    logger.debug(
        "K-AHS N=%d padded=%d K=%d L=%d M=%d",
        cfg.n, cfg.padded, cfg.k, cfg.level, cfg.measurements,
    )

    positions = np.arange(cfg.padded >> cfg.level)
    values = oracle.measure_many(cfg.level, positions)
    levels: list[LevelRecord] = []
    for level in range(cfg.level, 0, -1):
        winners = selector(positions, values, cfg.k)
        levels.append(LevelRecord(level, positions, values, winners))
        positions = np.stack((2 * winners, 2 * winners + 1), axis=1).ravel()
        values = oracle.measure_many(level - 1, positions)
    levels.append(LevelRecord(0, positions, values))

    inside = positions < cfg.n
    estimate = SparseEstimate(cfg.n, positions[inside], values[inside], perm)
    return estimate, RunLog(levels)


def reconstruct(estimate: SparseEstimate, pair: AnyPair) -> np.ndarray:
    """Signal from the estimate by a single synthesis transform."""
    if estimate.n != pair.dimension:
        raise DimensionError(
            f"Estimate of dimension {estimate.n} does not fit transform of dimension "
            f"{pair.dimension}"
        )
    if isinstance(pair, PermutedTransform) and estimate.perm is not None:
        if not np.array_equal(pair.perm, estimate.perm):
            raise SensingError("Estimate was sensed under a different leaf permutation")
    return pair.synthesize(estimate.to_dense())


def audit_run(log: RunLog, cfg: SensingConfig) -> list[str]:
    """Replay a RunLog and return the violations found (empty if sound)."""
    problems: list[str] = []
    expected_levels = list(range(cfg.level, -1, -1))
    if [record.level for record in log.levels] != expected_levels:
        return [f"visited levels {[r.level for r in log.levels]}, expected {expected_levels}"]

    first = log.levels[0]
    if first.positions.size != cfg.padded >> cfg.level:
        problems.append(f"level {cfg.level} holds {first.positions.size} records")
    for upper, lower in zip(log.levels, log.levels[1:]):
        if upper.winners.size != cfg.k:
            problems.append(f"level {upper.level} has {upper.winners.size} winners")
        replayed = top_k_positions(upper.positions, upper.values, cfg.k)
        if not np.array_equal(replayed, upper.winners):
            problems.append(f"level {upper.level} winners differ from the top-K replay")
        if lower.positions.size != 2 * cfg.k:
            problems.append(f"level {lower.level} holds {lower.positions.size} records")
        if not np.isin(lower.positions // 2, upper.winners).all():
            problems.append(f"level {lower.level} measured a node outside the winners' children")
    if log.total != cfg.measurements:
        problems.append(f"{log.total} records, expected M={cfg.measurements}")
    return problems
