"""Signal models and the collection guarantee for K-AHS.

Three coefficient models are supported: exactly k-sparse (Gaussian values),
exponential decay ``R q^(-n+1)`` and power-law decay ``R n^(-alpha)``, where
``n`` is the magnitude rank. Compressible models draw random signs and a
random placement of the ranked magnitudes.

The second half of the module holds the tools to decide whether a run is
guaranteed to collect the significant coefficients: the smallest subset sum
``u`` of the significant set, tail sums ``r`` and the power-law constants
(zeta, alpha*, partition size bound).
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Any, Iterable, Literal, Mapping, Optional, Union

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

ZETA_TERMS = 10**6
MAX_SUBSET_SIZE = 24


class ModelError(ValueError):
    """Raised on invalid model parameters or infeasible computations."""


class ModelKind(str, Enum):
    KSPARSE = "ksparse"
    EXPONENTIAL = "exponential"
    POWERLAW = "powerlaw"


@dataclass(frozen=True)
class ModelSpec:
    """Parameters of one signal model.

    Only the parameter matching `kind` is used: `k` for ksparse, `q` for
    exponential and `alpha` for powerlaw. `scale` is the magnitude ``R`` of the
    largest coefficient.
    """

    kind: ModelKind
    n: int
    k: Optional[int] = None
    q: Optional[float] = None
    alpha: Optional[float] = None
    scale: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        try:
            object.__setattr__(self, "kind", ModelKind(self.kind))
        except ValueError:
            raise ModelError(f"Unknown model kind {self.kind!r}") from None
        if self.n < 1:
            raise ModelError(f"Dimension must be positive, got N={self.n}")
        if self.scale <= 0:
            raise ModelError(f"Scale must be positive, got R={self.scale}")
        if self.kind is ModelKind.KSPARSE:
            if self.k is None or not 1 <= self.k <= self.n:
                raise ModelError(f"ksparse needs 1 <= k <= N={self.n}, got k={self.k}")
        elif self.kind is ModelKind.EXPONENTIAL:
            if self.q is None or self.q <= 1:
                raise ModelError(f"exponential needs q > 1, got q={self.q}")
        elif self.alpha is None or self.alpha <= 1:
            raise ModelError(f"powerlaw needs alpha > 1, got alpha={self.alpha}")

    def with_seed(self, seed: int) -> ModelSpec:
        return dataclasses.replace(self, seed=int(seed))

    def to_config(self) -> dict[str, Any]:
        return {
            "kind": self.kind.value,
            "N": self.n,
            "k": self.k,
            "q": self.q,
            "alpha": self.alpha,
            "R": self.scale,
            "seed": self.seed,
        }

    @classmethod
    def from_config(cls, config: Mapping[str, Any]) -> ModelSpec:
        return cls(
            kind=config["kind"],
            n=int(config["N"]),
            k=None if config.get("k") is None else int(config["k"]),
            q=None if config.get("q") is None else float(config["q"]),
            alpha=None if config.get("alpha") is None else float(config["alpha"]),
            scale=float(config.get("R", 1.0)),
            seed=int(config.get("seed", 0)),
        )


# -----------------------------------------------------------------------------
# Generators
# -----------------------------------------------------------------------------
def magnitudes(spec: ModelSpec) -> np.ndarray:
    """Ranked magnitudes of the model, largest first.

    For ksparse the nonzero magnitudes are random; the result then holds `scale`
    for the first k ranks and zeros after.
    """
    ranks = np.arange(1, spec.n + 1, dtype=float)
    if spec.kind is ModelKind.EXPONENTIAL:
        return spec.scale * np.power(float(spec.q), -(ranks - 1))
    if spec.kind is ModelKind.POWERLAW:
        return spec.scale * np.power(ranks, -float(spec.alpha))
    out = np.zeros(spec.n)
    out[: spec.k] = spec.scale
    return out


def generate(spec: ModelSpec, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Draw a coefficient vector. Deterministic in ``spec.seed`` unless `rng` is given."""
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    out = np.zeros(spec.n)
    if spec.kind is ModelKind.KSPARSE:
        locations = rng.choice(spec.n, size=spec.k, replace=False)
        out[locations] = spec.scale * rng.standard_normal(spec.k)
        return out
    signs = rng.choice(np.array([-1.0, 1.0]), size=spec.n)
    out[rng.permutation(spec.n)] = magnitudes(spec) * signs
    return out


def rank_order(coeffs: np.ndarray) -> np.ndarray:
    """Indices ``h_1, h_2, ...`` by descending magnitude, ties to the smaller index."""
    coeffs = np.asarray(coeffs, dtype=float)
    return np.lexsort((np.arange(coeffs.size), -np.abs(coeffs)))


@dataclass(frozen=True)
class SignificantSet:
    """The k largest-magnitude coefficients and their indices (0-based)."""

    indices: np.ndarray
    values: np.ndarray

    @property
    def k(self) -> int:
        return int(self.indices.size)

    @classmethod
    def from_coefficients(cls, coeffs: np.ndarray, k: int) -> SignificantSet:
        coeffs = np.asarray(coeffs, dtype=float)
        if not 1 <= k <= coeffs.size:
            raise ModelError(f"k must lie in [1, {coeffs.size}], got {k}")
        order = rank_order(coeffs)[:k]
        return cls(order, coeffs[order])

    def collected_by(self, observed: Iterable[int]) -> bool:
        """Whether every significant index is among `observed`."""
        return bool(np.isin(self.indices, np.fromiter(observed, dtype=np.intp)).all())


# -----------------------------------------------------------------------------
# Collection guarantee
# -----------------------------------------------------------------------------
def u_min_subset(sig: Union[SignificantSet, np.ndarray]) -> float:
    """Smallest ``|sum|`` over the nonempty subsets of the significant values."""
    values = np.asarray(sig.values if isinstance(sig, SignificantSet) else sig, dtype=float)
    if values.size == 0:
        raise ModelError("Significant set is empty")
    if values.size > MAX_SUBSET_SIZE:
        raise ModelError(
            f"Subset enumeration limited to k <= {MAX_SUBSET_SIZE}, got k={values.size}"
        )
    sums = np.zeros(1)
    for value in values:
        sums = np.concatenate((sums, sums + value))
    return float(np.abs(sums[1:]).min())


def _sorted_magnitudes(coeffs: np.ndarray) -> np.ndarray:
    return np.sort(np.abs(np.asarray(coeffs, dtype=float)))[::-1]


def r_tail(coeffs: np.ndarray, k: int, partition: int) -> float:
    """Magnitude sum over ranks ``k+1 .. 2*partition-1``."""
    mags = _sorted_magnitudes(coeffs)
    stop = 2 * partition - 1
    if stop > mags.size:
        raise ModelError(f"Rank 2*{partition}-1={stop} exceeds N={mags.size}")
    return float(mags[k:stop].sum())


def r_tail_sound(coeffs: np.ndarray, k: int, partition: int) -> float:
    """Magnitude sum over ranks ``k+1 .. k+2*partition-1``.

    These are the largest non-significant magnitudes two competing nodes of
    size `partition` can hold together. Ranks beyond N count as zero.
    """
    mags = _sorted_magnitudes(coeffs)
    return float(mags[k : k + 2 * partition - 1].sum())


def collection_guaranteed(
    sig: Optional[SignificantSet],
    coeffs: np.ndarray,
    k: int,
    partition: int,
    *,
    tail: Literal["sound", "literal"] = "sound",
) -> bool:
    """Whether ``u > r`` guarantees that a run collects all significant coefficients.

    `partition` is the number of coefficients per initial-level node. With
    ``tail="literal"`` the tail stops at rank ``2*partition-1``; that variant is
    not sufficient on its own and is kept for comparison.
    """
    if sig is None:
        sig = SignificantSet.from_coefficients(coeffs, k)
    if tail == "sound":
        r = r_tail_sound(coeffs, k, partition)
    elif tail == "literal":
        r = r_tail(coeffs, k, partition)
    else:
        raise ModelError(f"Unknown tail {tail!r}")
    return u_min_subset(sig) > r


# -----------------------------------------------------------------------------
# Power-law constants
# -----------------------------------------------------------------------------
def zeta_remainder_bound(s: float, terms: int = ZETA_TERMS) -> float:
    """Bound on the error of `zeta` after the Euler-Maclaurin tail."""
    return s * (s + 1) * (s + 2) / 720 * terms ** (-s - 3)


@lru_cache(maxsize=256)
def zeta(s: float, terms: int = ZETA_TERMS) -> float:
    """Riemann zeta for real ``s > 1``.

    Direct sum of the first `terms` terms plus the Euler-Maclaurin tail
    ``M^(1-s)/(s-1) - M^(-s)/2 + s M^(-s-1)/12``.
    """
    if s <= 1:
        raise ModelError(f"zeta needs s > 1, got s={s}")
    n = np.arange(terms, 0, -1, dtype=float)
    head = float(np.sum(n**-s))
    m = float(terms)
    tail = m ** (1 - s) / (s - 1) - m**-s / 2 + s * m ** (-s - 1) / 12
    return head + tail


@lru_cache(maxsize=1)
def alpha_star(tol: float = 1e-12) -> float:
    """The exponent with ``zeta(alpha) - 1 = 1``, by bisection on [1.5, 2]."""
    lo, hi = 1.5, 2.0
    if not zeta(lo) - 2 > 0 > zeta(hi) - 2:
        raise ModelError("zeta(alpha) = 2 is not bracketed by [1.5, 2]")
    mid = (lo + hi) / 2
    for _ in range(200):
        mid = (lo + hi) / 2
        value = zeta(mid) - 2
        if abs(value) < tol or hi - lo < 1e-15:
            break
        if value > 0:
            lo = mid
        else:
            hi = mid
    logger.debug("alpha* = %.15f, zeta(alpha*) - 2 = %.3e", mid, zeta(mid) - 2)
    return mid


def energy_fraction_top1(alpha: float, n: Optional[int] = None) -> float:
    """Energy share of the largest power-law coefficient.

    ``1 / sum_{i<=n} i^(-2 alpha)``, or ``1 / zeta(2 alpha)`` when `n` is None.
    """
    if n is None:
        if alpha <= 1:
            raise ModelError(f"alpha must exceed 1, got {alpha}")
        return 1.0 / zeta(2 * alpha)
    if alpha <= 0:
        raise ModelError(f"alpha must be positive, got {alpha}")
    ranks = np.arange(n, 0, -1, dtype=float)
    return 1.0 / float(np.sum(ranks ** (-2 * alpha)))


def mse_top1(alpha: float, n: int) -> float:
    """Mean squared error of the best 1-term approximation of a power-law signal."""
    if alpha <= 0:
        raise ModelError(f"alpha must be positive, got {alpha}")
    ranks = np.arange(n, 1, -1, dtype=float)
    return float(np.sum(ranks ** (-2 * alpha))) / n


@dataclass(frozen=True)
class PartitionBound:
    partition: int
    level: int
    valid: bool
    unbounded: bool = False


def partition_bound(alpha: float, partition: int, *, sound: bool = False) -> float:
    """Integral upper bound of the tail sum for ``k=1`` and ``R=1``.

    ``2^-alpha + (b^(1-alpha) - 2.5^(1-alpha)) / (1-alpha)`` with
    ``b = 2*partition - 1/2``, or ``2*partition + 1/2`` when `sound`.
    """
    if alpha <= 1:
        raise ModelError(f"alpha must exceed 1, got {alpha}")
    upper = 2 * partition + (0.5 if sound else -0.5)
    return 2**-alpha + (upper ** (1 - alpha) - 2.5 ** (1 - alpha)) / (1 - alpha)


def max_partition_size(alpha: float, *, sound: bool = False, max_level: int = 62) -> PartitionBound:
    """Largest power-of-two partition whose tail bound stays below 1.

    The bound grows with the partition. If it never reaches 1 up to `max_level`
    the result is flagged `unbounded`; if even a partition of one fails, the
    result is ``Π=1`` flagged invalid.
    """
    if partition_bound(alpha, 1, sound=sound) >= 1:
        return PartitionBound(1, 0, valid=False)
    level = 0
    while level < max_level and partition_bound(alpha, 2 ** (level + 1), sound=sound) < 1:
        level += 1
    return PartitionBound(2**level, level, valid=True, unbounded=level == max_level)


def partition_size_curve(alphas: Iterable[float], *, sound: bool = False) -> pd.DataFrame:
    rows = []
    for alpha in alphas:
        bound = max_partition_size(float(alpha), sound=sound)
        rows.append(
            {
                "alpha": float(alpha),
                "partition": bound.partition,
                "level": bound.level,
                "unbounded": int(bound.unbounded),
            }
        )
    return pd.DataFrame(rows, columns=["alpha", "partition", "level", "unbounded"])
