"""Monte-Carlo and image harnesses for K-AHS.

Every harness is a pure function of its arguments and ``master_seed``: work
item ``i`` draws its randomness from ``derive_seed(master_seed, i)`` (nested
grids append their grid indices) and results are folded in item order.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, TypeVar, Union

import numpy as np
import pandas as pd

from kahs.models import ModelKind, ModelSpec, generate, rank_order
from kahs.sensing import (
    InnerProductOracle,
    RunLog,
    SensingConfig,
    SensingError,
    SparseEstimate,
    k_ahs_sense,
    k_for_budget,
    pad,
    pad_dimension,
    range_sum_oracle,
    reconstruct,
)
from kahs.transforms import (
    DimensionError,
    PermutedTransform,
    TransformKind,
    TransformPair,
    make_pair,
    permuted,
)
from kahs.utils import derive_seed

logger = logging.getLogger(__name__)

T = TypeVar("T")
Progress = Callable[[int], None]

DETECTION_RANKS = 16
PEAK = 255.0


def run_trials(
    work: Callable[[int], T],
    count: int,
    *,
    threads: Optional[int] = None,
    progress: Optional[Progress] = None,
) -> list[T]:
    """Run ``work(0) .. work(count-1)`` on a thread pool, results in item order."""
    if count < 1:
        raise ValueError(f"Need at least one trial, got {count}")
    results: list[T] = []
    if threads == 1:
        for i in range(count):
            results.append(work(i))
            if progress:
                progress(1)
        return results
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(work, i) for i in range(count)]
        for future in futures:
            results.append(future.result())
            if progress:
                progress(1)
    return results


def _sense_coefficients(coeffs: np.ndarray, k: int, perm: Optional[np.ndarray] = None):
    cfg = SensingConfig.from_dimension(coeffs.size, k)
    oracle = range_sum_oracle(pad(coeffs, cfg.padded))
    estimate, log = k_ahs_sense(oracle, cfg, perm=perm)
    if oracle.queries != cfg.measurements:
        raise SensingError(f"Run used {oracle.queries} queries, expected {cfg.measurements}")
    return estimate, log


# -----------------------------------------------------------------------------
# Synthetic experiments
# -----------------------------------------------------------------------------
@dataclass
class DetectionReport:
    spec: ModelSpec
    k: int
    trials: int
    probabilities: np.ndarray

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "rank": np.arange(1, self.probabilities.size + 1),
                "probability": self.probabilities,
            }
        )


def detection_experiment(
    spec: ModelSpec,
    k: int,
    trials: int,
    master_seed: int,
    *,
    ranks: int = DETECTION_RANKS,
    threads: Optional[int] = None,
    progress: Optional[Progress] = None,
) -> DetectionReport:
    """Empirical probability that the coefficient of each rank is collected.

    A rank counts as detected when its coefficient index is among the nonzero
    entries of the estimate.
    """
    ranks = min(ranks, spec.n)

    def trial(i: int) -> np.ndarray:
        coeffs = generate(spec.with_seed(derive_seed(master_seed, i)))
        estimate, _ = _sense_coefficients(coeffs, k)
        found = estimate.positions[estimate.values != 0]
        return np.isin(rank_order(coeffs)[:ranks], found)

    logger.info("Detection: %s K=%d, %d trials", spec.kind.value, k, trials)
    hits = np.sum(run_trials(trial, trials, threads=threads, progress=progress), axis=0)
    return DetectionReport(spec, k, trials, hits / trials)


def relative_energy(estimate: Union[SparseEstimate, np.ndarray], coeffs: np.ndarray) -> float:
    """``||â||² / ||a||²``."""
    if isinstance(estimate, SparseEstimate):
        estimate = estimate.values
    total = float(np.sum(np.square(coeffs)))
    if total == 0:
        return 1.0
    return float(np.sum(np.square(estimate))) / total


def energy_experiment(
    alphas: Sequence[float],
    ks: Sequence[int],
    trials: int,
    master_seed: int,
    *,
    n: int = 1024,
    threads: Optional[int] = None,
    progress: Optional[Progress] = None,
) -> pd.DataFrame:
    """Mean captured energy of power-law signals per (alpha, K).

    The signals of trial ``i`` are shared by all K of one alpha.
    """
    rows = []
    for ia, alpha in enumerate(alphas):
        spec = ModelSpec(ModelKind.POWERLAW, n, alpha=float(alpha))

        def trial(i: int, ia: int = ia, spec: ModelSpec = spec) -> np.ndarray:
            coeffs = generate(spec.with_seed(derive_seed(master_seed, ia, i)))
            return np.array(
                [relative_energy(_sense_coefficients(coeffs, k)[0], coeffs) for k in ks]
            )

        energies = np.mean(run_trials(trial, trials, threads=threads, progress=progress), axis=0)
        for k, energy in zip(ks, energies):
            logger.info("Energy: alpha=%g K=%d -> %.6f", alpha, k, energy)
            rows.append({"alpha": float(alpha), "K": int(k), "energy": float(energy)})
    return pd.DataFrame(rows, columns=["alpha", "K", "energy"])


# -----------------------------------------------------------------------------
# Image experiments
# -----------------------------------------------------------------------------
def psnr(original: np.ndarray, reconstruction: np.ndarray) -> float:
    """PSNR in dB of an 8-bit image; the reconstruction is clipped to [0, 255].

    Identical images give ``math.inf``.
    """
    original = np.asarray(original, dtype=float)
    reconstruction = np.asarray(reconstruction, dtype=float)
    if original.shape != reconstruction.shape:
        raise DimensionError(f"Shape mismatch: {original.shape} vs {reconstruction.shape}")
    mse = float(np.mean(np.square(original - np.clip(reconstruction, 0, PEAK))))
    if mse == 0:
        return math.inf
    return 10 * math.log10(PEAK**2 / mse)


def image_pair(image: np.ndarray, basis: Union[TransformKind, str]) -> TransformPair:
    image = np.asarray(image)
    if image.ndim != 2 or image.shape[0] != image.shape[1]:
        raise DimensionError(f"Expected a square image, got shape {image.shape}")
    return make_pair(basis, image.size)


@dataclass
class RateDistortionPoint:
    ratio: float
    k: int
    measurements: int
    psnr_mean: float
    psnr_std: float
    trials: int
    reconstruction: Optional[np.ndarray] = field(default=None, repr=False, compare=False)


def rate_distortion_frame(points: Sequence[RateDistortionPoint]) -> pd.DataFrame:
    return pd.DataFrame(
        [
            {
                "ratio": p.ratio,
                "K": p.k,
                "M": p.measurements,
                "psnr_mean": p.psnr_mean,
                "psnr_std": p.psnr_std,
            }
            for p in points
        ],
        columns=["ratio", "K", "M", "psnr_mean", "psnr_std"],
    )


def image_experiment(
    image: np.ndarray,
    basis: Union[TransformKind, str],
    ratios: Sequence[float],
    trials: int,
    master_seed: int,
    *,
    keep_reconstruction: bool = False,
    threads: Optional[int] = None,
    progress: Optional[Progress] = None,
) -> list[RateDistortionPoint]:
    """PSNR of K-AHS reconstructions over a grid of budgets ``M = ratio * N``.

    Trial ``i`` uses the leaf permutation seeded by ``derive_seed(master_seed, i)``
    at every ratio. K is the largest value whose run fits the budget.
    """
    inner = image_pair(image, basis)
    original = np.asarray(image, dtype=float)
    coeffs = inner.analyze(original.ravel())
    n = coeffs.size
    pairs = [permuted(inner, derive_seed(master_seed, i)) for i in range(trials)]

    points = []
    for ratio in ratios:
        k = k_for_budget(pad_dimension(n), n, math.floor(ratio * n))
        cfg = SensingConfig.from_dimension(n, k)

        def trial(i: int, k: int = k) -> tuple[float, Optional[np.ndarray]]:
            pair = pairs[i]
            estimate, _ = _sense_coefficients(pair.permute(coeffs), k, pair.perm)
            recon = reconstruct(estimate, pair).reshape(original.shape)
            # only the first trial's image is reported
            return psnr(original, recon), recon if keep_reconstruction and i == 0 else None

        results = run_trials(trial, trials, threads=threads, progress=progress)
        values = np.array([value for value, _ in results])
        std = float(np.std(values, ddof=1)) if trials > 1 else 0.0
        point = RateDistortionPoint(
            float(ratio),
            k,
            cfg.measurements,
            float(np.mean(values)),
            std,
            trials,
            results[0][1],
        )
        logger.info(
            "Rate-distortion %s ratio=%.3f K=%d M=%d: %.3f +- %.3f dB",
            inner.kind.value, ratio, k, point.measurements, point.psnr_mean, point.psnr_std,
        )
        points.append(point)
    return points


def kterm_psnr(image: np.ndarray, pair: TransformPair, terms: int) -> float:
    """PSNR of the optimal `terms`-term approximation of `image` under `pair`."""
    original = np.asarray(image, dtype=float)
    coeffs = pair.analyze(original.ravel())
    kept = np.zeros_like(coeffs)
    top = rank_order(coeffs)[:terms]
    kept[top] = coeffs[top]
    return psnr(original, pair.synthesize(kept).reshape(original.shape))


@dataclass
class CapturedReport:
    k: int
    overlaps: np.ndarray
    optimal: np.ndarray
    estimated: np.ndarray

    @property
    def mean(self) -> float:
        return float(np.mean(self.overlaps))

    @property
    def std(self) -> float:
        return float(np.std(self.overlaps, ddof=1)) if self.overlaps.size > 1 else 0.0

    def magnitude_frame(self) -> pd.DataFrame:
        """Sorted magnitudes of the optimal and the sensed K-term sets (first run)."""
        return pd.DataFrame(
            {
                "rank": np.arange(1, self.k + 1),
                "optimal": self.optimal,
                "estimate": self.estimated,
            }
        )

    def overlap_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"run": np.arange(self.overlaps.size), "overlap": self.overlaps})


def captured_coefficients(
    image: np.ndarray,
    basis: Union[TransformKind, str],
    k: int = 4506,
    runs: int = 100,
    master_seed: int = 0,
    *,
    threads: Optional[int] = None,
    progress: Optional[Progress] = None,
) -> CapturedReport:
    """How many of the K largest coefficients the K largest estimate entries hit."""
    inner = image_pair(image, basis)
    coeffs = inner.analyze(np.asarray(image, dtype=float).ravel())
    optimal = rank_order(coeffs)[:k]

    def run(i: int) -> tuple[int, np.ndarray]:
        pair = permuted(inner, derive_seed(master_seed, i))
        estimate, _ = _sense_coefficients(pair.permute(coeffs), k, pair.perm)
        indices = estimate.coefficient_indices()
        top = rank_order(estimate.values)[:k]
        overlap = int(np.intersect1d(indices[top], optimal).size)
        magnitudes = np.zeros(k)
        top_values = np.abs(estimate.values[top])
        magnitudes[: top_values.size] = top_values
        return overlap, magnitudes

    results = run_trials(run, runs, threads=threads, progress=progress)
    overlaps = np.array([overlap for overlap, _ in results])
    report = CapturedReport(k, overlaps, np.abs(coeffs[optimal]), results[0][1])
    logger.info("Captured coefficients K=%d: %.2f +- %.2f", k, report.mean, report.std)
    return report


# -----------------------------------------------------------------------------
# Sensing maps
# -----------------------------------------------------------------------------
@dataclass
class SensingMap:
    level: int
    values: np.ndarray

    def to_bytes(self) -> np.ndarray:
        """8-bit rendering, values scaled by 255 and rounded."""
        return np.rint(self.values * PEAK).astype(np.uint8)


def sense_image(
    image: np.ndarray, basis: Union[TransformKind, str], k: int, seed: int
) -> tuple[PermutedTransform, SparseEstimate, RunLog]:
    """One K-AHS run on `image` under a leaf permutation seeded by `seed`."""
    pair = permuted(image_pair(image, basis), seed)
    coeffs = pair.analyze(np.asarray(image, dtype=float).ravel())
    estimate, log = _sense_coefficients(coeffs, k, pair.perm)
    return pair, estimate, log


def maps_from_log(image: np.ndarray, pair: TransformPair, log: RunLog) -> list[SensingMap]:
    """Summed rectified sensing vectors of each level's selected nodes.

    Levels above the leaves use the winners; the leaf level uses every observed leaf.
    """
    side = int(np.asarray(image).shape[0])
    oracle = InnerProductOracle(np.asarray(image, dtype=float).ravel(), pair)
    maps = []
    for record in log.levels:
        nodes = record.winners if record.level > 0 else record.positions
        total = np.zeros(pair.dimension)
        for start in range(0, nodes.size, oracle.batch_size):
            chunk = nodes[start : start + oracle.batch_size]
            total += np.abs(oracle.sensing_vectors(record.level, chunk)).sum(axis=0)
        peak = total.max()
        if peak > 0:
            total /= peak
        maps.append(SensingMap(record.level, total.reshape(side, side)))
        logger.debug("Sensing map level %d from %d nodes", record.level, nodes.size)
    return maps


def sensing_maps(
    image: np.ndarray, basis: Union[TransformKind, str], k: int = 4095, seed: int = 0
) -> list[SensingMap]:
    """Spatial sensing maps for levels L..0 of one run."""
    pair, _, log = sense_image(image, basis, k, seed)
    return maps_from_log(image, pair, log)
