"""Invariant suites run by ``kahs verify``.

Each check returns a `CheckResult`; none raises on a failed property.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from kahs.experiments import detection_experiment
from kahs.models import (
    ModelKind,
    ModelSpec,
    SignificantSet,
    alpha_star,
    energy_fraction_top1,
    generate,
    collection_guaranteed,
    zeta,
)
from kahs.sensing import (
    SensingConfig,
    audit_run,
    inner_product_oracle,
    k_ahs_sense,
    pad,
    range_sum_oracle,
    measurement_bound,
    top_k_positions,
)
from kahs.transforms import TransformKind, make_pair, permuted
from kahs.utils import derive_seed, is_power_of_two

logger = logging.getLogger(__name__)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


@dataclass
class VerifySettings:
    instances: int = 10_000
    seed: int = 0
    inject_fault: bool = False
    threads: Optional[int] = None

    @property
    def trials(self) -> int:
        return max(1, self.instances // 10)


def flipped_tie_break(positions: np.ndarray, values: np.ndarray, k: int) -> np.ndarray:
    """Top-K selection that breaks ties towards the larger position."""
    order = np.lexsort((-positions, -np.abs(values)))
    return np.sort(positions[order[:k]])


def check_count_law(settings: VerifySettings) -> CheckResult:
    runs = exact = equalities = 0
    problems: list[str] = []
    for exponent in range(4, 15):
        padded = 1 << exponent
        coeffs = np.random.default_rng(derive_seed(settings.seed, exponent)).standard_normal(padded)
        oracle = range_sum_oracle(coeffs)
        for k in range(1, padded // 4):
            cfg = SensingConfig.from_dimension(padded, k)
            before = oracle.queries
            k_ahs_sense(oracle, cfg)
            count = oracle.queries - before
            expected = (padded >> cfg.level) + 2 * k * cfg.level
            bound = measurement_bound(padded, k)
            runs += 1
            exact += count == expected
            tight = math.isclose(count, bound, rel_tol=1e-12)
            equalities += tight
            if count != expected or count > bound * (1 + 1e-12):
                problems.append(f"N={padded} K={k}: M={count}")
            elif tight != is_power_of_two(k):
                problems.append(f"N={padded} K={k}: equality with the bound is {tight}")
    detail = f"{exact}/{runs} exact counts, {equalities} tight bounds"
    if problems:
        detail += "; " + ", ".join(problems[:3])
    return CheckResult("measurement count law", not problems, detail)


def check_exact_recovery(settings: VerifySettings) -> CheckResult:
    worst = 1.0
    for k in (2, 4):
        spec = ModelSpec(ModelKind.KSPARSE, 1024, k=k)
        report = detection_experiment(
            spec, 4, settings.trials, derive_seed(settings.seed, 1, k), threads=settings.threads
        )
        worst = min(worst, float(report.probabilities[:k].min()))
    return CheckResult(
        "exact k-sparse recovery", worst == 1.0, f"min detection {worst:.4f} over {settings.trials} trials"
    )


def check_exponential(settings: VerifySettings) -> CheckResult:
    spec = ModelSpec(ModelKind.EXPONENTIAL, 1024, q=2.0)
    report = detection_experiment(
        spec, 4, settings.trials, derive_seed(settings.seed, 2), threads=settings.threads
    )
    worst = float(report.probabilities[:4].min())
    return CheckResult("exponential q=2 top-4", worst == 1.0, f"min detection {worst:.4f}")


def _random_instance(rng: np.random.Generator) -> tuple[ModelSpec, int, int]:
    n = int(rng.integers(17, 65))
    big_k = int(rng.integers(1, 5))
    k = int(rng.integers(1, big_k + 1))
    kind = ModelKind(rng.choice([m.value for m in ModelKind]))
    seed = int(rng.integers(0, 2**63 - 1))
    if kind is ModelKind.KSPARSE:
        spec = ModelSpec(kind, n, k=k, seed=seed)
    elif kind is ModelKind.EXPONENTIAL:
        spec = ModelSpec(kind, n, q=float(rng.uniform(1.05, 4.0)), seed=seed)
    else:
        spec = ModelSpec(kind, n, alpha=float(rng.uniform(1.05, 4.0)), seed=seed)
    return spec, k, big_k


def check_collection_guarantee(settings: VerifySettings) -> CheckResult:
    rng = np.random.default_rng(derive_seed(settings.seed, 3))
    covered = violations = 0
    for _ in range(settings.instances):
        spec, k, big_k = _random_instance(rng)
        coeffs = generate(spec)
        cfg = SensingConfig.from_dimension(spec.n, big_k)
        sig = SignificantSet.from_coefficients(coeffs, k)
        if not collection_guaranteed(sig, coeffs, k, 1 << cfg.level):
            continue
        covered += 1
        estimate, _ = k_ahs_sense(range_sum_oracle(pad(coeffs, cfg.padded)), cfg)
        if not sig.collected_by(estimate.positions):
            violations += 1
            logger.warning("Guarantee violated: %s k=%d K=%d", spec, k, big_k)
    return CheckResult(
        "collection guarantee (u > r)",
        violations == 0,
        f"{covered}/{settings.instances} instances covered, {violations} violations",
    )


def check_exponential_guarantee(settings: VerifySettings) -> CheckResult:
    failures = []
    for q in (2.0, 2.5, 3.0):
        for big_k in range(1, 5):
            cfg = SensingConfig.from_dimension(64, big_k)
            for k in range(1, big_k + 1):
                coeffs = generate(ModelSpec(ModelKind.EXPONENTIAL, 64, q=q, seed=settings.seed))
                if not collection_guaranteed(None, coeffs, k, 1 << cfg.level):
                    failures.append(f"q={q} k={k} K={big_k}")
    return CheckResult(
        "u > r for exponential q >= 2", not failures, ", ".join(failures[:3]) or "all k <= K"
    )


def check_descent_audit(settings: VerifySettings) -> CheckResult:
    selector = flipped_tie_break if settings.inject_fault else top_k_positions
    problems: list[str] = []
    runs = max(1, settings.instances // 100)
    for i in range(runs):
        coeffs = generate(ModelSpec(ModelKind.KSPARSE, 256, k=2, seed=derive_seed(settings.seed, 4, i)))
        cfg = SensingConfig.from_dimension(256, 4)
        _, log = k_ahs_sense(range_sum_oracle(coeffs), cfg, selector=selector)
        problems.extend(audit_run(log, cfg))
    detail = f"{runs} runs audited" if not problems else problems[0]
    return CheckResult("descent structure and tie-break", not problems, detail)


def check_transforms(settings: VerifySettings) -> CheckResult:
    rng = np.random.default_rng(derive_seed(settings.seed, 5))
    worst_roundtrip = worst_adjoint = worst_parseval = 0.0
    for kind in TransformKind:
        for levels in (None, 2):
            if kind is TransformKind.IDENTITY and levels is not None:
                continue
            pair = make_pair(kind, 32 * 32, levels)
            x, y = rng.standard_normal((2, pair.dimension))
            a = pair.analyze(x)
            worst_roundtrip = max(worst_roundtrip, float(np.abs(pair.synthesize(a) - x).max()))
            lhs, rhs = float(a @ y), float(x @ pair.adjoint(y))
            scale = float(np.linalg.norm(a) * np.linalg.norm(y))
            worst_adjoint = max(worst_adjoint, abs(lhs - rhs) / scale)
            if pair.orthogonal:
                worst_parseval = max(
                    worst_parseval, abs(float(a @ a) - float(x @ x)) / float(x @ x)
                )
    passed = worst_roundtrip < 1e-9 and worst_adjoint < 1e-9 and worst_parseval < 1e-12
    return CheckResult(
        "transform round-trip, adjoint, Parseval",
        passed,
        f"{worst_roundtrip:.1e} / {worst_adjoint:.1e} / {worst_parseval:.1e}",
    )


def check_oracle_equivalence(settings: VerifySettings) -> CheckResult:
    rng = np.random.default_rng(derive_seed(settings.seed, 6))
    worst = 0.0
    for i, kind in enumerate(TransformKind):
        pair = permuted(make_pair(kind, 16 * 16), derive_seed(settings.seed, 6, i))
        x = rng.uniform(0, 255, pair.dimension)
        fast = range_sum_oracle(pair.analyze(x))
        slow = inner_product_oracle(x, pair)
        for level in range(fast.depth + 1):
            positions = np.arange(fast.padded >> level)
            a = fast.measure_many(level, positions)
            b = slow.measure_many(level, positions)
            worst = max(worst, float(np.abs(a - b).max()) / max(1.0, float(np.abs(a).max())))
    return CheckResult("range-sum vs inner-product oracle", worst < 1e-9, f"max rel. error {worst:.1e}")


def check_alpha_star(settings: VerifySettings) -> CheckResult:
    alpha = alpha_star()
    residual = abs(zeta(alpha) - 2)
    energy = energy_fraction_top1(alpha)
    passed = residual < 1e-10 and 1.72 <= alpha <= 1.74 and energy > 0.88
    return CheckResult(
        "alpha* and top-1 energy",
        passed,
        f"alpha*={alpha:.6f}, |zeta-2|={residual:.1e}, energy={energy:.4f}",
    )


CHECKS: list[Callable[[VerifySettings], CheckResult]] = [
    check_count_law,
    check_exact_recovery,
    check_exponential,
    check_collection_guarantee,
    check_exponential_guarantee,
    check_descent_audit,
    check_transforms,
    check_oracle_equivalence,
    check_alpha_star,
]


def run_checks(
    settings: VerifySettings, on_result: Optional[Callable[[CheckResult], None]] = None
) -> list[CheckResult]:
    results = []
    for check in CHECKS:
        result = check(settings)
        logger.debug("%s: %s (%s)", result.name, result.passed, result.detail)
        if on_result:
            on_result(result)
        results.append(result)
    return results
