import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pandas as pd
import pytest
from assertpy import assert_that
from hypothesis import given, settings
from hypothesis.strategies import integers

from kahs.sensing import (
    InfeasibleBudgetError,
    InvalidSparsityError,
    LevelRecord,
    NodeId,
    RunLog,
    SensingConfig,
    SensingError,
    SparseEstimate,
    audit_run,
    coefficient_range,
    initial_level,
    inner_product_oracle,
    k_ahs_sense,
    k_for_budget,
    measurement_count,
    pad,
    pad_dimension,
    range_sum_oracle,
    reconstruct,
    select_top_k,
    measurement_bound,
    truncate,
)
from kahs.transforms import DimensionError, cdf97_2d_pair, haar2d_pair, identity_pair, permuted
from kahs.utils import is_power_of_two


def sparse_vector(n, k, seed=0):
    rng = np.random.default_rng(seed)
    coeffs = np.zeros(n)
    coeffs[rng.choice(n, size=k, replace=False)] = rng.standard_normal(k)
    return coeffs


def test_node_ranges_are_one_based():
    assert_that(coefficient_range(NodeId(0, 1))).is_equal_to((1, 1))
    assert_that(NodeId(2, 3).coefficient_range()).is_equal_to((9, 12))
    assert_that(NodeId(2, 3).size).is_equal_to(4)
    assert_that(NodeId(2, 3).children()).is_equal_to((NodeId(1, 5), NodeId(1, 6)))


def test_leaf_has_no_children():
    with pytest.raises(SensingError):
        NodeId(0, 4).children()


@pytest.mark.parametrize(
    "padded, k, level",
    [(1024, 4, 6), (1024, 1, 8), (1024, 255, 1), (262144, 4095, 5), (262144, 4506, 4)],
)
def test_initial_level(padded, k, level):
    assert_that(initial_level(padded, k)).is_equal_to(level)


@pytest.mark.parametrize("k", [0, 256, 1000])
def test_sparsity_out_of_range(k):
    with pytest.raises(InvalidSparsityError):
        initial_level(1024, k)


def test_measurement_count_examples():
    assert_that(measurement_count(1024, 4)).is_equal_to(64)
    assert_that(measurement_count(1024, 3)).is_equal_to(50)
    assert_that(measurement_count(262144, 4095)).is_equal_to(49142)


@settings(max_examples=60, deadline=None)
@given(integers(4, 11), integers(1, 2**9))
def test_run_uses_exactly_the_counted_measurements(exponent, k):
    padded = 1 << exponent
    k = 1 + (k - 1) % (padded // 4 - 1)
    cfg = SensingConfig.from_dimension(padded, k)
    oracle = range_sum_oracle(np.random.default_rng(k).standard_normal(padded))
    _, log = k_ahs_sense(oracle, cfg)

    bound = measurement_bound(padded, k)
    assert_that(oracle.queries).is_equal_to(measurement_count(padded, k))
    assert_that(log.total).is_equal_to(oracle.queries)
    assert_that(oracle.queries).is_less_than_or_equal_to(bound + 1e-9)
    assert_that(math.isclose(oracle.queries, bound, rel_tol=1e-12)).is_equal_to(is_power_of_two(k))


def test_k_for_budget_picks_largest_fitting_k():
    k = k_for_budget(262144, 262144, math.floor(0.2 * 262144))

    assert_that(k).is_equal_to(4505)
    assert_that(measurement_count(262144, k)).is_equal_to(52424)
    assert_that(measurement_count(262144, k + 1)).is_greater_than(52428)


def test_k_for_budget_below_smallest_run():
    with pytest.raises(InfeasibleBudgetError):
        k_for_budget(1024, 1024, 10)


def test_padding():
    assert_that(pad_dimension(1000)).is_equal_to(1024)
    assert_that(pad_dimension(1024)).is_equal_to(1024)
    assert_that(pad_dimension(1)).is_equal_to(1)
    padded = pad(np.ones(5))
    assert_that(padded.tolist()).is_equal_to([1, 1, 1, 1, 1, 0, 0, 0])
    assert_that(truncate(padded, 5).tolist()).is_equal_to([1] * 5)


def test_config_pads_dimension():
    cfg = SensingConfig.from_dimension(1000, 4)

    assert_that(cfg.padded).is_equal_to(1024)
    assert_that(cfg.level).is_equal_to(6)
    assert_that(cfg.measurements).is_equal_to(64)


def test_config_rejects_inconsistent_level():
    with pytest.raises(SensingError):
        SensingConfig(1024, 1024, 4, 5)


def test_range_sum_oracle_counts_queries():
    coeffs = np.arange(1.0, 9.0)
    oracle = range_sum_oracle(coeffs)

    assert_that(oracle.measure(NodeId(3, 1))).is_equal_to(36.0)
    assert_that(oracle.measure(NodeId(1, 2))).is_equal_to(7.0)
    assert_that(oracle.measure_many(2, np.array([0, 1])).tolist()).is_equal_to([10.0, 26.0])
    assert_that(oracle.queries).is_equal_to(4)


def test_oracle_rejects_nodes_outside_tree():
    oracle = range_sum_oracle(np.zeros(8))

    with pytest.raises(SensingError):
        oracle.measure(NodeId(4, 1))
    with pytest.raises(SensingError):
        oracle.measure(NodeId(1, 5))


def test_query_counter_under_concurrency():
    oracle = range_sum_oracle(np.ones(1024))
    with ThreadPoolExecutor(max_workers=8) as pool:
        list(pool.map(lambda _: oracle.measure_many(0, np.arange(10)), range(100)))

    assert_that(oracle.queries).is_equal_to(1000)


@pytest.mark.parametrize("build", [lambda: identity_pair(64), lambda: haar2d_pair(8), lambda: cdf97_2d_pair(8)])
def test_inner_product_oracle_matches_range_sums(build):
    pair = permuted(build(), seed=9)
    x = np.random.default_rng(7).uniform(0, 255, pair.dimension)
    fast = range_sum_oracle(pair.analyze(x))
    slow = inner_product_oracle(x, pair)

    for level in range(7):
        positions = np.arange(64 >> level)
        np.testing.assert_allclose(
            slow.measure_many(level, positions), fast.measure_many(level, positions), rtol=1e-9, atol=1e-7
        )


def test_inner_product_oracle_pads_short_signals():
    oracle = inner_product_oracle(np.arange(1.0, 6.0), identity_pair(5))

    assert_that(oracle.padded).is_equal_to(8)
    assert_that(oracle.measure(NodeId(2, 2))).is_equal_to(5.0)
    assert_that(oracle.measure(NodeId(3, 1))).is_equal_to(15.0)


def test_detail_nodes_of_constant_image_measure_zero():
    oracle = inner_product_oracle(np.full(16, 7.0), haar2d_pair(4))

    assert_that(oracle.measure(NodeId(0, 1))).is_close_to(28.0, 1e-12)
    np.testing.assert_allclose(oracle.measure_many(0, np.arange(1, 16)), 0.0, atol=1e-12)
    np.testing.assert_allclose(oracle.measure_many(1, np.arange(1, 8)), 0.0, atol=1e-12)
    np.testing.assert_allclose(oracle.measure_many(2, np.arange(1, 4)), 0.0, atol=1e-12)


def test_inner_product_oracle_dimension_mismatch():
    with pytest.raises(DimensionError):
        inner_product_oracle(np.zeros(10), identity_pair(8))


def test_select_top_k_breaks_ties_by_position():
    measurements = [(NodeId(2, 3), -3.0), (NodeId(2, 1), 3.0), (NodeId(2, 2), 1.0)]

    assert_that(select_top_k(measurements, 1)).is_equal_to([NodeId(2, 1)])
    assert_that(select_top_k(measurements, 2)).is_equal_to([NodeId(2, 1), NodeId(2, 3)])


def test_select_top_k_errors():
    with pytest.raises(SensingError):
        select_top_k([], 1)
    with pytest.raises(SensingError):
        select_top_k([(NodeId(0, 1), 1.0)], 2)


@settings(max_examples=50, deadline=None)
@given(integers(1, 15), integers(0, 2**32 - 1))
def test_sparse_signals_are_recovered_exactly(k, seed):
    coeffs = sparse_vector(1024, k, seed)
    estimate, _ = k_ahs_sense(range_sum_oracle(coeffs), SensingConfig.from_dimension(1024, k))

    np.testing.assert_array_equal(estimate.to_dense(), coeffs)
    assert_that(len(estimate)).is_equal_to(2 * k)


def test_padded_run_reports_only_original_coefficients():
    coeffs = sparse_vector(1000, 4, seed=5)
    cfg = SensingConfig.from_dimension(1000, 4)
    estimate, _ = k_ahs_sense(range_sum_oracle(pad(coeffs)), cfg)

    assert_that(estimate.n).is_equal_to(1000)
    assert_that(int(estimate.positions.max())).is_less_than(1000)
    np.testing.assert_array_equal(reconstruct(estimate, identity_pair(1000)), coeffs)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_short_signal_equals_truncated_padded_run(seed):
    coeffs = np.random.default_rng(seed).standard_normal(12)
    short, _ = k_ahs_sense(range_sum_oracle(pad(coeffs)), SensingConfig.from_dimension(12, 2))
    full, _ = k_ahs_sense(range_sum_oracle(pad(coeffs, 16)), SensingConfig.from_dimension(16, 2))
    inside = full.positions < 12

    np.testing.assert_array_equal(short.positions, full.positions[inside])
    np.testing.assert_array_equal(short.values, full.values[inside])
    np.testing.assert_array_equal(short.to_dense(), truncate(full.to_dense(), 12))


def test_cancelling_pair_is_missed():
    coeffs = np.zeros(16)
    coeffs[:3] = [5.0, -5.0, 0.1]
    estimate, log = k_ahs_sense(range_sum_oracle(coeffs), SensingConfig.from_dimension(16, 1))

    assert_that(estimate.positions.tolist()).is_equal_to([2, 3])
    assert_that([index for index, _ in estimate.entries()]).does_not_contain(1, 2)
    assert_that(log.winners(1)).is_equal_to([NodeId(1, 2)])


def test_run_log_frame():
    cfg = SensingConfig.from_dimension(64, 2)
    _, log = k_ahs_sense(range_sum_oracle(sparse_vector(64, 2, seed=1)), cfg)
    frame = log.to_frame()

    assert_that(frame.columns.tolist()).is_equal_to(["level", "node_index", "value", "winner"])
    assert_that(len(frame)).is_equal_to(cfg.measurements)
    assert_that(int(frame["node_index"].min())).is_equal_to(1)
    winners = frame.groupby("level")["winner"].sum()
    assert_that(int(winners[0])).is_equal_to(0)
    assert_that(set(winners.drop(0).tolist())).is_equal_to({2})
    assert_that(log.winners(cfg.level)).is_length(2)


def test_run_log_csv(tmp_path):
    cfg = SensingConfig.from_dimension(64, 2)
    _, log = k_ahs_sense(range_sum_oracle(sparse_vector(64, 2, seed=1)), cfg)
    path = log.write_csv(tmp_path / "runs" / "runlog.csv")

    text = path.read_bytes()
    assert_that(text.startswith(b"level,node_index,value,winner\n")).is_true()
    assert_that(text).does_not_contain(b"\r\n")
    np.testing.assert_array_equal(pd.read_csv(path)["value"].to_numpy(), log.to_frame()["value"].to_numpy())


def test_audit_accepts_genuine_runs():
    cfg = SensingConfig.from_dimension(256, 4)
    _, log = k_ahs_sense(range_sum_oracle(sparse_vector(256, 2, seed=2)), cfg)

    assert_that(audit_run(log, cfg)).is_empty()


def test_audit_rejects_tampered_winners():
    cfg = SensingConfig.from_dimension(256, 4)
    _, log = k_ahs_sense(range_sum_oracle(sparse_vector(256, 2, seed=2)), cfg)
    first = log.levels[0]
    log.levels[0] = LevelRecord(first.level, first.positions, first.values, first.winners[::-1] + 1)

    assert_that(audit_run(log, cfg)).is_not_empty()


def test_audit_detects_reversed_tie_break():
    def larger_position_first(positions, values, k):
        order = np.lexsort((-positions, -np.abs(values)))
        return np.sort(positions[order[:k]])

    cfg = SensingConfig.from_dimension(256, 4)
    _, log = k_ahs_sense(
        range_sum_oracle(sparse_vector(256, 2, seed=2)), cfg, selector=larger_position_first
    )

    assert_that(audit_run(log, cfg)).is_not_empty()


def test_estimate_maps_leaves_through_permutation():
    estimate = SparseEstimate(4, np.array([0, 2]), np.array([1.5, -2.0]), np.array([3, 1, 0, 2]))

    assert_that(estimate.entries()).is_equal_to([(1, 1.5), (3, -2.0)])
    assert_that(estimate.coefficient_indices().tolist()).is_equal_to([3, 0])
    assert_that(estimate.to_dense().tolist()).is_equal_to([1.5, 0.0, -2.0, 0.0])


def test_estimate_rejects_positions_outside_dimension():
    with pytest.raises(SensingError):
        SparseEstimate(4, np.array([4]), np.array([1.0]))


def test_reconstruct_through_permuted_wavelet():
    pair = permuted(haar2d_pair(8), seed=1)
    x = np.zeros(64)
    x[:4] = [8.0, 8.0, 8.0, 8.0]
    coeffs = pair.analyze(x)
    cfg = SensingConfig.from_dimension(64, 15)
    estimate, _ = k_ahs_sense(range_sum_oracle(coeffs), cfg, perm=pair.perm)

    np.testing.assert_allclose(reconstruct(estimate, pair), x, atol=1e-9)


def test_reconstruct_dimension_mismatch():
    estimate = SparseEstimate(8, np.array([1]), np.array([1.0]))

    with pytest.raises(DimensionError):
        reconstruct(estimate, identity_pair(16))


def test_run_log_requires_visited_level():
    log = RunLog([LevelRecord(0, np.array([0]), np.array([1.0]))])

    with pytest.raises(KeyError):
        log.winners(3)
