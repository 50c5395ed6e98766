import numpy as np
import pandas as pd
from assertpy import assert_that

from kahs.utils import derive_seed, is_power_of_two, sha256sum, write_csv


def test_derive_seed_is_deterministic_and_path_sensitive():
    assert_that(derive_seed(7, 1)).is_equal_to(derive_seed(7, 1))
    assert_that(derive_seed(7, 1)).is_not_equal_to(derive_seed(7, 2))
    assert_that(derive_seed(7, 1)).is_not_equal_to(derive_seed(8, 1))
    assert_that(derive_seed(7, 0, 1)).is_not_equal_to(derive_seed(7, 1, 0))


def test_derived_seeds_fit_in_64_bits():
    seeds = [derive_seed(0, i) for i in range(100)]

    assert_that(min(seeds)).is_greater_than_or_equal_to(0)
    assert_that(max(seeds)).is_less_than(2**64)
    assert_that(set(seeds)).is_length(100)
    np.random.default_rng(seeds[0])


def test_is_power_of_two():
    assert_that([v for v in range(0, 70) if is_power_of_two(v)]).is_equal_to([1, 2, 4, 8, 16, 32, 64])


def test_write_csv_uses_lf_and_round_trip_floats(tmp_path):
    frame = pd.DataFrame({"rank": [1, 2], "value": [0.1, 1 / 3]})
    path = write_csv(frame, tmp_path / "sub" / "out.csv")
    data = path.read_bytes()

    assert_that(b"\r" in data).is_false()
    lines = data.decode().splitlines()
    assert_that(lines[0]).is_equal_to("rank,value")
    assert_that(float(lines[2].split(",")[1])).is_equal_to(1 / 3)
    assert_that(lines[1]).is_equal_to("1,0.10000000000000001")


def test_sha256sum(tmp_path):
    path = tmp_path / "empty"
    path.write_bytes(b"")

    assert_that(sha256sum(path)).is_equal_to(
        "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
    )
