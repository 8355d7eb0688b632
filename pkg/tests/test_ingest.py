import io
import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sfcnn.errors import (
    ConfigError,
    InsufficientHistoryError,
    LogParseError,
    NoSamplesError,
    ShapeMismatchError,
    UnknownKeyError,
    WindowOutOfRangeError,
)
from sfcnn.ingest import (
    DEFAULT_SLOTS,
    STD_FLOOR,
    SUPPLIER_SLOTS,
    FrameSequence,
    Level,
    NormStats,
    aggregate,
    apply_norm,
    build_frame,
    enumerate_end_points,
    fit_norm,
    make_eval_samples,
    make_samples,
    parse_logs,
    read_log_files,
    sales_history,
    sample_weight,
    stack_frames,
    training_keys,
)
from tests.conftest import make_csv

ITEMS = "item_id,brand_id,category_id,supplier_id\ni0,b0,c0,s0\ni1,b0,c0,s1\ni2,b1,c0,s0\n"


def _parse(logs: str, items: str = ITEMS, **kwargs):
    return parse_logs(io.StringIO(logs), io.StringIO(items), **kwargs)


def test_parse_logs__fills_missing_days_with_zeros():
    logs = (
        "date,item_id,region_id,sales,pv\n"
        "2020-01-01,i0,r0,3,10\n"
        "2020-01-03,i0,r0,5,20\n"
        "2020-01-02,i1,r0,1,2\n"
    )
    table = _parse(logs)
    assert table.d == 2
    assert table.num_days == 3
    assert table.date_range == (0, 2)
    matrix = aggregate(table, Level.ITEM, "r0", "i0", (0, 2))
    np.testing.assert_array_equal(matrix.values, [[3, 0, 5], [10, 0, 20]])


def test_parse_logs__row_order_does_not_matter():
    logs, items = make_csv(num_days=5)
    header, *rows = logs.strip().split("\n")
    shuffled = "\n".join([header] + rows[::-1]) + "\n"
    a = _parse(logs, items)
    b = _parse(shuffled, items)
    np.testing.assert_array_equal(a.cube, b.cube)
    assert list(a.records) == list(b.records)


def test_parse_logs__explicit_indicator_names():
    table = _parse("date,item_id,region_id,sales,pv\n2020-01-01,i0,r0,1,2\n", indicator_names=["sales", "pv"])
    assert table.indicator_names == ["sales", "pv"]
    with pytest.raises(LogParseError) as err:
        _parse("date,item_id,region_id,sales,pv\n2020-01-01,i0,r0,1,2\n", indicator_names=["sales"])
    assert err.value.line == 1


@pytest.mark.parametrize(
    "logs, line, column",
    [
        ("date,item_id,region_id,sales\n2020-01-01,i0,r0,1\n2020-13-01,i0,r0,1\n", 3, "date"),
        ("date,item_id,region_id,sales\n2020-01-01,i0,r0,abc\n", 2, "sales"),
        ("date,item_id,region_id,sales\n2020-01-01,i0,r0,inf\n", 2, "sales"),
        ("date,item_id,region_id,sales\n2020-01-01,i-0,r0,1\n", 2, "item_id"),
        ("date,item_id,region_id,sales\n2020-01-01,i9,r0,1\n", 2, "item_id"),
        ("date,item_id,region_id,sales\n2020-01-01,i0,r0,1\n2020-01-01,i0,r0,2\n", 3, None),
        ("item_id,date,region_id,sales\ni0,2020-01-01,r0,1\n", 1, None),
    ],
)
def test_parse_logs__errors(logs, line, column):
    with pytest.raises(LogParseError) as err:
        _parse(logs)
    assert err.value.line == line
    assert err.value.column == column
    assert f"line {line}" in str(err.value)


def test_parse_logs__empty_logs():
    with pytest.raises(LogParseError):
        _parse("")


def test_parse_logs__duplicate_item_attributes():
    with pytest.raises(LogParseError) as err:
        _parse("date,item_id,region_id,sales\n", items=ITEMS + "i0,b1,c1,s1\n")
    assert err.value.line == 5


def test_read_log_files(tmp_path, tiny_csv):
    logs, items = tiny_csv
    (tmp_path / "logs.csv").write_text(logs)
    (tmp_path / "items.csv").write_text(items)
    table = read_log_files(str(tmp_path / "logs.csv"), str(tmp_path / "items.csv"))
    assert table.item_ids == ["i0", "i1", "i2"]
    assert table.region_ids == ["r0", "r1"]


def test_day_index_round_trip(tiny_table):
    assert tiny_table.day_index("2020-01-01") == 0
    assert tiny_table.day_index("2020-01-11") == 10
    assert tiny_table.date_of(10).isoformat() == "2020-01-11"


def test_aggregate__brand_is_sum_of_items(tiny_table):
    brand = aggregate(tiny_table, Level.BRAND, "r1", "b0", (3, 9))
    items = [aggregate(tiny_table, Level.ITEM, "r1", item, (3, 9)) for item in ("i0", "i2")]
    np.testing.assert_array_equal(brand.values, items[0].values + items[1].values)
    assert brand.shape == (2, 7)


def test_aggregate__region_is_sum_of_all_items(tiny_table):
    region = aggregate(tiny_table, Level.REGION, "r0", None, (0, 29))
    total = sum(aggregate(tiny_table, Level.ITEM, "r0", item, (0, 29)).values for item in tiny_table.item_ids)
    np.testing.assert_array_equal(region.values, total)
    assert region.key == "r0"


def test_aggregate__errors(tiny_table):
    with pytest.raises(WindowOutOfRangeError):
        aggregate(tiny_table, Level.ITEM, "r0", "i0", (25, 30))
    with pytest.raises(WindowOutOfRangeError):
        aggregate(tiny_table, Level.ITEM, "r0", "i0", (5, 4))
    with pytest.raises(UnknownKeyError):
        aggregate(tiny_table, Level.BRAND, "r0", "b7", (0, 3))
    with pytest.raises(UnknownKeyError):
        aggregate(tiny_table, Level.ITEM, "r9", "i0", (0, 3))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), split=st.integers(1, 28))
def test_aggregate__additive_over_windows(seed, split):
    logs, items = make_csv(seed=seed)
    table = _parse(logs, items)
    whole = aggregate(table, Level.CATEGORY, "r0", "c0", (0, 29)).values
    left = aggregate(table, Level.CATEGORY, "r0", "c0", (0, split)).values
    right = aggregate(table, Level.CATEGORY, "r0", "c0", (split + 1, 29)).values
    np.testing.assert_array_equal(whole.sum(axis=1), left.sum(axis=1) + right.sum(axis=1))


@settings(max_examples=25, deadline=None)
@given(
    seed=st.integers(0, 10_000),
    brands=st.lists(st.integers(0, 3), min_size=5, max_size=5),
    categories=st.lists(st.integers(0, 2), min_size=5, max_size=5),
)
def test_aggregate__partitions_sum_to_region(seed, brands, categories):
    items = tuple(f"i{n}" for n in range(5))
    logs, _ = make_csv(num_days=12, items=items, seed=seed)
    attributes = "item_id,brand_id,category_id,supplier_id\n" + "".join(
        f"{item},b{brand},c{category},s0\n" for item, brand, category in zip(items, brands, categories)
    )
    table = _parse(logs, attributes)
    for region in table.region_ids:
        total = aggregate(table, Level.REGION, region, None, (0, 11)).values
        for level, assignment in ((Level.BRAND, brands), (Level.CATEGORY, categories)):
            prefix = "b" if level == Level.BRAND else "c"
            parts = [
                aggregate(table, level, region, f"{prefix}{key}", (0, 11)).values for key in sorted(set(assignment))
            ]
            np.testing.assert_array_equal(sum(parts), total)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), a=st.integers(0, 3), b=st.integers(0, 3))
def test_aggregate__linear_in_logs(seed, a, b):
    x_logs, items = make_csv(num_days=10, seed=seed)
    y_logs, _ = make_csv(num_days=10, seed=seed + 1)
    x_frame, y_frame = pd.read_csv(io.StringIO(x_logs)), pd.read_csv(io.StringIO(y_logs))
    combined = x_frame.copy()
    combined[["sales", "pv"]] = a * x_frame[["sales", "pv"]] + b * y_frame[["sales", "pv"]]
    x, y, z = _parse(x_logs, items), _parse(y_logs, items), _parse(combined.to_csv(index=False), items)
    for level, key in ((Level.ITEM, "i1"), (Level.BRAND, "b0"), (Level.CATEGORY, "c0"), (Level.REGION, "r1")):
        expected = a * aggregate(x, level, "r1", key, (2, 8)).values + b * aggregate(y, level, "r1", key, (2, 8)).values
        np.testing.assert_array_equal(aggregate(z, level, "r1", key, (2, 8)).values, expected)


def test_build_frame__slot_layout(tiny_table):
    frame = build_frame(tiny_table, "i1", "r0", end_point=20, T=7)
    assert frame.slot_levels == DEFAULT_SLOTS
    assert frame.values.shape == (4, 2, 7)
    assert [slot.key for slot in frame.slots] == ["i1", "b1", "c0", "r0"]
    with_supplier = build_frame(tiny_table, "i1", "r0", end_point=20, T=7, include_supplier=True)
    assert with_supplier.slot_levels == SUPPLIER_SLOTS
    assert with_supplier.slots[3].key == "s1"


def test_build_frame__insufficient_history(tiny_table):
    with pytest.raises(InsufficientHistoryError):
        build_frame(tiny_table, "i0", "r0", end_point=5, T=7)
    with pytest.raises(InsufficientHistoryError):
        build_frame(tiny_table, "i0", "r0", end_point=30, T=7)
    with pytest.raises(ConfigError):
        build_frame(tiny_table, "i0", "r0", end_point=10, T=0)


def test_fit_norm__population_statistics(tiny_table):
    frames = [build_frame(tiny_table, "i0", "r0", end_point, 5) for end_point in (4, 9, 14)]
    stats = fit_norm(frames)
    stacked = np.concatenate([frame.values for frame in frames], axis=-1)
    np.testing.assert_allclose(stats.mean, stacked.mean(axis=-1), atol=1e-12)
    np.testing.assert_allclose(stats.std, stacked.std(axis=-1), atol=1e-12)


def test_apply_norm__training_frames_are_standardized(synth_table):
    frames = FrameSequence(synth_table, training_keys(synth_table, 14, 3, 1, 40), 14)
    stats = fit_norm(frames)
    normalized = np.concatenate([apply_norm(frame, stats).values for frame in frames], axis=-1)
    varying = stats.std >= STD_FLOOR
    assert varying.any()
    np.testing.assert_allclose(normalized.mean(axis=-1)[varying], 0.0, rtol=0, atol=1e-9)
    np.testing.assert_allclose(normalized.std(axis=-1)[varying], 1.0, rtol=0, atol=1e-9)


def test_fit_norm__empty():
    with pytest.raises(NoSamplesError):
        fit_norm([])


def test_apply_norm__zero_variance_rows_map_to_zero(tiny_table):
    frame = build_frame(tiny_table, "i0", "r0", 9, 5)
    stats = NormStats(
        slot_levels=DEFAULT_SLOTS,
        mean=np.ones((4, 2)),
        std=np.array([[0.0, 2.0]] * 4),
    )
    normalized = apply_norm(frame, stats)
    np.testing.assert_array_equal(normalized.values[:, 0], 0.0)
    np.testing.assert_allclose(normalized.values[:, 1], (frame.values[:, 1] - 1) / 2)


def test_apply_norm__layout_mismatch(tiny_table):
    frame = build_frame(tiny_table, "i0", "r0", 9, 5)
    stats = NormStats(slot_levels=SUPPLIER_SLOTS, mean=np.zeros((5, 2)), std=np.ones((5, 2)))
    with pytest.raises(ShapeMismatchError):
        apply_norm(frame, stats)


def test_norm_stats__dict_round_trip():
    stats = NormStats(slot_levels=DEFAULT_SLOTS, mean=np.arange(8.0).reshape(4, 2), std=np.ones((4, 2)))
    restored = NormStats.from_dict(stats.to_dict())
    assert restored.slot_levels == stats.slot_levels
    np.testing.assert_array_equal(restored.mean, stats.mean)


def test_sample_weight():
    assert sample_weight(93, 7, 100, 0.02) == 1.0
    assert sample_weight(86, 7, 100, 0.02) == pytest.approx(math.exp(-0.14), abs=1e-12)
    assert sample_weight(10, 7, 100, 0.0) == 1.0
    weights = [sample_weight(end_point, 7, 100, 0.02) for end_point in range(50, 94)]
    assert weights == sorted(weights)
    with pytest.raises(WindowOutOfRangeError):
        sample_weight(94, 7, 100, 0.02)


def test_enumerate_end_points(tiny_table):
    assert enumerate_end_points(tiny_table, T=7, horizon=3, stride=5, forecast_start=25) == [22, 17, 12, 7]
    assert enumerate_end_points(tiny_table, T=30, horizon=3, stride=1, forecast_start=25) == []
    with pytest.raises(ConfigError):
        enumerate_end_points(tiny_table, T=7, horizon=3, stride=0, forecast_start=25)


def test_make_samples__targets_and_weights(tiny_table):
    frames = FrameSequence(tiny_table, training_keys(tiny_table, 7, 3, 4, 25), 7)
    stats = fit_norm(frames)
    samples = make_samples(tiny_table, T=7, horizon=3, stride=4, forecast_start=25, beta=0.1, stats=stats)
    assert sorted(samples) == ["r0", "r1"]
    assert len(samples["r0"]) == 3 * len(enumerate_end_points(tiny_table, 7, 3, 4, 25))

    first = samples["r0"][0]
    assert (first.item_id, first.end_point, first.weight) == ("i0", 22, 1.0)
    history = sales_history(tiny_table, "i0", "r0", 29)
    assert first.target == history[23:26].sum()
    later = samples["r0"][1]
    assert later.weight == pytest.approx(math.exp(-0.4))


def test_make_samples__no_admissible_end_point(tiny_table):
    stats = NormStats(slot_levels=DEFAULT_SLOTS, mean=np.zeros((4, 2)), std=np.ones((4, 2)))
    with pytest.raises(NoSamplesError):
        make_samples(tiny_table, T=40, horizon=3, stride=1, forecast_start=25, beta=0.0, stats=stats)


def test_stack_frames__matches_single_frames(tiny_table):
    frames = FrameSequence(tiny_table, training_keys(tiny_table, 6, 2, 3, 28), 6, include_supplier=True)
    stats = fit_norm(frames)
    samples = make_samples(tiny_table, T=6, horizon=2, stride=3, forecast_start=28, beta=0.0, stats=stats)
    batch = samples["r1"][:5] + samples["r0"][-3:]
    stacked = stack_frames(batch)
    assert stacked.shape == (8, 5, 2, 6)
    for sample, values in zip(batch, stacked):
        np.testing.assert_array_equal(values, sample.frame.values)


def test_make_eval_samples(tiny_table):
    stats = NormStats(slot_levels=DEFAULT_SLOTS, mean=np.zeros((4, 2)), std=np.ones((4, 2)))
    samples = make_eval_samples(tiny_table, T=7, horizon=3, forecast_start=27, stats=stats)
    sample = samples["r1"][2]
    assert (sample.item_id, sample.end_point, sample.weight) == ("i2", 26, 1.0)
    assert sample.target == sales_history(tiny_table, "i2", "r1", 29)[27:30].sum()

    future = make_eval_samples(tiny_table, T=7, horizon=3, forecast_start=30, stats=stats)
    assert all(it.target is None for it in future["r0"])

    with pytest.raises(InsufficientHistoryError):
        make_eval_samples(tiny_table, T=7, horizon=3, forecast_start=4, stats=stats)
