"""
Log ingestion and Data Frame construction.

Raw logs are parsed into a `LogTable`, a dense (region, item, day, indicator)
 cube where unlogged (date, item, region) combinations are all-zero vectors.
 Brand, category, supplier and region aggregates are sums over that cube, and
 a Data Frame stacks the item, brand, category, [supplier,] region matrices of
 one (item, region, end point).
"""
import collections.abc
import datetime
import enum
import logging
import math
import re
import typing as ty
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import pandas as pd
from numpy.lib.stride_tricks import sliding_window_view

from sfcnn.errors import (
    ConfigError,
    InsufficientHistoryError,
    LogParseError,
    NoSamplesError,
    ShapeMismatchError,
    UnknownKeyError,
    WindowOutOfRangeError,
)

logger = logging.getLogger(__name__)

KEY_COLUMNS = ["date", "item_id", "region_id"]
ATTRIBUTE_COLUMNS = ["item_id", "brand_id", "category_id", "supplier_id"]
DATE_FORMAT = "%Y-%m-%d"
STD_FLOOR = 1e-8

_IDENTIFIER_RE = re.compile(r"^[A-Za-z0-9_]+$")


class Level(enum.Enum):
    ITEM = "item"
    BRAND = "brand"
    CATEGORY = "category"
    SUPPLIER = "supplier"
    REGION = "region"

    def __str__(self) -> str:
        return self.value


DEFAULT_SLOTS = (Level.ITEM, Level.BRAND, Level.CATEGORY, Level.REGION)
SUPPLIER_SLOTS = (Level.ITEM, Level.BRAND, Level.CATEGORY, Level.SUPPLIER, Level.REGION)


def slot_levels(include_supplier: bool) -> ty.Tuple[Level, ...]:
    return SUPPLIER_SLOTS if include_supplier else DEFAULT_SLOTS


@dataclass(frozen=True)
class LogRecord:
    date: datetime.date
    item_id: str
    region_id: str
    indicators: ty.Tuple[float, ...]


@dataclass(frozen=True)
class ItemAttributes:
    item_id: str
    brand_id: str
    category_id: str
    supplier_id: str

    def key(self, level: Level) -> str:
        return {
            Level.ITEM: self.item_id,
            Level.BRAND: self.brand_id,
            Level.CATEGORY: self.category_id,
            Level.SUPPLIER: self.supplier_id,
        }[level]


class LogTable:
    """
    Validated, deduplicated logs plus item attributes.

    Days are integer indices: day 0 is the first logged date. Records are kept
     sorted by (region, item, date) so every derived structure is independent of
     the input row order.
    """

    def __init__(
        self,
        logs: pd.DataFrame,
        attributes: ty.Dict[str, ItemAttributes],
        indicator_names: ty.Sequence[str],
    ) -> None:
        self.indicator_names: ty.List[str] = list(indicator_names)
        if len(self.indicator_names) < 1:
            raise ConfigError("At least one indicator is required")
        self.attributes = attributes
        self.logs = logs.sort_values(["region_id", "item_id", "date"]).reset_index(drop=True)

        if len(self.logs) > 0:
            self.first_date: ty.Optional[datetime.date] = self.logs["date"].min().date()
            self.last_date: ty.Optional[datetime.date] = self.logs["date"].max().date()
        else:
            self.first_date = self.last_date = None

        self.item_ids: ty.List[str] = sorted(self.logs["item_id"].unique())
        self.region_ids: ty.List[str] = sorted(self.logs["region_id"].unique())
        self._item_index = {item: i for i, item in enumerate(self.item_ids)}
        self._region_index = {region: r for r, region in enumerate(self.region_ids)}
        self._level_cubes: ty.Dict[Level, np.ndarray] = {}
        self._key_positions: ty.Dict[Level, ty.Dict[str, int]] = {}

    def __len__(self) -> int:
        return len(self.logs)

    @property
    def d(self) -> int:
        return len(self.indicator_names)

    @property
    def num_days(self) -> int:
        if self.first_date is None:
            return 0
        return (self.last_date - self.first_date).days + 1

    @property
    def date_range(self) -> ty.Optional[ty.Tuple[int, int]]:
        """First and last day index, or None for an empty table."""
        if self.first_date is None:
            return None
        return 0, self.num_days - 1

    @property
    def records(self) -> ty.Iterator[LogRecord]:
        values = self.logs[self.indicator_names].to_numpy(dtype=np.float64)
        for row, indicators in zip(self.logs.itertuples(index=False), values):
            yield LogRecord(
                date=row.date.date(),
                item_id=row.item_id,
                region_id=row.region_id,
                indicators=tuple(indicators),
            )

    def day_index(self, date: ty.Union[str, datetime.date]) -> int:
        if self.first_date is None:
            raise InsufficientHistoryError("The log table is empty")
        if isinstance(date, str):
            date = datetime.datetime.strptime(date, DATE_FORMAT).date()
        return (date - self.first_date).days

    def date_of(self, day: int) -> datetime.date:
        if self.first_date is None:
            raise InsufficientHistoryError("The log table is empty")
        return self.first_date + datetime.timedelta(days=int(day))

    def region_position(self, region_id: str) -> int:
        try:
            return self._region_index[region_id]
        except KeyError:
            raise UnknownKeyError(f"Unknown region: {region_id!r}") from None

    def item_position(self, item_id: str) -> int:
        try:
            return self._item_index[item_id]
        except KeyError:
            raise UnknownKeyError(f"Item without records: {item_id!r}") from None

    @cached_property
    def cube(self) -> np.ndarray:
        """Dense (region, item, day, indicator) array; missing rows are zeros."""
        cube = np.zeros(
            (len(self.region_ids), len(self.item_ids), self.num_days, self.d),
            dtype=np.float64,
        )
        if len(self.logs) == 0:
            return cube
        regions = self.logs["region_id"].map(self._region_index).to_numpy()
        items = self.logs["item_id"].map(self._item_index).to_numpy()
        days = (self.logs["date"] - pd.Timestamp(self.first_date)).dt.days.to_numpy()
        cube[regions, items, days] = self.logs[self.indicator_names].to_numpy(dtype=np.float64)
        return cube

    def level_keys(self, level: Level) -> ty.List[str]:
        if level == Level.REGION:
            return list(self.region_ids)
        return sorted({self.attributes[item].key(level) for item in self.item_ids})

    def key_position(self, level: Level, key: str) -> int:
        """Position of `key` on the second axis of `level_cube(level)`."""
        if level == Level.REGION:
            self.region_position(key)
            return 0
        if level == Level.ITEM:
            return self.item_position(key)
        try:
            return self._level_positions(level)[key]
        except KeyError:
            raise UnknownKeyError(f"Unknown {level} key: {key!r}") from None

    def item_key(self, item_id: str, level: Level) -> str:
        """The item's own key at `level` (its brand, category, ...)."""
        if level == Level.REGION:
            raise ValueError("Region key depends on the region, not on the item")
        if item_id not in self.attributes:
            raise UnknownKeyError(f"Item without attributes: {item_id!r}")
        return self.attributes[item_id].key(level)

    def _level_positions(self, level: Level) -> ty.Dict[str, int]:
        if level not in self._key_positions:
            self._key_positions[level] = {
                key: k for k, key in enumerate(self.level_keys(level))
            }
        return self._key_positions[level]

    def level_cube(self, level: Level) -> np.ndarray:
        """
        Aggregated (region, key, day, indicator) cube for `level`.

        Item level is the raw cube; region level has a single key per region.
        """
        if level not in self._level_cubes:
            self._level_cubes[level] = self._build_level_cube(level)
        return self._level_cubes[level]

    def _build_level_cube(self, level: Level) -> np.ndarray:
        cube = self.cube
        if level == Level.ITEM:
            return cube
        if level == Level.REGION:
            return cube.sum(axis=1, keepdims=True)
        keys = self.level_keys(level)
        item_keys = np.array([self.attributes[item].key(level) for item in self.item_ids])
        result = np.zeros((cube.shape[0], len(keys), cube.shape[2], cube.shape[3]))
        for k, key in enumerate(keys):
            result[:, k] = cube[:, item_keys == key].sum(axis=1)
        return result


@dataclass
class IndicatorMatrix:
    values: np.ndarray  # d x T
    level: Level
    key: str

    @property
    def shape(self) -> ty.Tuple[int, int]:
        return self.values.shape


@dataclass
class DataFrame:
    """Stack of indicator matrices for one (item, region, end point)."""

    slots: ty.List[IndicatorMatrix]
    item_id: str
    region_id: str
    end_point: int

    def __post_init__(self) -> None:
        shapes = {slot.shape for slot in self.slots}
        if len(shapes) != 1:
            raise ShapeMismatchError(f"Data Frame slots differ in shape: {shapes}")

    @property
    def slot_levels(self) -> ty.Tuple[Level, ...]:
        return tuple(slot.level for slot in self.slots)

    @property
    def values(self) -> np.ndarray:
        """(num_slots, d, T) array in slot order."""
        return np.stack([slot.values for slot in self.slots])


@dataclass
class NormStats:
    """Per (slot, indicator row) z-score statistics."""

    slot_levels: ty.Tuple[Level, ...]
    mean: np.ndarray  # (num_slots, d)
    std: np.ndarray  # (num_slots, d)

    def __post_init__(self) -> None:
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        expected = (len(self.slot_levels), self.mean.shape[-1])
        if self.mean.shape != expected or self.std.shape != expected:
            raise ShapeMismatchError(
                f"Norm stats must be {expected}, got {self.mean.shape} / {self.std.shape}"
            )
        if np.any(self.std < 0):
            raise ValueError("Standard deviations must be non-negative")

    @property
    def include_supplier(self) -> bool:
        return Level.SUPPLIER in self.slot_levels

    @property
    def d(self) -> int:
        return self.mean.shape[1]

    def to_dict(self) -> dict:
        return {
            "slot_levels": [level.value for level in self.slot_levels],
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "NormStats":
        return cls(
            slot_levels=tuple(Level(level) for level in data["slot_levels"]),
            mean=np.array(data["mean"], dtype=np.float64),
            std=np.array(data["std"], dtype=np.float64),
        )


def _zscore(values: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    """(x - mean) / std with rows whose std is below the floor mapped to 0."""
    safe = std >= STD_FLOOR
    scale = np.where(safe, std, 1.0)
    return np.where(safe, (values - mean) / scale, 0.0)


def _parse_error_line(message: str) -> ty.Optional[int]:
    match = re.search(r"line (\d+)", message)
    return int(match.group(1)) if match else None


def _read_csv(stream: ty.TextIO, what: str) -> pd.DataFrame:
    try:
        return pd.read_csv(stream, dtype=str, keep_default_na=False, na_filter=False)
    except pd.errors.EmptyDataError:
        raise LogParseError(f"{what}: missing header", line=1) from None
    except pd.errors.ParserError as exc:
        raise LogParseError(f"{what}: malformed row", line=_parse_error_line(str(exc))) from exc


def _check_identifiers(frame: pd.DataFrame, columns: ty.List[str], what: str) -> None:
    for column in columns:
        bad = ~frame[column].fillna("").astype(str).str.match(_IDENTIFIER_RE)
        if bad.any():
            row = int(np.flatnonzero(bad.to_numpy())[0])
            raise LogParseError(f"{what}: malformed identifier", line=row + 2, column=column)


def _parse_attributes(attr_stream: ty.TextIO) -> ty.Dict[str, ItemAttributes]:
    raw = _read_csv(attr_stream, "items.csv")
    if list(raw.columns) != ATTRIBUTE_COLUMNS:
        raise LogParseError(
            f"items.csv: expected header {','.join(ATTRIBUTE_COLUMNS)}, got {','.join(raw.columns)}",
            line=1,
        )
    _check_identifiers(raw, ATTRIBUTE_COLUMNS, "items.csv")
    duplicated = raw["item_id"].duplicated()
    if duplicated.any():
        row = int(np.flatnonzero(duplicated.to_numpy())[0])
        raise LogParseError("items.csv: duplicate item", line=row + 2, column="item_id")
    return {
        row.item_id: ItemAttributes(
            item_id=row.item_id,
            brand_id=row.brand_id,
            category_id=row.category_id,
            supplier_id=row.supplier_id,
        )
        for row in raw.itertuples(index=False)
    }


def parse_logs(
    log_stream: ty.TextIO,
    attr_stream: ty.TextIO,
    indicator_names: ty.Optional[ty.Sequence[str]] = None,
) -> LogTable:
    """
    Parse logs.csv and items.csv streams into a validated `LogTable`.

    :param indicator_names: expected indicator columns in order; by default the
        trailing header columns are taken as-is. Sales must be the first one.
    """
    attributes = _parse_attributes(attr_stream)
    raw = _read_csv(log_stream, "logs.csv")

    header = list(raw.columns)
    if indicator_names is None:
        indicator_names = header[len(KEY_COLUMNS) :]
    expected = KEY_COLUMNS + list(indicator_names)
    if header != expected:
        raise LogParseError(
            f"logs.csv: expected header {','.join(expected)}, got {','.join(header)}",
            line=1,
        )
    if len(indicator_names) < 1:
        raise LogParseError("logs.csv: no indicator columns", line=1)

    # Rows with missing trailing fields
    missing = raw.isna().any(axis=1).to_numpy()
    if missing.any():
        raise LogParseError("logs.csv: malformed row", line=int(np.flatnonzero(missing)[0]) + 2)

    _check_identifiers(raw, ["item_id", "region_id"], "logs.csv")

    dates = pd.to_datetime(raw["date"], format=DATE_FORMAT, errors="coerce")
    if dates.isna().any():
        row = int(np.flatnonzero(dates.isna().to_numpy())[0])
        raise LogParseError("logs.csv: malformed date", line=row + 2, column="date")

    logs = pd.DataFrame({"date": dates, "item_id": raw["item_id"], "region_id": raw["region_id"]})
    for name in indicator_names:
        values = pd.to_numeric(raw[name], errors="coerce").to_numpy(dtype=np.float64)
        bad = ~np.isfinite(values)
        if bad.any():
            raise LogParseError(
                "logs.csv: non-numeric or non-finite value",
                line=int(np.flatnonzero(bad)[0]) + 2,
                column=name,
            )
        logs[name] = values

    duplicated = logs.duplicated(KEY_COLUMNS).to_numpy()
    if duplicated.any():
        raise LogParseError(
            "logs.csv: duplicate (date, item_id, region_id)",
            line=int(np.flatnonzero(duplicated)[0]) + 2,
        )

    unknown = ~logs["item_id"].isin(attributes.keys()).to_numpy()
    if unknown.any():
        row = int(np.flatnonzero(unknown)[0])
        raise LogParseError(
            f"logs.csv: item {logs['item_id'].iloc[row]!r} has no attribute row",
            line=row + 2,
            column="item_id",
        )

    table = LogTable(logs=logs, attributes=attributes, indicator_names=indicator_names)
    logger.info(
        f"Parsed {len(table)} records: {len(table.item_ids)} items,"
        f" {len(table.region_ids)} regions, {table.num_days} days, d={table.d}"
    )
    return table


def read_log_files(
    logs_path: str, items_path: str, indicator_names: ty.Optional[ty.Sequence[str]] = None
) -> LogTable:
    with open(logs_path, encoding="utf-8") as log_fd, open(items_path, encoding="utf-8") as attr_fd:
        return parse_logs(log_fd, attr_fd, indicator_names)


def _check_window(table: LogTable, window: ty.Tuple[int, int]) -> None:
    t0, t1 = window
    if table.date_range is None:
        raise InsufficientHistoryError("The log table is empty")
    first, last = table.date_range
    if t1 < t0:
        raise WindowOutOfRangeError(f"Empty window {window}")
    if t0 < first or t1 > last:
        raise WindowOutOfRangeError(f"Window {window} lies outside days [{first}, {last}]")


def aggregate(
    table: LogTable,
    level: ty.Union[Level, str],
    region_id: str,
    key: ty.Optional[str],
    window: ty.Tuple[int, int],
) -> IndicatorMatrix:
    """
    Level aggregate over the inclusive day window [t0, t1].

    Column t is the element-wise sum of the item vectors in `region_id` whose
     attribute at `level` equals `key` (every item of the region for the region
     level, where `key` may be None or the region id itself).
    """
    level = Level(level)
    _check_window(table, window)
    t0, t1 = window
    if level == Level.REGION:
        key = region_id if key is None else key
        if key != region_id:
            raise UnknownKeyError(f"Region key {key!r} != region {region_id!r}")
    r = table.region_position(region_id)
    k = table.key_position(level, key)
    values = table.level_cube(level)[r, k, t0 : t1 + 1, :].T.copy()
    return IndicatorMatrix(values=values, level=level, key=key)


def build_frame(
    table: LogTable,
    item_id: str,
    region_id: str,
    end_point: int,
    T: int,
    include_supplier: bool = False,
) -> DataFrame:
    if T < 1:
        raise ConfigError(f"Data Frame length must be >= 1, got {T=}")
    window = (end_point - T + 1, end_point)
    if table.date_range is None or window[0] < 0 or window[1] > table.date_range[1]:
        raise InsufficientHistoryError(
            f"Not enough history for {item_id}@{region_id}: window {window},"
            f" available {table.date_range}"
        )
    slots = []
    for level in slot_levels(include_supplier):
        key = region_id if level == Level.REGION else table.item_key(item_id, level)
        slots.append(aggregate(table, level, region_id, key, window))
    return DataFrame(slots=slots, item_id=item_id, region_id=region_id, end_point=end_point)


def fit_norm(frames: ty.Iterable[DataFrame]) -> NormStats:
    """Two-pass population mean / std per (slot, indicator row) over all frames."""
    if not isinstance(frames, collections.abc.Sequence):
        frames = list(frames)
    if len(frames) == 0:
        raise NoSamplesError("Can not fit normalization on an empty frame collection")

    levels = frames[0].slot_levels
    total = None
    count = 0
    for frame in frames:
        if frame.slot_levels != levels:
            raise ShapeMismatchError(f"Mixed slot layouts: {levels} vs {frame.slot_levels}")
        values = frame.values
        total = values.sum(axis=-1) if total is None else total + values.sum(axis=-1)
        count += values.shape[-1]
    mean = total / count

    squares = np.zeros_like(mean)
    for frame in frames:
        squares += ((frame.values - mean[..., None]) ** 2).sum(axis=-1)
    std = np.sqrt(squares / count)

    return NormStats(slot_levels=levels, mean=mean, std=std)


def apply_norm(frame: DataFrame, stats: NormStats) -> DataFrame:
    if frame.slot_levels != stats.slot_levels or frame.slots[0].shape[0] != stats.d:
        raise ShapeMismatchError(
            f"Frame layout {frame.slot_levels} x d={frame.slots[0].shape[0]} does not match"
            f" stats {stats.slot_levels} x d={stats.d}"
        )
    slots = [
        IndicatorMatrix(
            values=_zscore(slot.values, stats.mean[k][:, None], stats.std[k][:, None]),
            level=slot.level,
            key=slot.key,
        )
        for k, slot in enumerate(frame.slots)
    ]
    return DataFrame(
        slots=slots, item_id=frame.item_id, region_id=frame.region_id, end_point=frame.end_point
    )


def sample_weight(end_point: int, horizon: int, forecast_start: int, beta: float) -> float:
    """Exponential decay e^(beta * (end_point + horizon - forecast_start))."""
    offset = end_point + horizon - forecast_start
    if offset > 0:
        raise WindowOutOfRangeError(
            f"End point {end_point} overlaps the target interval starting at {forecast_start}"
            f" (need end_point <= {forecast_start - horizon})"
        )
    return math.exp(beta * offset)


def enumerate_end_points(
    table: LogTable, T: int, horizon: int, stride: int, forecast_start: int
) -> ty.List[int]:
    """Admissible training end points, descending from forecast_start - horizon."""
    if stride < 1:
        raise ConfigError(f"Stride must be >= 1, got {stride=}")
    if horizon < 1:
        raise ConfigError(f"Horizon must be >= 1, got {horizon=}")
    if table.date_range is None:
        return []
    last_day = table.date_range[1]
    end_points = []
    end_point = forecast_start - horizon
    while end_point - T + 1 >= 0:
        if end_point + horizon <= last_day:
            end_points.append(end_point)
        end_point -= stride
    return end_points


class FrameSequence(collections.abc.Sequence):
    """Lazy sequence of raw Data Frames for a list of (item, region, end point) keys."""

    def __init__(
        self,
        table: LogTable,
        keys: ty.Sequence[ty.Tuple[str, str, int]],
        T: int,
        include_supplier: bool = False,
    ) -> None:
        self.table = table
        self.keys = list(keys)
        self.T = T
        self.include_supplier = include_supplier

    def __len__(self) -> int:
        return len(self.keys)

    def __getitem__(self, index):
        if isinstance(index, slice):
            return [self[i] for i in range(*index.indices(len(self)))]
        item_id, region_id, end_point = self.keys[index]
        return build_frame(
            self.table, item_id, region_id, end_point, self.T, self.include_supplier
        )


def training_keys(
    table: LogTable, T: int, horizon: int, stride: int, forecast_start: int
) -> ty.List[ty.Tuple[str, str, int]]:
    """(item, region, end point) of every training sample, in sample order."""
    end_points = enumerate_end_points(table, T, horizon, stride, forecast_start)
    return [
        (item_id, region_id, end_point)
        for region_id in table.region_ids
        for item_id in table.item_ids
        for end_point in end_points
    ]


class FrameSource:
    """
    Normalized Data Frames served from precomputed per-level cubes.

    `frame()` goes through `build_frame` + `apply_norm`; `stack()` gathers the
     same values for a whole batch from sliding-window views without copying
     the per-sample history.
    """

    def __init__(self, table: LogTable, T: int, stats: NormStats) -> None:
        if stats.d != table.d:
            raise ShapeMismatchError(f"Norm stats have d={stats.d}, logs have d={table.d}")
        self.table = table
        self.T = T
        self.stats = stats
        self.levels = stats.slot_levels
        self._windows = []
        for k, level in enumerate(self.levels):
            normalized = _zscore(table.level_cube(level), stats.mean[k], stats.std[k])
            # (region, key, start day, d, T)
            self._windows.append(sliding_window_view(normalized, T, axis=2))

    def frame(self, item_id: str, region_id: str, end_point: int) -> DataFrame:
        raw = build_frame(
            self.table, item_id, region_id, end_point, self.T, self.stats.include_supplier
        )
        return apply_norm(raw, self.stats)

    def stack(self, samples: ty.Sequence["Sample"]) -> np.ndarray:
        """(B, num_slots, d, T) batch tensor for samples drawn from this source."""
        regions = np.array([self.table.region_position(s.region_id) for s in samples])
        starts = np.array([s.end_point - self.T + 1 for s in samples])
        slots = []
        for level, windows in zip(self.levels, self._windows):
            if level == Level.REGION:
                keys = np.zeros(len(samples), dtype=int)
            elif level == Level.ITEM:
                keys = np.array([self.table.item_position(s.item_id) for s in samples])
            else:
                keys = np.array(
                    [
                        self.table.key_position(level, self.table.item_key(s.item_id, level))
                        for s in samples
                    ]
                )
            slots.append(windows[regions, keys, starts])
        return np.stack(slots, axis=1)


@dataclass
class Sample:
    source: FrameSource = field(repr=False)
    item_id: str
    region_id: str
    end_point: int
    target: ty.Optional[float]
    weight: float

    @property
    def frame(self) -> DataFrame:
        return self.source.frame(self.item_id, self.region_id, self.end_point)


def stack_frames(samples: ty.Sequence[Sample]) -> np.ndarray:
    """Batch tensor for arbitrary samples, gathering per source when they share one."""
    if len(samples) == 0:
        raise NoSamplesError("Can not stack an empty batch")
    source = samples[0].source
    if all(sample.source is source for sample in samples):
        return source.stack(samples)
    return np.stack([sample.frame.values for sample in samples])


def _target(table: LogTable, item_id: str, region_id: str, end_point: int, horizon: int) -> float:
    r = table.region_position(region_id)
    i = table.item_position(item_id)
    return float(table.cube[r, i, end_point + 1 : end_point + horizon + 1, 0].sum())


def make_samples(
    table: LogTable,
    T: int,
    horizon: int,
    stride: int,
    forecast_start: int,
    beta: float,
    stats: NormStats,
) -> ty.Dict[str, ty.List[Sample]]:
    """
    Weighted training samples grouped by region (regions and items in sorted
     order, end points descending).
    """
    end_points = enumerate_end_points(table, T, horizon, stride, forecast_start)
    if not end_points or not table.item_ids:
        raise NoSamplesError(
            f"No admissible end point for {T=}, {horizon=}, {forecast_start=}"
            f" over days {table.date_range}"
        )
    source = FrameSource(table, T, stats)
    samples: ty.Dict[str, ty.List[Sample]] = {}
    for region_id in table.region_ids:
        region_samples = samples.setdefault(region_id, [])
        for item_id in table.item_ids:
            for end_point in end_points:
                region_samples.append(
                    Sample(
                        source=source,
                        item_id=item_id,
                        region_id=region_id,
                        end_point=end_point,
                        target=_target(table, item_id, region_id, end_point, horizon),
                        weight=sample_weight(end_point, horizon, forecast_start, beta),
                    )
                )
    logger.info(
        f"Built {sum(len(it) for it in samples.values())} samples over"
        f" {len(end_points)} end points and {len(samples)} regions"
    )
    return samples


def make_eval_samples(
    table: LogTable, T: int, horizon: int, forecast_start: int, stats: NormStats
) -> ty.Dict[str, ty.List[Sample]]:
    """
    One sample per (item, region) whose frame ends the day before `forecast_start`.

    `target` is None when the horizon window extends past the logged days.
    """
    end_point = forecast_start - 1
    if table.date_range is None or end_point - T + 1 < 0 or end_point > table.date_range[1]:
        raise InsufficientHistoryError(
            f"Need {T} days of history before day {forecast_start}, have {table.date_range}"
        )
    has_target = forecast_start + horizon - 1 <= table.date_range[1]
    source = FrameSource(table, T, stats)
    return {
        region_id: [
            Sample(
                source=source,
                item_id=item_id,
                region_id=region_id,
                end_point=end_point,
                target=_target(table, item_id, region_id, end_point, horizon)
                if has_target
                else None,
                weight=1.0,
            )
            for item_id in table.item_ids
        ]
        for region_id in table.region_ids
    }


def sales_history(table: LogTable, item_id: str, region_id: str, end: int) -> np.ndarray:
    """Raw daily sales of (item, region) over days [0, end]."""
    r = table.region_position(region_id)
    i = table.item_position(item_id)
    return table.cube[r, i, : end + 1, 0].copy()
