"""
Deterministic synthetic commodity logs.

Every (item, region) pair gets a base level, a weekly profile, a linear trend
 and a set of promotion days. Expected daily sales are

    base * season[day % 7] * (1 + trend * day) * lift(day)

and the logged sales are the rounded, non-negative noisy version of it. Browsing
 indicators follow sales, PAY is the item's unit price cut on promotion days and
 GMV is sales times PAY.
"""
import datetime
import io
import json
import logging
import os
import typing as ty
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from pydantic import Field, model_validator

from sfcnn.base import BaseModel
from sfcnn.errors import ConfigError, WindowOutOfRangeError
from sfcnn.ingest import ATTRIBUTE_COLUMNS, DATE_FORMAT, KEY_COLUMNS

logger = logging.getLogger(__name__)

NAMED_INDICATORS = ["sales", "pv", "spv", "uv", "suv", "pay", "gmv", "cart"]
LOGS_FILE_NAME = "logs.csv"
ITEMS_FILE_NAME = "items.csv"
TRUTH_FILE_NAME = "truth.json"
WEEK = 7


def indicator_names(d: int) -> ty.List[str]:
    """The first `d` named indicators followed by generic `ind_XX` extras."""
    return NAMED_INDICATORS[:d] + [f"ind_{i:02d}" for i in range(len(NAMED_INDICATORS), d)]


class SynthConfig(BaseModel):
    # fmt: off
    num_regions: int = Field(default=5, ge=1, description="Number of regions.")
    num_items: int = Field(default=60, ge=1, description="Number of items.")
    num_brands: int = Field(default=12, ge=1, description="Number of brands.")
    num_categories: int = Field(default=6, ge=1, description="Number of categories.")
    num_suppliers: int = Field(default=8, ge=1, description="Number of suppliers.")
    num_days: int = Field(default=240, ge=1, description="Number of logged days.")
    d: int = Field(default=8, ge=1, description="Indicators per log row, sales first.")
    noise_level: float = Field(default=0.15, ge=0, description="Relative Gaussian noise sigma.")
    promo_rate: float = Field(default=0.03, ge=0, le=1, description="Daily promotion probability.")
    seed: int = Field(default=0, ge=0, description="Generator seed.")
    start_date: str = Field(default="2017-01-01", description="Date of day 0, YYYY-MM-DD.")
    season_amplitude: float = Field(default=0.3, ge=0, le=1, description="Weekly profile spread.")
    max_trend: float = Field(default=0.002, ge=0, description="Largest absolute daily trend slope.")
    # fmt: on

    @model_validator(mode="after")
    def validate_counts(self) -> "SynthConfig":
        if self.num_items < self.num_brands:
            raise ConfigError(
                f"Need num_items >= num_brands, got {self.num_items} < {self.num_brands}"
            )
        try:
            datetime.datetime.strptime(self.start_date, DATE_FORMAT)
        except ValueError:
            raise ConfigError(f"start_date must be YYYY-MM-DD, got {self.start_date!r}") from None
        return self


@dataclass
class SeriesTruth:
    """Generative parameters of one (item, region) sales series."""

    item_id: str
    region_id: str
    base: float
    season: ty.List[float]
    trend: float
    promo_days: ty.List[int] = field(default_factory=list)
    promo_lifts: ty.List[float] = field(default_factory=list)
    promo_discounts: ty.List[float] = field(default_factory=list)

    def lift(self, num_days: int) -> np.ndarray:
        lift = np.ones(num_days)
        lift[np.asarray(self.promo_days, dtype=int)] = self.promo_lifts
        return lift

    def expected(self, num_days: int) -> np.ndarray:
        """Noiseless expected sales for days [0, num_days)."""
        days = np.arange(num_days)
        season = np.asarray(self.season)[days % WEEK]
        return self.base * season * (1 + self.trend * days) * self.lift(num_days)


@dataclass
class GroundTruth:
    start_date: str
    num_days: int
    indicator_names: ty.List[str]
    prices: ty.Dict[str, float]
    series: ty.Dict[ty.Tuple[str, str], SeriesTruth]

    def get(self, item_id: str, region_id: str) -> SeriesTruth:
        try:
            return self.series[(item_id, region_id)]
        except KeyError:
            raise WindowOutOfRangeError(f"No generated series for {item_id}@{region_id}") from None

    def to_dict(self) -> dict:
        return {
            "start_date": self.start_date,
            "num_days": self.num_days,
            "indicator_names": list(self.indicator_names),
            "prices": dict(self.prices),
            "series": [
                {
                    "item_id": it.item_id,
                    "region_id": it.region_id,
                    "base": it.base,
                    "season": list(it.season),
                    "trend": it.trend,
                    "promo_days": list(it.promo_days),
                    "promo_lifts": list(it.promo_lifts),
                    "promo_discounts": list(it.promo_discounts),
                }
                for it in self.series.values()
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GroundTruth":
        series = [SeriesTruth(**entry) for entry in data["series"]]
        return cls(
            start_date=data["start_date"],
            num_days=data["num_days"],
            indicator_names=list(data["indicator_names"]),
            prices=dict(data["prices"]),
            series={(it.item_id, it.region_id): it for it in series},
        )


@dataclass
class SynthDataset:
    logs_csv: str
    items_csv: str
    truth: GroundTruth

    @property
    def num_rows(self) -> int:
        return self.logs_csv.count("\n") - 1


def _item_ids(config: SynthConfig) -> ty.List[str]:
    return [f"item_{i:03d}" for i in range(config.num_items)]


def _region_ids(config: SynthConfig) -> ty.List[str]:
    return [f"region_{r}" for r in range(config.num_regions)]


def _attributes(config: SynthConfig) -> pd.DataFrame:
    """Round-robin brand, category and supplier assignment."""
    index = np.arange(config.num_items)
    return pd.DataFrame(
        {
            "item_id": _item_ids(config),
            "brand_id": [f"brand_{i % config.num_brands:02d}" for i in index],
            "category_id": [f"category_{i % config.num_categories:02d}" for i in index],
            "supplier_id": [f"supplier_{i % config.num_suppliers:02d}" for i in index],
        },
        columns=ATTRIBUTE_COLUMNS,
    )


def _draw_series(
    rng: np.random.Generator, config: SynthConfig, item_id: str, region_id: str
) -> SeriesTruth:
    season = 1 + config.season_amplitude * rng.uniform(-1, 1, size=WEEK)
    season = season / season.mean()
    # Keeps 1 + trend * day positive over the whole range
    lowest = min(config.max_trend, 0.5 / config.num_days)
    trend = float(rng.uniform(-lowest, config.max_trend))
    promo = np.flatnonzero(rng.random(config.num_days) < config.promo_rate)
    return SeriesTruth(
        item_id=item_id,
        region_id=region_id,
        base=float(rng.uniform(2, 30)),
        season=[float(it) for it in season],
        trend=trend,
        promo_days=[int(it) for it in promo],
        promo_lifts=[float(it) for it in rng.uniform(2, 5, size=len(promo))],
        promo_discounts=[float(it) for it in rng.uniform(0.1, 0.4, size=len(promo))],
    )


def _indicators(
    rng: np.random.Generator,
    config: SynthConfig,
    series: SeriesTruth,
    price: float,
    names: ty.List[str],
) -> np.ndarray:
    """(num_days, d) indicator rows of one (item, region) series."""
    n = config.num_days
    sigma = config.noise_level
    expected = series.expected(n)
    sales = np.round(np.maximum(0.0, expected * (1 + rng.normal(0, sigma, size=n))))

    pv = np.round(np.maximum(0.0, rng.uniform(3, 8) * sales * (1 + rng.normal(0, sigma, size=n))))
    pv = pv + rng.poisson(rng.uniform(1, 10), size=n)
    spv = rng.binomial(pv.astype(np.int64), rng.uniform(0.3, 0.6)).astype(np.float64)
    visit_rate = rng.uniform(0.4, 0.8)
    uv = rng.binomial(pv.astype(np.int64), visit_rate).astype(np.float64)
    suv = rng.binomial(spv.astype(np.int64), visit_rate).astype(np.float64)

    pay = np.full(n, price)
    promo = np.asarray(series.promo_days, dtype=int)
    pay[promo] = price * (1 - np.asarray(series.promo_discounts))
    gmv = np.maximum(0.0, sales * pay * (1 + rng.normal(0, sigma, size=n)))
    cart = sales + rng.poisson(0.5 * sales + 1)

    columns = {"sales": sales, "pv": pv, "spv": spv, "uv": uv, "suv": suv, "pay": pay, "gmv": gmv, "cart": cart}
    rows = np.empty((n, len(names)))
    for k, name in enumerate(names):
        if name in columns:
            rows[:, k] = columns[name]
        else:
            rows[:, k] = np.round(rng.uniform(0, 2) * sales) + rng.poisson(rng.uniform(0, 5), size=n)
    return rows


def generate(config: SynthConfig) -> SynthDataset:
    """logs.csv and items.csv contents plus the generative ground truth."""
    names = indicator_names(config.d)
    items = _item_ids(config)
    regions = _region_ids(config)

    item_seeds = np.random.SeedSequence(config.seed).spawn(config.num_items)
    values = np.empty((config.num_days, config.num_items, config.num_regions, config.d))
    prices: ty.Dict[str, float] = {}
    series: ty.Dict[ty.Tuple[str, str], SeriesTruth] = {}
    for i, item_id in enumerate(items):
        rng = np.random.default_rng(item_seeds[i])
        prices[item_id] = float(np.round(rng.uniform(5, 200), 2))
        for r, region_id in enumerate(regions):
            truth = _draw_series(rng, config, item_id, region_id)
            series[(item_id, region_id)] = truth
            values[:, i, r] = _indicators(rng, config, truth, prices[item_id], names)

    start = pd.Timestamp(config.start_date)
    dates = pd.date_range(start, periods=config.num_days, freq="D").strftime(DATE_FORMAT)
    grid = pd.MultiIndex.from_product([dates, items, regions], names=KEY_COLUMNS).to_frame(index=False)
    flat = values.reshape(-1, config.d)
    for k, name in enumerate(names):
        column = flat[:, k]
        grid[name] = column.astype(np.int64) if name not in ("pay", "gmv") else column

    logs_csv = grid.to_csv(index=False, lineterminator="\n")
    items_csv = _attributes(config).to_csv(index=False, lineterminator="\n")
    truth = GroundTruth(
        start_date=config.start_date,
        num_days=config.num_days,
        indicator_names=names,
        prices=prices,
        series=series,
    )
    logger.info(
        f"Generated {len(grid)} log rows: {config.num_items} items x {config.num_regions}"
        f" regions x {config.num_days} days, d={config.d}"
    )
    return SynthDataset(logs_csv=logs_csv, items_csv=items_csv, truth=truth)


def oracle_forecast(truth: GroundTruth, item_id: str, region_id: str, start: int, horizon: int) -> float:
    """Sum of the noiseless expected sales over days [start, start + horizon)."""
    if horizon < 1 or start < 0 or start + horizon > truth.num_days:
        raise WindowOutOfRangeError(
            f"Window [{start}, {start + horizon}) outside generated days [0, {truth.num_days})"
        )
    expected = truth.get(item_id, region_id).expected(truth.num_days)
    return float(expected[start : start + horizon].sum())


def write_dataset(dataset: SynthDataset, output_path: str) -> ty.Dict[str, str]:
    """Write logs.csv, items.csv and truth.json; returns their paths."""
    os.makedirs(output_path, exist_ok=True)
    paths = {
        "logs": os.path.join(output_path, LOGS_FILE_NAME),
        "items": os.path.join(output_path, ITEMS_FILE_NAME),
        "truth": os.path.join(output_path, TRUTH_FILE_NAME),
    }
    with open(paths["logs"], "w", encoding="utf-8", newline="") as fd:
        fd.write(dataset.logs_csv)
    with open(paths["items"], "w", encoding="utf-8", newline="") as fd:
        fd.write(dataset.items_csv)
    with open(paths["truth"], "w", encoding="utf-8") as fd:
        json.dump(dataset.truth.to_dict(), fd, indent=2, sort_keys=True)
    return paths


def read_truth(path: str) -> GroundTruth:
    with open(path, encoding="utf-8") as fd:
        return GroundTruth.from_dict(json.load(fd))


def logs_frame(dataset: SynthDataset) -> pd.DataFrame:
    return pd.read_csv(io.StringIO(dataset.logs_csv), float_precision="round_trip")
