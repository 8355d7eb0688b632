import io
import logging
from unittest.mock import MagicMock

import numpy as np
import pytest

from sfcnn.ingest import LogTable, parse_logs
from sfcnn.model.architecture import Architecture
from sfcnn.synth import SynthConfig, generate


@pytest.fixture
def mock_logger():
    yield MagicMock(name="logger", spec=logging.Logger)


def make_csv(
    num_days: int = 30,
    items: tuple = ("i0", "i1", "i2"),
    regions: tuple = ("r0", "r1"),
    seed: int = 0,
) -> tuple:
    """(logs.csv, items.csv) with sales and pv for every (day, item, region)."""
    rng = np.random.default_rng(seed)
    lines = ["date,item_id,region_id,sales,pv"]
    for day in range(num_days):
        for item in items:
            for region in regions:
                sales = int(rng.integers(0, 10))
                lines.append(f"2020-01-{day + 1:02d},{item},{region},{sales},{sales * 3 + 1}")
    attributes = ["item_id,brand_id,category_id,supplier_id"]
    for n, item in enumerate(items):
        attributes.append(f"{item},b{n % 2},c0,s{n % 2}")
    return "\n".join(lines) + "\n", "\n".join(attributes) + "\n"


@pytest.fixture
def tiny_csv():
    return make_csv()


@pytest.fixture
def tiny_table(tiny_csv) -> LogTable:
    logs, items = tiny_csv
    return parse_logs(io.StringIO(logs), io.StringIO(items))


@pytest.fixture(scope="session")
def small_synth_config() -> SynthConfig:
    return SynthConfig(
        num_regions=2,
        num_items=4,
        num_brands=2,
        num_categories=2,
        num_suppliers=2,
        num_days=48,
        d=3,
        seed=1,
    )


@pytest.fixture(scope="session")
def small_synth(small_synth_config):
    return generate(small_synth_config)


@pytest.fixture
def synth_table(small_synth) -> LogTable:
    return parse_logs(io.StringIO(small_synth.logs_csv), io.StringIO(small_synth.items_csv))


@pytest.fixture
def synth_files(small_synth, tmp_path):
    logs_path = tmp_path / "logs.csv"
    items_path = tmp_path / "items.csv"
    logs_path.write_text(small_synth.logs_csv)
    items_path.write_text(small_synth.items_csv)
    return str(logs_path), str(items_path)


@pytest.fixture
def tiny_arch() -> Architecture:
    return Architecture(
        num_slots=4,
        d=3,
        T=10,
        filter_sizes=[3, 2],
        pool_sizes=[2, 2],
        maps=[2, 2],
        dense_dim=4,
        dropout_rate=0.2,
    )
