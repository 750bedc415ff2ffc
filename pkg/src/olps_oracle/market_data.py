"""Loading and windowing of daily price-relative data."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class MarketDataError(ValueError):
    """Raised for malformed or invalid market data."""


@dataclass(frozen=True)
class PriceRelativeSeries:
    """T x m matrix of gross per-period returns (price_t / price_{t-1}).

    ``start`` is the 0-based day index of the first row, kept so that
    windows remember where they came from.
    """

    relatives: np.ndarray
    asset_names: tuple[str, ...]
    start: int = 0
    name: str = ""

    def __post_init__(self):
        rel = np.array(self.relatives, dtype=float)
        if rel.ndim != 2:
            raise MarketDataError("relatives must be a 2-d matrix")
        if rel.shape[0] < 1 or rel.shape[1] < 1:
            raise MarketDataError("empty price-relative matrix")
        if not np.all(np.isfinite(rel)):
            raise MarketDataError("missing or non-finite price relative")
        if np.any(rel <= 0.0):
            raise MarketDataError("non-positive price relative")
        names = tuple(self.asset_names) if self.asset_names else tuple(
            f"asset{i}" for i in range(rel.shape[1])
        )
        if len(names) != rel.shape[1]:
            raise MarketDataError(
                f"{len(names)} asset names for {rel.shape[1]} columns"
            )
        rel.setflags(write=False)
        object.__setattr__(self, "relatives", rel)
        object.__setattr__(self, "asset_names", names)

    @property
    def num_days(self) -> int:
        return self.relatives.shape[0]

    @property
    def num_assets(self) -> int:
        return self.relatives.shape[1]

    @property
    def period_index(self) -> np.ndarray:
        return np.arange(self.start, self.start + self.num_days)

    def __len__(self) -> int:
        return self.num_days

    def summary(self, time_frame: str = "") -> "DatasetSummary":
        return DatasetSummary(
            name=self.name,
            num_assets=self.num_assets,
            num_days=self.num_days,
            time_frame=time_frame,
        )


@dataclass(frozen=True)
class DatasetSummary:
    name: str
    num_assets: int
    num_days: int
    time_frame: str = field(default="")


def _parse_float(token: str, lineno: int) -> float:
    try:
        return float(token)
    except ValueError:
        raise MarketDataError(f"line {lineno}: malformed value {token!r}") from None


def load_csv(path: str | Path, name: str | None = None) -> PriceRelativeSeries:
    """Read a comma-separated table of price relatives.

    The first row is treated as a header of asset names if any of its
    cells fails to parse as a number.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        rows = [row for row in csv.reader(fh) if row and any(c.strip() for c in row)]
    if not rows:
        raise MarketDataError(f"{path}: empty file")

    header: list[str] | None = None
    first = [c.strip() for c in rows[0]]
    try:
        [float(c) for c in first]
    except ValueError:
        header = first
        rows = rows[1:]
    if not rows:
        raise MarketDataError(f"{path}: no data rows")

    width = len(header) if header is not None else len(rows[0])
    data = np.empty((len(rows), width))
    offset = 2 if header is not None else 1
    for i, row in enumerate(rows):
        if len(row) != width:
            raise MarketDataError(
                f"line {i + offset}: expected {width} columns, got {len(row)}"
            )
        for j, cell in enumerate(row):
            cell = cell.strip()
            if cell == "":
                raise MarketDataError(f"line {i + offset}: missing value")
            data[i, j] = _parse_float(cell, i + offset)

    return PriceRelativeSeries(
        data, tuple(header) if header else (), name=name or path.stem
    )


def save_csv(series: PriceRelativeSeries, path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(series.asset_names)
        for row in series.relatives:
            writer.writerow([repr(float(v)) for v in row])


def from_prices(
    prices, asset_names=(), name: str = ""
) -> PriceRelativeSeries:
    prices = np.asarray(prices, dtype=float)
    if prices.ndim == 1:
        prices = prices[:, None]
    if prices.shape[0] < 2:
        raise MarketDataError("need at least 2 price rows")
    if not np.all(np.isfinite(prices)):
        raise MarketDataError("missing or non-finite price")
    if np.any(prices <= 0.0):
        raise MarketDataError("non-positive price")
    return PriceRelativeSeries(prices[1:] / prices[:-1], asset_names, name=name)


def load_prices_csv(path: str | Path, name: str | None = None) -> PriceRelativeSeries:
    """Read raw prices in the same CSV layout and convert to relatives."""
    # positivity of prices implies positivity of relatives, so reuse the parser
    raw = load_csv(path, name)
    return from_prices(raw.relatives, raw.asset_names, name=raw.name)


def window(series: PriceRelativeSeries, start: int, length: int) -> PriceRelativeSeries:
    if start < 0 or length < 1 or start + length > series.num_days:
        raise MarketDataError(
            f"window [{start}, {start + length}) outside series of length {series.num_days}"
        )
    return PriceRelativeSeries(
        series.relatives[start : start + length],
        series.asset_names,
        start=series.start + start,
        name=series.name,
    )
