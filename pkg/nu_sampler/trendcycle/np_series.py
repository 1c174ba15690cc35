"""Annual macroeconomic series in the wide ``year,<series...>`` CSV layout.

The Nelson-Plosser data (R ``tseries::NelPlo``) exported with
``write.csv(cbind(year = time(NelPlo), NelPlo), row.names = FALSE)`` has this
layout: the series start in different years, so leading cells are empty.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, Iterable, Mapping

import numpy as np
import pandas as pd

from nu_sampler.utils.errors import DataLoadError
from nu_sampler.utils.io import FLOAT_FORMAT, _prepare

logger = logging.getLogger(__name__)

MIN_OBSERVATIONS = 6
RAW_SCALE_SERIES = ("int.rate",)

DISPLAY_NAMES = {
    "cpi": "Consumer Prices",
    "ip": "Industrial Production",
    "gnp.nom": "Nominal GNP",
    "vel": "Velocity",
    "emp": "Employment",
    "int.rate": "Interest Rate",
    "nom.wages": "Nominal Wages",
    "gnp.def": "GNP Deflator",
    "money.stock": "Money Stock",
    "gnp.real": "Real GNP",
    "stock.prices": "Stock Prices",
    "gnp.capita": "GNP per Capita",
    "real.wages": "Real Wages",
    "unemp": "Unemployment",
}


@dataclass(frozen=True)
class NPSeries:
    """One annual series; ``years`` increase by exactly one."""

    name: str
    years: np.ndarray
    values: np.ndarray
    log_transformed: bool = False

    def __post_init__(self):
        years = np.asarray(self.years, dtype=int).reshape(-1)
        values = np.asarray(self.values, dtype=float).reshape(-1)
        if years.size != values.size:
            raise DataLoadError(f"{self.name}: {years.size} years for {values.size} values")
        if years.size < MIN_OBSERVATIONS:
            raise DataLoadError(
                f"{self.name}: {years.size} usable observations, at least {MIN_OBSERVATIONS} needed"
            )
        if np.any(np.diff(years) != 1):
            raise DataLoadError(f"{self.name}: years must be consecutive and increasing")
        if not np.all(np.isfinite(values)):
            raise DataLoadError(f"{self.name}: missing or non-finite values after the first year")
        object.__setattr__(self, "years", years)
        object.__setattr__(self, "values", values)

    @property
    def display_name(self) -> str:
        return DISPLAY_NAMES.get(self.name, self.name)

    def __len__(self):
        return self.values.size


def _series_from_column(name, years, column, log_transform) -> NPSeries:
    present = np.flatnonzero(np.isfinite(column))
    if present.size == 0:
        raise DataLoadError(f"{name}: no observations")
    start = present[0]
    values = column[start:]
    if log_transform:
        if np.any(values[np.isfinite(values)] <= 0):
            raise DataLoadError(f"{name}: cannot log-transform non-positive values")
        values = np.log(values)
    return NPSeries(name, years[start:], values, log_transformed=log_transform)


def load_np_csv(
    path,
    log_transform: bool = True,
    raw_series: Iterable[str] = RAW_SCALE_SERIES,
) -> Dict[str, NPSeries]:
    """Read every series of a wide CSV, trimming each one's leading empty years.

    With ``log_transform`` every series except those named in ``raw_series`` is
    replaced by its natural logarithm.
    """
    try:
        frame = pd.read_csv(path)
    except (OSError, ValueError) as error:
        raise DataLoadError(f"cannot read series from {path}: {error}") from error
    if frame.columns.size < 2 or frame.columns[0] != "year":
        raise DataLoadError(f"{path}: header must be 'year,<series names...>'")
    years = pd.to_numeric(frame["year"], errors="coerce").to_numpy(dtype=float)
    if not np.all(np.isfinite(years)) or np.any(years != np.round(years)):
        raise DataLoadError(f"{path}: malformed year column")
    if np.any(np.diff(years) <= 0):
        raise DataLoadError(f"{path}: years are not increasing")
    years = years.astype(int)

    raw = set(raw_series)
    series = {}
    for name in frame.columns[1:]:
        column = pd.to_numeric(frame[name], errors="coerce").to_numpy(dtype=float)
        malformed = frame[name].notna().to_numpy() & ~np.isfinite(column)
        if np.any(malformed):
            raise DataLoadError(f"{name}: non-numeric entry in year {years[np.argmax(malformed)]}")
        series[name] = _series_from_column(name, years, column, log_transform and name not in raw)
    logger.info("loaded %d series from %s", len(series), path)
    return series


def write_np_csv(series: Mapping[str, NPSeries], path, original_scale: bool = True):
    """Write series in the wide layout, undoing log transforms when ``original_scale``."""
    columns = {}
    for name, item in series.items():
        values = np.exp(item.values) if original_scale and item.log_transformed else item.values
        columns[name] = pd.Series(values, index=item.years)
    frame = pd.DataFrame(columns).sort_index()
    frame.index.name = "year"
    path = _prepare(path)
    frame.to_csv(path, float_format=FLOAT_FORMAT)
    return path
