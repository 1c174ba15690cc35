"""Fits of the trend-cycle model to a set of series under every algorithm."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from typing import Iterable, List, Mapping, Optional

import numpy as np
import pandas as pd

from nu_sampler.model import Algorithm
from nu_sampler.trendcycle.gibbs import SeriesFit, TrendCyclePrior, fit_series
from nu_sampler.trendcycle.np_series import DISPLAY_NAMES, NPSeries
from nu_sampler.utils.errors import ConfigError
from nu_sampler.utils.numerics import RandomStream
from nu_sampler.utils.parameters import ApplicationParameters

logger = logging.getLogger(__name__)

SUMMARY_COLUMNS = [
    "series",
    "name",
    "median_nu",
    "q10",
    "q90",
    "rne_sa",
    "rne_aa",
    "rne_asis",
    "aa_sa_ratio",
]


def fit_stream(seed: int, name: str, algorithm: Algorithm) -> RandomStream:
    return RandomStream.derived(seed, "app", name, algorithm.value)


def _fit_job(job):
    series, algorithm, params = job
    return fit_series(
        series,
        algorithm,
        params.iterations,
        params.burn_in,
        fit_stream(params.seed, series.name, algorithm),
        TrendCyclePrior(nu_rate=params.nu_rate),
        params.k_aa,
    )


def fit_all(
    series: Mapping[str, NPSeries],
    params: Optional[ApplicationParameters] = None,
    names: Optional[Iterable[str]] = None,
    jobs: int = 1,
) -> List[SeriesFit]:
    """Fit every requested series with every algorithm of ``params``.

    Each (series, algorithm) pair has its own derived stream, so the results do
    not depend on ``jobs``; they come back in series-major order.
    """
    params = params or ApplicationParameters()
    names = list(names if names is not None else (params.series or series))
    unknown = [name for name in names if name not in series]
    if unknown:
        raise ConfigError(
            f"unknown series {', '.join(unknown)}; available: {', '.join(sorted(series))}"
        )
    work = [(series[name], algorithm, params) for name in names for algorithm in params.algorithms]
    logger.info("fitting %d series x %d algorithms with %d jobs", len(names), len(params.algorithms), jobs)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as executor:
            return list(executor.map(_fit_job, work))
    return [_fit_job(job) for job in work]


def summarize_application(fits: Iterable[SeriesFit]) -> pd.DataFrame:
    """One row per series: nu summaries averaged over algorithms and the RNE of each.

    ``aa_sa_ratio`` is RNE(AA) / RNE(SA); above one the ancillary scheme mixes
    better on that series.
    """
    frame = pd.DataFrame([fit.record() for fit in fits])
    rows = []
    for name, group in frame.groupby("series", sort=False):
        rne = dict(zip(group["alg"], group["rne"]))
        rne_sa = rne.get("sa", np.nan)
        rne_aa = rne.get("aa", np.nan)
        rows.append(
            {
                "series": name,
                "name": DISPLAY_NAMES.get(name, name),
                "median_nu": group["median"].mean(),
                "q10": group["q10"].mean(),
                "q90": group["q90"].mean(),
                "rne_sa": rne_sa,
                "rne_aa": rne_aa,
                "rne_asis": rne.get("asis", np.nan),
                "aa_sa_ratio": rne_aa / rne_sa if rne_sa > 0 else np.nan,
            }
        )
    return pd.DataFrame(rows, columns=SUMMARY_COLUMNS)
