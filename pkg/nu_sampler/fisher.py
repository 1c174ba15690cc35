"""Expected augmented Fisher information of nu for one observation.

``I_tau`` (sufficient augmentation) has a closed form because the second
derivative of log p(nu | y, tau) does not depend on tau. ``I_u`` (ancillary
augmentation) is estimated by Monte-Carlo over u ~ p(u | y, nu) with a
Richardson second derivative per draw. The augmentation with the smaller value
is expected to mix faster; the sign change of ``I_u - I_tau`` in nu is the
break-even point.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np
import pandas as pd
from tqdm import tqdm

from nu_sampler.kernels.sweeps import draw_tau_given_nu
from nu_sampler.model import log_post_nu_given_tau, tau_cdf, tau_quantile
from nu_sampler.utils.errors import ConfigError, DomainError, FisherEstimationError
from nu_sampler.utils.numerics import RandomStream, digamma, richardson_second_derivative, trigamma

logger = logging.getLogger(__name__)

_LOG_2PI = math.log(2.0 * math.pi)
MAX_DROP_RATE = 0.01
GRID_COLUMNS = ["y", "nu", "i_u", "i_tau", "diff", "se", "dropped"]


@dataclass(frozen=True)
class FisherEstimate:
    """Fisher information value; ``L`` is 0 and ``std_error`` 0 for closed forms."""

    value: float
    std_error: float = 0.0
    L: int = 0
    dropped: int = 0


class SufficientReading(Enum):
    """Which expression stands for I_tau in the break-even comparison.

    ``DERIVED`` is the second derivative of the SA log posterior, a proper
    (positive) Fisher information. ``PRINTED`` replaces the trigamma term by the
    digamma, n (psi(nu / 2) - 1 / nu) / 2; it goes negative for small nu and is
    the expression whose crossing with I_u lies near nu = 4 for every y.
    """

    PRINTED = "printed"
    DERIVED = "derived"

    @classmethod
    def parse(cls, value) -> SufficientReading:
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            choices = ", ".join(member.value for member in cls)
            raise ConfigError(f"unknown I_tau reading {value!r}, expected one of {choices}")


DEFAULT_READING = SufficientReading.PRINTED


def _check_n(n):
    if n < 1:
        raise DomainError(f"n must be a positive integer, got {n}")


def i_tau(n: int, nu: float) -> FisherEstimate:
    _check_n(n)
    return FisherEstimate(n * (trigamma(nu / 2.0) / 2.0 - 1.0 / nu) / 2.0)


def i_tau_printed(n: int, nu: float) -> FisherEstimate:
    _check_n(n)
    return FisherEstimate(n * (digamma(nu / 2.0) - 1.0 / nu) / 2.0)


def sufficient_information(n: int, nu: float, reading=DEFAULT_READING) -> FisherEstimate:
    if SufficientReading.parse(reading) is SufficientReading.DERIVED:
        return i_tau(n, nu)
    return i_tau_printed(n, nu)


def _monte_carlo(curvature: np.ndarray, L: int, label: str) -> FisherEstimate:
    information = -curvature
    kept = np.isfinite(information)
    dropped = int(L - kept.sum())
    if dropped > MAX_DROP_RATE * L:
        raise FisherEstimationError(f"{label}: {dropped} of {L} draws failed numerical differentiation")
    if dropped:
        logger.warning("%s: dropped %d of %d draws", label, dropped, L)
    values = information[kept]
    std_error = float(values.std(ddof=1) / math.sqrt(values.size)) if values.size > 1 else math.nan
    return FisherEstimate(float(values.mean()), std_error, L, dropped)


def _draw_tau(stream, y0, nu0, L):
    if not nu0 > 0:
        raise DomainError(f"nu0 must be positive, got {nu0}")
    if L < 2:
        raise DomainError(f"L must be at least 2, got {L}")
    return draw_tau_given_nu(stream, np.full(L, float(y0)), nu0)


def estimate_i_u(stream: RandomStream, y0: float, nu0: float, L: int = 10_000) -> FisherEstimate:
    """Monte-Carlo estimate of I_u at (y0, nu0).

    The exponential prior is linear in nu and does not contribute to the second
    derivative, so the per-draw target is the normal log likelihood of ``y0``
    with variance ``F^-1(u_i; nu)``.
    """
    u = tau_cdf(_draw_tau(stream, y0, nu0, L), nu0)
    y_sq = float(y0) ** 2

    def log_targets(nu):
        tau = tau_quantile(u, nu, strict=False)
        return -0.5 * (_LOG_2PI + np.log(tau) + y_sq / tau)

    with np.errstate(invalid="ignore"):
        curvature = richardson_second_derivative(log_targets, nu0)
    return _monte_carlo(curvature, L, f"I_u(y={y0:g}, nu={nu0:g})")


def estimate_i_tau_mc(stream: RandomStream, y0: float, nu0: float, L: int = 10_000) -> FisherEstimate:
    """Monte-Carlo counterpart of ``i_tau`` for one observation, built like ``estimate_i_u``."""
    tau = _draw_tau(stream, y0, nu0, L)
    eta = 0.5 * (np.log(tau) + 1.0 / tau)
    curvature = richardson_second_derivative(lambda nu: log_post_nu_given_tau(nu, eta, 1), nu0)
    return _monte_carlo(curvature, L, f"I_tau(y={y0:g}, nu={nu0:g})")


def bep_grid(
    y_values: Sequence[float],
    nu_values: Sequence[float],
    L: int = 10_000,
    seed: int = 0,
    progress: bool = False,
    reading=DEFAULT_READING,
) -> pd.DataFrame:
    """``I_u - I_tau`` on a (y, nu) grid, one derived stream per cell.

    Only ``|y|`` enters the model, so negative ``y`` reuse the cell of ``-y``.
    ``reading`` selects the I_tau expression (see ``SufficientReading``); the
    I_u estimates do not depend on it.
    """
    reading = SufficientReading.parse(reading)
    rows = []
    cells = [(abs(float(y)), float(nu)) for y in y_values for nu in nu_values]
    for y, nu in tqdm(cells, disable=not progress, desc="fisher grid"):
        stream = RandomStream.derived(seed, "fisher", y, nu)
        ancillary = estimate_i_u(stream, y, nu, L)
        sufficient = sufficient_information(1, nu, reading).value
        rows.append(
            {
                "y": y,
                "nu": nu,
                "i_u": ancillary.value,
                "i_tau": sufficient,
                "diff": ancillary.value - sufficient,
                "se": ancillary.std_error,
                "dropped": ancillary.dropped,
            }
        )
        logger.debug("cell y=%g nu=%g: I_u - I_tau = %.4g", y, nu, rows[-1]["diff"])
    return pd.DataFrame(rows, columns=GRID_COLUMNS)


def bep_curve(grid: pd.DataFrame) -> pd.DataFrame:
    """First sign change of ``diff`` along nu for each y, interpolated linearly in log(nu)."""
    records = []
    for y, column in grid.sort_values(["y", "nu"]).groupby("y", sort=True):
        nu = column["nu"].to_numpy()
        diff = column["diff"].to_numpy()
        crossing = math.nan
        for index in range(nu.size - 1):
            left, right = diff[index], diff[index + 1]
            if left == 0:
                crossing = nu[index]
                break
            if left * right < 0:
                weight = left / (left - right)
                crossing = math.exp(
                    math.log(nu[index]) + weight * (math.log(nu[index + 1]) - math.log(nu[index]))
                )
                break
        records.append({"y": y, "nu_bep": crossing})
    return pd.DataFrame(records, columns=["y", "nu_bep"])
