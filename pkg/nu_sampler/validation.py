"""Correctness harnesses for the samplers.

``geweke_joint_test`` runs the successive-conditional simulator: one sweep of
the sampler given the current data, then fresh data given the current nu. A
correct sampler leaves the joint law of (nu, y) invariant, so the nu sample must
follow the prior. ``conditional_quantile_check`` compares the draws of a single
conditional update with its quantile function.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional

import numpy as np
import pandas as pd
from scipy import stats
from tqdm import tqdm

from nu_sampler.kernels import sweeps
from nu_sampler.kernels.adaptive_metropolis import AMTuning
from nu_sampler.model import (
    Algorithm,
    AugmentedState,
    NuPrior,
    ObservationSet,
    simulate_observations,
)
from nu_sampler.trendcycle import gibbs
from nu_sampler.utils.errors import DomainError, NumericFailure, NuSamplerError
from nu_sampler.utils.numerics import RandomStream

logger = logging.getLogger(__name__)

KS_LEVEL = 0.01
DEFAULT_THIN = 20
QQ_POINTS = 200
# simulated data beyond this magnitude square to inf and are redrawn
MAX_ABS_OBSERVATION = 1e150
MAX_REDRAWS = 1_000


@dataclass
class GewekeReport:
    """Outcome of a joint-distribution test.

    ``ks_statistic`` and ``ks_pvalue`` are computed on ``sample[::thin]``;
    ``qq_points`` holds sorted (theoretical, empirical) quantile pairs of the
    whole sample. ``error`` is set when the sampler raised before ``M`` sweeps,
    in which case the statistics cover the completed sweeps only.
    """

    label: str
    sample: np.ndarray
    qq_points: np.ndarray
    ks_statistic: float
    ks_pvalue: float
    thin: int
    passed: bool
    error: Optional[str] = None
    extras: dict = field(default_factory=dict)

    def qq_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.qq_points, columns=["theoretical", "empirical"])

    def to_record(self) -> dict:
        record = {
            "label": self.label,
            "M": int(self.sample.size),
            "thin": self.thin,
            "ks_statistic": self.ks_statistic,
            "ks_pvalue": self.ks_pvalue,
            "pass": self.passed,
            "error": self.error,
            "sample_mean": float(self.sample.mean()) if self.sample.size else math.nan,
        }
        record.update(self.extras)
        return record


@dataclass(frozen=True)
class QuantileCheckReport:
    statistic: float
    threshold: float
    K: int
    passed: bool


def _marginal_report(label, sample, reference, thin, error=None, extras=None) -> GewekeReport:
    """KS test of ``sample[::thin]`` against the frozen scipy distribution ``reference``."""
    thinned = sample[::thin]
    if thinned.size >= 8:
        result = stats.kstest(thinned, reference.cdf)
        statistic, pvalue = float(result.statistic), float(result.pvalue)
    else:
        statistic, pvalue = math.nan, math.nan
    if sample.size:
        probs = (np.arange(QQ_POINTS) + 0.5) / QQ_POINTS
        qq = np.column_stack([reference.ppf(probs), np.quantile(sample, probs)])
    else:
        qq = np.empty((0, 2))
    passed = error is None and pvalue > KS_LEVEL
    log = logger.info if passed else logger.warning
    log("%s: KS statistic %.4f, p-value %.4g on %d thinned draws", label, statistic, pvalue, thinned.size)
    return GewekeReport(label, sample, qq, statistic, pvalue, thin, passed, error, dict(extras or {}))


def geweke_joint_test(
    algorithm,
    n: int,
    prior: NuPrior,
    M: int,
    stream: RandomStream,
    k_aa: int = 20,
    thin: int = DEFAULT_THIN,
    jacobian: bool = True,
    progress: bool = False,
) -> GewekeReport:
    """Successive-conditional test of one sampler; the nu sample must be Exp(prior.rate).

    The Metropolis step size stays at its initial value so that the simulator
    is a time-homogeneous Markov chain.

    Args:
        algorithm (Algorithm or str): Update scheme under test.
        n (int): Length of the simulated data sets.
        prior (NuPrior): Prior on nu, also the reference distribution.
        M (int): Number of sweeps.
        stream (RandomStream): Source of every random number of the test.
        k_aa (int): Metropolis repetitions per ancillary or interweaving sweep.
        thin (int): Thinning applied before the KS test.
        jacobian (bool): False runs the sampler with the log-scale Jacobian
            removed, which must fail.
    """
    algorithm = Algorithm.parse(algorithm)
    if M < 1 or n < 0 or thin < 1:
        raise DomainError(f"invalid test size M={M}, n={n}, thin={thin}")
    label = f"geweke {algorithm.value} n={n} lambda={prior.rate:g}" + ("" if jacobian else " no-jacobian")
    logger.info("%s: M=%d, k_aa=%d, %r", label, M, k_aa, stream)

    redraws = _RedrawCounter()
    nu = float(prior.sample(stream))
    data = redraws.bounded(lambda: simulate_observations(stream, nu, n).y, ObservationSet)
    state = AugmentedState.initial(data, nu, AMTuning().freeze())
    sample = np.empty(M)
    completed = 0
    error = None
    try:
        for index in tqdm(range(M), disable=not progress, desc=label):
            state = sweeps.sweep(algorithm, state, data, prior, stream, k_aa, jacobian)
            sample[index] = state.nu
            completed = index + 1
            data = redraws.bounded(lambda: simulate_observations(stream, state.nu, n).y, ObservationSet)
    except NuSamplerError as failure:
        error = f"{type(failure).__name__} after {completed} sweeps: {failure}"
        logger.warning("%s: %s", label, error)
    reference = stats.expon(scale=prior.mean)
    extras = {
        "algorithm": algorithm.value,
        "n": n,
        "lambda": prior.rate,
        "k_aa": k_aa,
        "jacobian": jacobian,
        "redrawn_datasets": redraws.count,
    }
    return _marginal_report(label, sample[:completed], reference, thin, error, extras)


class _RedrawCounter:
    """Redraws simulated data sets that are not representable in double precision.

    At nu below about 0.02 some observations overflow; the redraw conditions the
    simulator on finite data, which leaves the rest of the nu range untouched.
    """

    def __init__(self):
        self.count = 0

    def bounded(self, simulate, wrap=lambda values: values):
        for _ in range(MAX_REDRAWS):
            try:
                values = simulate()
            except DomainError:
                values = None
            if values is not None and np.all(np.abs(values) < MAX_ABS_OBSERVATION):
                return wrap(values)
            self.count += 1
        raise NumericFailure(f"no representable data set in {MAX_REDRAWS} simulations")


def geweke_trendcycle_test(
    algorithm,
    length: int,
    M: int,
    stream: RandomStream,
    prior: Optional[gibbs.TrendCyclePrior] = None,
    sigma2: float = 1.0,
    k_aa: int = 20,
    thin: int = DEFAULT_THIN,
    progress: bool = False,
) -> Dict[str, GewekeReport]:
    """Successive-conditional test of Gibbs steps 2 to 5 with sigma2 held fixed.

    The series is resimulated after every sweep from a zero presample. The nu
    sample is tested against Exp(nu_rate) and the rho sample against
    Beta(rho_power + 1, 1).

    Returns:
        dict: reports keyed ``"nu"`` and ``"rho"``.
    """
    algorithm = Algorithm.parse(algorithm)
    prior = prior or gibbs.TrendCyclePrior()
    presample = np.zeros(gibbs.PRESAMPLE)
    n_terms = length - gibbs.PRESAMPLE
    label = f"geweke trend-cycle {algorithm.value} T={length}"
    logger.info("%s: M=%d, k_aa=%d, %r", label, M, k_aa, stream)

    redraws = _RedrawCounter()
    params = prior.sample(stream, presample[0], n_terms, sigma2)
    while not np.all(params.tau < MAX_ABS_OBSERVATION):
        params = prior.sample(stream, presample[0], n_terms, sigma2)
    y = redraws.bounded(lambda: gibbs.simulate_series(stream, params, presample, length))
    sampler = gibbs.TrendCycleSampler(
        gibbs.TrendCycleData(y), algorithm, stream, prior, params, k_aa, update_sigma2=False
    )
    sampler.freeze_adaptation()
    nu_sample = np.empty(M)
    rho_sample = np.empty(M)
    completed = 0
    error = None
    try:
        for index in tqdm(range(M), disable=not progress, desc=label):
            params = sampler.sweep()
            nu_sample[index], rho_sample[index] = params.nu, params.rho
            completed = index + 1
            y = redraws.bounded(lambda: gibbs.simulate_series(stream, params, presample, length))
            sampler.data = gibbs.TrendCycleData(y)
    except NuSamplerError as failure:
        error = f"{type(failure).__name__} after {completed} sweeps: {failure}"
        logger.warning("%s: %s", label, error)
    extras = {"algorithm": algorithm.value, "T": length, "k_aa": k_aa, "redrawn_datasets": redraws.count}
    return {
        "nu": _marginal_report(
            f"{label} nu",
            nu_sample[:completed],
            stats.expon(scale=prior.nu_prior.mean),
            thin,
            error,
            extras,
        ),
        "rho": _marginal_report(
            f"{label} rho",
            rho_sample[:completed],
            stats.beta(prior.rho_power + 1.0, 1.0),
            thin,
            error,
            extras,
        ),
    }


def conditional_quantile_check(
    draw_fn: Callable[[int], np.ndarray],
    quantile_fn: Callable[[np.ndarray], np.ndarray],
    K: int = 100_000,
    resolution: int = 1_000,
) -> QuantileCheckReport:
    """Sup distance between the empirical CDF of ``draw_fn(K)`` and the law given by ``quantile_fn``.

    The distance is evaluated at the theoretical quantiles of ``resolution``
    evenly spaced probabilities and compared with 1.5 times the 5% Kolmogorov
    critical value ``1.36 / sqrt(K)``.
    """
    draws = np.sort(np.asarray(draw_fn(K), dtype=float).reshape(-1))
    if draws.size != K:
        raise DomainError(f"draw_fn returned {draws.size} values, expected {K}")
    probs = np.arange(1, resolution) / resolution
    points = np.asarray(quantile_fn(probs), dtype=float)
    empirical = np.searchsorted(draws, points, side="right") / K
    statistic = float(np.max(np.abs(empirical - probs)))
    threshold = 1.5 * 1.36 / math.sqrt(K)
    return QuantileCheckReport(statistic, threshold, K, statistic < threshold)
