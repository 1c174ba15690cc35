"""Gibbs sampler of the AR(5) trend-cycle regression with Student-t increments.

The reduced form of the model for t >= 5 is

    y_t = gamma (1 - rho) + delta (rho - sum(a)) + delta (1 - rho) t
          + rho y_{t-1} + sum_j a_j (y_{t-j} - y_{t-j-1}) + eps_t,

with eps_t ~ N(0, sigma2 * tau_t) and 1 / tau_t ~ Gamma(nu / 2, nu / 2). The
first five observations are conditioned on and ``y[0]`` sets the prior mean of
gamma. One sweep runs the steps

    2. (gamma, delta) from a bivariate normal
    3. a from a 4-variate normal
    4. rho by rejection from a truncated normal proposal
    5. (nu, tau) with one SA, AA or ASIS update on the standardized residuals
    6. sigma2 from a scaled inverse chi-square

in that order.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import pandas as pd
from scipy import linalg, stats
from tqdm import tqdm

from nu_sampler.diagnostics import efficiency, summarize
from nu_sampler.kernels import sweeps
from nu_sampler.kernels.adaptive_metropolis import AMTuning
from nu_sampler.model import Algorithm, AugmentedState, NuPrior, ObservationSet
from nu_sampler.trendcycle.np_series import NPSeries
from nu_sampler.utils.errors import (
    DomainError,
    NuSamplerError,
    RejectionSamplingError,
    TrendCycleStepError,
)
from nu_sampler.utils.numerics import RandomStream, sample_gamma

logger = logging.getLogger(__name__)

PRESAMPLE = 5
N_LAGS = 4
# the OLS start needs one residual degree of freedom beyond its 3 + N_LAGS coefficients
MIN_SERIES_LENGTH = PRESAMPLE + N_LAGS + 4
RHO_CAP = 0.999
MAX_RHO_PROPOSALS = 10**6
DRAW_COLUMNS = ["iter", "gamma", "delta", "rho", "a1", "a2", "a3", "a4", "sigma2", "nu"]


def _default_a_variances():
    return tuple(0.731 * 0.342**j for j in range(N_LAGS))


@dataclass(frozen=True)
class TrendCyclePrior:
    """Independent priors; every spread is a variance.

    gamma ~ N(y[0], gamma_variance), delta ~ N(0, delta_variance),
    a_j ~ N(0, a_variances[j - 1]), rho ~ Beta(rho_power + 1, 1) and
    nu ~ Exp(nu_rate). sigma has the improper density 1 / sigma.
    """

    gamma_variance: float = 10.0**2
    delta_variance: float = 0.05**2
    a_variances: tuple = field(default_factory=_default_a_variances)
    rho_power: float = 4.0
    nu_rate: float = 0.333

    @property
    def nu_prior(self) -> NuPrior:
        return NuPrior(self.nu_rate)

    def sample(self, stream: RandomStream, y0: float, n_terms: int, sigma2: float) -> TrendCycleParams:
        """Draw every parameter but ``sigma2``, whose prior is improper, from the prior."""
        generator = stream.generator
        nu = float(self.nu_prior.sample(stream))
        return TrendCycleParams(
            gamma=float(generator.normal(y0, np.sqrt(self.gamma_variance))),
            delta=float(generator.normal(0.0, np.sqrt(self.delta_variance))),
            rho=float(generator.beta(self.rho_power + 1.0, 1.0)),
            a=generator.normal(0.0, np.sqrt(self.a_variances)),
            sigma2=sigma2,
            nu=nu,
            tau=1.0 / sample_gamma(stream, nu / 2.0, nu / 2.0, n_terms),
        )


@dataclass(frozen=True)
class TrendCycleParams:
    gamma: float
    delta: float
    rho: float
    a: np.ndarray
    sigma2: float
    nu: float
    tau: np.ndarray

    def __post_init__(self):
        if not 0.0 <= self.rho < 1.0:
            raise DomainError(f"rho must lie in [0, 1), got {self.rho}")
        if not self.sigma2 > 0:
            raise DomainError(f"sigma2 must be positive, got {self.sigma2}")
        if not self.nu > 0:
            raise DomainError(f"nu must be positive, got {self.nu}")
        object.__setattr__(self, "a", np.asarray(self.a, dtype=float).reshape(N_LAGS))
        object.__setattr__(self, "tau", np.asarray(self.tau, dtype=float).reshape(-1))

    def row(self) -> list:
        return [self.gamma, self.delta, self.rho, *self.a, self.sigma2, self.nu]


class TrendCycleData:
    """Regression view of a series: the modeled observations and their lags."""

    def __init__(self, values):
        y = np.asarray(values, dtype=float).reshape(-1)
        if y.size < MIN_SERIES_LENGTH:
            raise DomainError(f"series needs at least {MIN_SERIES_LENGTH} observations, got {y.size}")
        if not np.all(np.isfinite(y)):
            raise DomainError("series values must be finite")
        self.y = y
        t = np.arange(PRESAMPLE, y.size)
        self.time = t.astype(float)
        self.target = y[t]
        self.lag1 = y[t - 1]
        self.dlags = np.column_stack([y[t - j] - y[t - j - 1] for j in range(1, N_LAGS + 1)])

    @property
    def y0(self) -> float:
        return float(self.y[0])

    @property
    def n_terms(self) -> int:
        return self.target.size


def conditional_mean(y, t: int, params: TrendCycleParams) -> float:
    """m_t given the history ``y[:t]``; ``y[t]`` itself is not used."""
    y = np.asarray(y, dtype=float)
    if t < PRESAMPLE or t > y.size:
        raise DomainError(f"t must lie in [{PRESAMPLE}, {y.size}], got {t}")
    differences = np.array([y[t - j] - y[t - j - 1] for j in range(1, N_LAGS + 1)])
    rho, delta = params.rho, params.delta
    return float(
        params.gamma * (1.0 - rho)
        + delta * (rho - params.a.sum())
        + delta * (1.0 - rho) * t
        + rho * y[t - 1]
        + differences @ params.a
    )


def conditional_means(data: TrendCycleData, params: TrendCycleParams) -> np.ndarray:
    rho, delta = params.rho, params.delta
    return (
        params.gamma * (1.0 - rho)
        + delta * (rho - params.a.sum())
        + delta * (1.0 - rho) * data.time
        + rho * data.lag1
        + data.dlags @ params.a
    )


def residuals(data: TrendCycleData, params: TrendCycleParams) -> np.ndarray:
    return data.target - conditional_means(data, params)


def _weights(params: TrendCycleParams) -> np.ndarray:
    return 1.0 / (params.sigma2 * params.tau)


def _gaussian_regression(design, response, weights, prior_mean, prior_variance):
    """Posterior mean and lower Cholesky factor of the posterior precision.

    The whitened data rows are stacked on the prior rows and factored by QR, so
    the precision X'WX + diag(1 / prior_variance) is never formed.
    """
    prior_sd = np.sqrt(np.asarray(prior_variance, dtype=float))
    root_weights = np.sqrt(weights)
    stacked = np.vstack([root_weights[:, np.newaxis] * design, np.diag(1.0 / prior_sd)])
    target = np.concatenate([root_weights * response, np.asarray(prior_mean, dtype=float) / prior_sd])
    q, r = linalg.qr(stacked, mode="economic")
    signs = np.where(np.diag(r) < 0, -1.0, 1.0)
    r = signs[:, np.newaxis] * r
    mean = linalg.solve_triangular(r, signs * (q.T @ target), lower=False)
    return mean, r.T


def _draw_regression(stream, mean, factor):
    noise = stream.generator.standard_normal(mean.size)
    return mean + linalg.solve_triangular(factor.T, noise, lower=False)


def gamma_delta_conditional(data: TrendCycleData, params: TrendCycleParams, prior: TrendCyclePrior):
    """Mean and covariance of (gamma, delta) given everything else."""
    mean, factor = _gamma_delta_posterior(data, params, prior)
    return mean, linalg.cho_solve((factor, True), np.eye(2))


def _gamma_delta_posterior(data, params, prior):
    rho = params.rho
    design = np.column_stack(
        [np.full(data.n_terms, 1.0 - rho), (rho - params.a.sum()) + (1.0 - rho) * data.time]
    )
    response = data.target - rho * data.lag1 - data.dlags @ params.a
    return _gaussian_regression(
        design,
        response,
        _weights(params),
        [data.y0, 0.0],
        [prior.gamma_variance, prior.delta_variance],
    )


def draw_gamma_delta(stream: RandomStream, data: TrendCycleData, params: TrendCycleParams, prior: TrendCyclePrior):
    gamma, delta = _draw_regression(stream, *_gamma_delta_posterior(data, params, prior))
    return float(gamma), float(delta)


def _a_posterior(data, params, prior):
    rho, delta = params.rho, params.delta
    design = data.dlags - delta
    response = (
        data.target
        - params.gamma * (1.0 - rho)
        - delta * rho
        - delta * (1.0 - rho) * data.time
        - rho * data.lag1
    )
    return _gaussian_regression(design, response, _weights(params), np.zeros(N_LAGS), prior.a_variances)


def a_conditional(data: TrendCycleData, params: TrendCycleParams, prior: TrendCyclePrior):
    mean, factor = _a_posterior(data, params, prior)
    return mean, linalg.cho_solve((factor, True), np.eye(N_LAGS))


def draw_a(stream: RandomStream, data: TrendCycleData, params: TrendCycleParams, prior: TrendCyclePrior) -> np.ndarray:
    return _draw_regression(stream, *_a_posterior(data, params, prior))


def rho_likelihood(data: TrendCycleData, params: TrendCycleParams):
    """Mean and standard deviation of the Gaussian likelihood factor in rho."""
    delta = params.delta
    regressor = data.lag1 - params.gamma - delta * (data.time - 1.0)
    base = params.gamma - delta * params.a.sum() + delta * data.time + data.dlags @ params.a
    weights = _weights(params)
    precision = float(np.sum(weights * regressor**2))
    if precision <= 0:
        return 0.5, np.inf
    mean = float(np.sum(weights * regressor * (data.target - base)) / precision)
    return mean, precision**-0.5


def draw_rho(
    stream: RandomStream,
    data: TrendCycleData,
    params: TrendCycleParams,
    prior: TrendCyclePrior,
    max_proposals: int = MAX_RHO_PROPOSALS,
) -> float:
    """Exact draw from likelihood(rho) * rho^power on [0, 1).

    Proposals come from the likelihood normal truncated to [0, 1) and are
    accepted with probability rho^power.
    """
    mean, sd = rho_likelihood(data, params)
    if np.isfinite(sd):
        proposal = stats.truncnorm((0.0 - mean) / sd, (1.0 - mean) / sd, loc=mean, scale=sd)
    else:
        proposal = stats.uniform(0.0, 1.0)
    proposed = 0
    batch = 8
    while proposed < max_proposals:
        size = min(batch, max_proposals - proposed)
        candidates = proposal.rvs(size=size, random_state=stream.generator)
        log_uniform = -stream.generator.standard_exponential(size)
        with np.errstate(divide="ignore"):
            accept = (candidates < 1.0) & (log_uniform < prior.rho_power * np.log(candidates))
        hits = np.flatnonzero(accept)
        if hits.size:
            logger.debug("rho accepted after %d proposals", proposed + hits[0] + 1)
            return float(candidates[hits[0]])
        proposed += size
        batch = min(2 * batch, 4096)
    raise RejectionSamplingError(
        f"no rho accepted in {max_proposals} proposals", mean=mean, sd=sd
    )


def draw_sigma2(stream: RandomStream, data: TrendCycleData, params: TrendCycleParams) -> float:
    """sigma2 = sum(eps^2 / tau) / chi2_T, the scaled inverse chi-square with T terms."""
    scaled = float(np.sum(residuals(data, params) ** 2 / params.tau))
    return scaled / stream.generator.chisquare(data.n_terms)


def draw_nu_tau_app(
    stream: RandomStream,
    state: AugmentedState,
    eps,
    sigma2: float,
    algorithm: Algorithm,
    prior: NuPrior,
    k_aa: int = 20,
    jacobian: bool = True,
) -> AugmentedState:
    """One update of (nu, tau) on the residuals standardized by sigma."""
    standardized = ObservationSet(np.asarray(eps, dtype=float) / np.sqrt(sigma2))
    return sweeps.sweep(Algorithm.parse(algorithm), state, standardized, prior, stream, k_aa, jacobian)


def ols_initialize(data: TrendCycleData) -> TrendCycleParams:
    """Least-squares start: rho clipped to [0, 0.999], tau = 1, nu = 4."""
    design = np.column_stack([np.ones(data.n_terms), data.time, data.lag1, data.dlags])
    coefficients, *_ = linalg.lstsq(design, data.target)
    intercept, slope, rho_hat = coefficients[:3]
    a = coefficients[3:]
    rho = float(np.clip(rho_hat, 0.0, RHO_CAP))
    if rho != rho_hat:
        logger.debug("OLS rho %.4f clipped to %.4f", rho_hat, rho)
    delta = slope / (1.0 - rho)
    gamma = (intercept - delta * (rho - a.sum())) / (1.0 - rho)
    start = TrendCycleParams(gamma, delta, rho, a, 1.0, 4.0, np.ones(data.n_terms))
    sigma2 = float(np.var(residuals(data, start), ddof=1))
    return replace(start, sigma2=sigma2)


def simulate_series(stream: RandomStream, params: TrendCycleParams, presample, length: int) -> np.ndarray:
    """Simulate ``length`` observations given the first five and ``params.tau``."""
    presample = np.asarray(presample, dtype=float).reshape(-1)
    if presample.size != PRESAMPLE:
        raise DomainError(f"presample must hold {PRESAMPLE} values")
    if params.tau.size != length - PRESAMPLE:
        raise DomainError("tau must have one entry per modeled observation")
    y = np.empty(length)
    y[:PRESAMPLE] = presample
    noise = stream.generator.standard_normal(length - PRESAMPLE) * np.sqrt(params.sigma2 * params.tau)
    for t in range(PRESAMPLE, length):
        y[t] = conditional_mean(y, t, params) + noise[t - PRESAMPLE]
    return y


class TrendCycleSampler:
    """Six-step Gibbs sampler holding the current parameters and Metropolis tuning.

    Args:
        data (TrendCycleData): Series in regression form.
        algorithm (Algorithm): Scheme of step 5.
        stream (RandomStream): Source of all random numbers.
        prior (TrendCyclePrior): Priors of the model.
        params (TrendCycleParams, optional): Start, the OLS estimate when None.
        k_aa (int): Metropolis repetitions in step 5 for AA and ASIS.
        update_sigma2 (bool): Run step 6; False holds sigma2 fixed.
    """

    def __init__(
        self,
        data: TrendCycleData,
        algorithm,
        stream: RandomStream,
        prior: Optional[TrendCyclePrior] = None,
        params: Optional[TrendCycleParams] = None,
        k_aa: int = 20,
        jacobian: bool = True,
        update_sigma2: bool = True,
    ):
        self.data = data
        self.algorithm = Algorithm.parse(algorithm)
        self.stream = stream
        self.prior = prior or TrendCyclePrior()
        self.params = params if params is not None else ols_initialize(data)
        self.k_aa = k_aa
        self.jacobian = jacobian
        self.update_sigma2 = update_sigma2
        self.kernel_state = AugmentedState(self.params.nu, self.params.tau, am=AMTuning())
        self.iteration = 0

    def _run_step(self, step, update):
        try:
            return update()
        except (NuSamplerError, linalg.LinAlgError) as error:
            raise TrendCycleStepError(str(error), step, self.iteration) from error

    def sweep(self) -> TrendCycleParams:
        data, prior, stream = self.data, self.prior, self.stream
        params = self.params

        gamma, delta = self._run_step(2, lambda: draw_gamma_delta(stream, data, params, prior))
        params = replace(params, gamma=gamma, delta=delta)
        a = self._run_step(3, lambda: draw_a(stream, data, params, prior))
        params = replace(params, a=a)
        rho = self._run_step(4, lambda: draw_rho(stream, data, params, prior))
        params = replace(params, rho=rho)

        state = replace(self.kernel_state, nu=params.nu, tau=params.tau)
        state = self._run_step(
            5,
            lambda: draw_nu_tau_app(
                stream,
                state,
                residuals(data, params),
                params.sigma2,
                self.algorithm,
                prior.nu_prior,
                self.k_aa,
                self.jacobian,
            ),
        )
        self.kernel_state = state
        params = replace(params, nu=state.nu, tau=state.tau)

        if self.update_sigma2:
            sigma2 = self._run_step(6, lambda: draw_sigma2(stream, data, params))
            params = replace(params, sigma2=sigma2)

        self.params = params
        self.iteration += 1
        return params

    def freeze_adaptation(self):
        self.kernel_state = replace(self.kernel_state, am=self.kernel_state.am.freeze())


@dataclass
class SeriesFit:
    """Posterior draws of one series under one algorithm, with the nu summaries."""

    name: str
    algorithm: Algorithm
    draws: pd.DataFrame
    median: float
    q10: float
    q90: float
    rne: float
    acceptance_rate: float = float("nan")

    def record(self) -> dict:
        return {
            "series": self.name,
            "alg": self.algorithm.value,
            "median": self.median,
            "q10": self.q10,
            "q90": self.q90,
            "rne": self.rne,
            "acceptance_rate": self.acceptance_rate,
        }


def fit_series(
    series: NPSeries,
    algorithm,
    M: int = 10_000,
    burn_in: int = 1_000,
    stream: Optional[RandomStream] = None,
    prior: Optional[TrendCyclePrior] = None,
    k_aa: int = 20,
    progress: bool = False,
) -> SeriesFit:
    """Run the Gibbs sampler from the OLS start; adaptation stops after burn-in."""
    algorithm = Algorithm.parse(algorithm)
    if M < 1 or burn_in < 0:
        raise DomainError(f"invalid chain length M={M}, burn_in={burn_in}")
    stream = stream if stream is not None else RandomStream(0)
    sampler = TrendCycleSampler(TrendCycleData(series.values), algorithm, stream, prior, k_aa=k_aa)
    logger.info(
        "fitting %s with %s: T=%d, M=%d, burn-in=%d, %r",
        series.name,
        algorithm.value,
        len(series),
        M,
        burn_in,
        stream,
    )
    rows = np.empty((M, len(DRAW_COLUMNS)))
    with tqdm(total=burn_in + M, disable=not progress, desc=f"{series.name} {algorithm.value}", leave=False) as bar:
        for _ in range(burn_in):
            sampler.sweep()
            bar.update()
        sampler.freeze_adaptation()
        accepted_before = sampler.kernel_state.am_accepted
        proposed_before = sampler.kernel_state.am_proposed
        for index in range(M):
            rows[index] = [index, *sampler.sweep().row()]
            bar.update()

    draws = pd.DataFrame(rows, columns=DRAW_COLUMNS).astype({"iter": int})
    nu = draws["nu"].to_numpy()
    summary = summarize(nu)
    proposed = sampler.kernel_state.am_proposed - proposed_before
    acceptance = (sampler.kernel_state.am_accepted - accepted_before) / proposed if proposed else float("nan")
    fit = SeriesFit(
        series.name,
        algorithm,
        draws,
        summary.median,
        summary.q10,
        summary.q90,
        efficiency(nu).rne,
        acceptance,
    )
    logger.info("%s %s: median nu %.3f, RNE %.3f", series.name, algorithm.value, fit.median, fit.rne)
    return fit
