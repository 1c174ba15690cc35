"""Convergence and efficiency diagnostics for scalar chains.

The spectral density at frequency zero follows the autoregressive estimator of
R's ``coda::spectrum0.ar``: Yule-Walker fits of increasing order, order picked
by AIC, ``S(0) = sigma^2 / (1 - sum(phi))^2``. Split R-hat is rank normalized
and reported as the maximum of its bulk and tail versions.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Sequence

import numpy as np
from scipy import stats

from nu_sampler.model import DrawMatrix
from nu_sampler.utils.errors import DegenerateChainError, DomainError

logger = logging.getLogger(__name__)

MIN_CHAIN_LENGTH = 8
DEFAULT_PROBS = (0.1, 0.5, 0.9)


@dataclass
class ChainSet:
    """Equal-length chains of one parameter, stored as rows of ``draws``."""

    draws: np.ndarray
    metadata: list = field(default_factory=list)

    def __post_init__(self):
        draws = np.asarray(self.draws, dtype=float)
        if draws.ndim == 1:
            draws = draws[np.newaxis, :]
        if draws.ndim != 2 or draws.shape[0] < 1:
            raise DomainError("a chain set needs at least one chain")
        if draws.shape[1] < MIN_CHAIN_LENGTH:
            raise DomainError(f"chains need at least {MIN_CHAIN_LENGTH} draws, got {draws.shape[1]}")
        self.draws = draws

    @classmethod
    def of(cls, chains: Sequence, metadata=None) -> ChainSet:
        rows = [c.nu_draws if isinstance(c, DrawMatrix) else np.asarray(c, dtype=float) for c in chains]
        if len({row.size for row in rows}) > 1:
            raise DomainError("chains must have equal lengths")
        return cls(np.vstack(rows), list(metadata or []))

    @property
    def n_chains(self) -> int:
        return self.draws.shape[0]


@dataclass(frozen=True)
class Efficiency:
    rne: float
    ess: float
    spectral_zero: float
    degenerate: bool = False


@dataclass(frozen=True)
class PosteriorSummary:
    mean: float
    median: float
    quantiles: Dict[float, float]

    @property
    def q10(self) -> float:
        return self.quantiles[0.1]

    @property
    def q90(self) -> float:
        return self.quantiles[0.9]


def _checked_chain(chain) -> np.ndarray:
    x = np.asarray(chain, dtype=float).reshape(-1)
    if x.size < MIN_CHAIN_LENGTH:
        raise DomainError(f"chain needs at least {MIN_CHAIN_LENGTH} draws, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise DomainError("chain contains non-finite values")
    return x


def _autocovariance(x: np.ndarray, max_lag: int) -> np.ndarray:
    size = 1 << int(math.ceil(math.log2(2 * x.size)))
    spectrum = np.fft.rfft(x, size)
    return np.fft.irfft(spectrum * np.conj(spectrum), size)[: max_lag + 1] / x.size


def spectral_density_zero(chain) -> float:
    x = _checked_chain(chain)
    n_obs = x.size
    x = x - x.mean()
    if np.all(x == 0):
        raise DegenerateChainError("constant chain has no spectral density")
    max_order = int(min(n_obs - 1, math.floor(10 * math.log10(n_obs))))
    acov = _autocovariance(x, max_order)
    if acov[0] <= 0:
        raise DegenerateChainError("chain has zero variance")

    # Levinson-Durbin recursion over the Yule-Walker equations
    phi = np.zeros(0)
    variance = acov[0]
    best_aic, best_phi, best_variance = n_obs * math.log(variance), phi, variance
    for order in range(1, max_order + 1):
        kappa = (acov[order] - phi @ acov[order - 1 : 0 : -1]) / variance
        phi = np.append(phi - kappa * phi[::-1], kappa)
        variance *= 1.0 - kappa * kappa
        if variance <= 0:
            break
        aic = n_obs * math.log(variance) + 2 * order
        if aic < best_aic:
            best_aic, best_phi, best_variance = aic, phi, variance
    order = best_phi.size
    prediction_variance = best_variance * n_obs / (n_obs - (order + 1))
    return prediction_variance / (1.0 - best_phi.sum()) ** 2


def efficiency(chain) -> Efficiency:
    """RNE = var(chain) / S(0) and ESS = M * RNE; a constant chain gives zeros."""
    x = _checked_chain(chain)
    try:
        spectral_zero = spectral_density_zero(x)
    except DegenerateChainError:
        logger.warning("degenerate chain of length %d, RNE reported as 0", x.size)
        return Efficiency(0.0, 0.0, 0.0, degenerate=True)
    value = float(np.var(x, ddof=1) / spectral_zero)
    return Efficiency(value, value * x.size, spectral_zero)


def rne(chain) -> float:
    return efficiency(chain).rne


def _split_halves(draws: np.ndarray) -> np.ndarray:
    half = draws.shape[1] // 2
    return np.vstack([draws[:, :half], draws[:, draws.shape[1] - half :]])


def _rank_normalize(draws: np.ndarray) -> np.ndarray:
    ranks = stats.rankdata(draws, method="average").reshape(draws.shape)
    return stats.norm.ppf((ranks - 0.375) / (draws.size + 0.25))


def _potential_scale_reduction(split: np.ndarray) -> float:
    length = split.shape[1]
    within = np.mean(np.var(split, axis=1, ddof=1))
    between = length * np.var(np.mean(split, axis=1), ddof=1)
    if within == 0:
        return math.inf
    pooled = (length - 1) / length * within + between / length
    return math.sqrt(pooled / within)


def _as_chain_set(chains) -> ChainSet:
    return chains if isinstance(chains, ChainSet) else ChainSet.of(chains)


def split_rhat_bulk(chains) -> float:
    split = _split_halves(_as_chain_set(chains).draws)
    return _potential_scale_reduction(_rank_normalize(split))


def split_rhat_tail(chains) -> float:
    split = _split_halves(_as_chain_set(chains).draws)
    folded = np.abs(split - np.median(split))
    return _potential_scale_reduction(_rank_normalize(folded))


def split_rhat(chains) -> float:
    """max(bulk, tail) rank-normalized split R-hat; ``inf`` when every split chain is constant."""
    chain_set = _as_chain_set(chains)
    value = max(split_rhat_bulk(chain_set), split_rhat_tail(chain_set))
    if math.isinf(value):
        logger.warning("R-hat undefined for constant chains, reported as inf")
    return value


def summarize(chain, probs: Sequence[float] = DEFAULT_PROBS) -> PosteriorSummary:
    x = np.asarray(chain, dtype=float).reshape(-1)
    if x.size == 0:
        raise DomainError("cannot summarize an empty chain")
    probs = tuple(float(p) for p in probs)
    values = np.quantile(x, probs, method="linear")
    return PosteriorSummary(
        mean=float(x.mean()),
        median=float(np.median(x)),
        quantiles={p: float(v) for p, v in zip(probs, values)},
    )


def summary_record(chain, rhat_group: float = math.nan) -> dict:
    summary = summarize(chain)
    chain_efficiency = efficiency(chain)
    return {
        "median": summary.median,
        "q10": summary.q10,
        "q90": summary.q90,
        "mean": summary.mean,
        "rne": chain_efficiency.rne,
        "ess": chain_efficiency.ess,
        "rhat_group": rhat_group,
    }
