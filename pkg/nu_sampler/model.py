"""Domain types and densities of the Student-t scale mixture model.

The observations are ``y_i = z_i * sqrt(tau_i)`` with ``z_i`` standard normal and
``1 / tau_i ~ Gamma(nu / 2, rate=nu / 2)``. The sufficient parameterization
samples ``tau`` directly, the ancillary one works with ``u = F(tau; nu)``
where ``F`` is the prior distribution function of ``tau``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Optional

import numpy as np
import pandas as pd
from scipy import special, stats

from nu_sampler.utils.errors import ConfigError, DomainError, NumericFailure
from nu_sampler.utils.numerics import (
    RandomStream,
    reg_upper_gamma,
    reg_upper_gamma_quantile,
)

if TYPE_CHECKING:
    from nu_sampler.kernels.adaptive_metropolis import AMTuning

logger = logging.getLogger(__name__)

_LOG_2PI = np.log(2.0 * np.pi)


class Algorithm(Enum):
    SA = "sa"
    AA = "aa"
    ASIS = "asis"

    @classmethod
    def parse(cls, value) -> Algorithm:
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            choices = ", ".join(member.value for member in cls)
            raise ConfigError(f"unknown algorithm {value!r}, expected one of {choices}")


class GridPlane(Enum):
    SA = "sa"
    AA = "aa"


@dataclass(frozen=True)
class ObservationSet:
    y: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).reshape(-1)
        if not np.all(np.isfinite(y)):
            raise DomainError("observations must be finite")
        y.setflags(write=False)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def y_squared(self) -> np.ndarray:
        return self.y**2


@dataclass(frozen=True)
class NuPrior:
    """Exponential prior on nu with the given rate (lambda)."""

    rate: float

    def __post_init__(self):
        if not (np.isfinite(self.rate) and self.rate > 0):
            raise DomainError(f"prior rate must be positive, got {self.rate}")

    @property
    def mean(self) -> float:
        return 1.0 / self.rate

    def log_kernel(self, nu):
        return -self.rate * nu

    def log_density(self, nu):
        return np.log(self.rate) - self.rate * nu

    def quantile(self, p):
        return -np.log1p(-np.asarray(p, dtype=float)) / self.rate

    def cdf(self, nu):
        return -np.expm1(-self.rate * np.asarray(nu, dtype=float))

    def sample(self, stream: RandomStream, size=None):
        return stream.generator.exponential(self.mean, size)


@dataclass
class AugmentedState:
    """State of one chain.

    ``u`` is only maintained by the ancillary and interweaving sweeps. The
    counters accumulate over the life of the chain.
    """

    nu: float
    tau: np.ndarray
    u: Optional[np.ndarray] = None
    am: Optional["AMTuning"] = None
    am_accepted: int = 0
    am_proposed: int = 0
    boundary_u: int = 0

    def __post_init__(self):
        if not (np.isfinite(self.nu) and self.nu > 0):
            raise DomainError(f"nu must be positive, got {self.nu}")

    @classmethod
    def initial(cls, data: ObservationSet, nu: float, am: Optional["AMTuning"] = None):
        return cls(nu=float(nu), tau=np.ones(data.n), am=am)


@dataclass(frozen=True)
class ChainSpec:
    """Everything needed to replay one chain.

    Args:
        algorithm (Algorithm): Update scheme.
        iterations (int): Number of kept draws M.
        burn_in (int): Discarded sweeps before the kept draws, AM adapts during them.
        init_nu (float): Starting value of nu.
        prior (NuPrior): Prior on nu.
        seed (int): Master seed.
        stream_id (int): Chain identifier under ``seed``.
        k_aa (int): Metropolis repetitions per ancillary sweep.
        k_asis (int): Metropolis repetitions per interweaving sweep, ``k_aa`` when None.
        jacobian (bool): Include the log-scale change of variables in the
            Metropolis ratio. False gives a sampler with the wrong stationary law.
    """

    algorithm: Algorithm
    iterations: int
    burn_in: int
    init_nu: float
    prior: NuPrior
    seed: int
    stream_id: int = 0
    k_aa: int = 20
    k_asis: Optional[int] = None
    jacobian: bool = True

    def __post_init__(self):
        object.__setattr__(self, "algorithm", Algorithm.parse(self.algorithm))
        if self.iterations < 1:
            raise ConfigError(f"iterations must be >= 1, got {self.iterations}")
        if self.burn_in < 0:
            raise ConfigError(f"burn_in must be >= 0, got {self.burn_in}")
        if not self.init_nu > 0:
            raise ConfigError(f"init_nu must be positive, got {self.init_nu}")
        if self.k_aa < 1 or (self.k_asis is not None and self.k_asis < 1):
            raise ConfigError("Metropolis repetition counts must be >= 1")

    @property
    def asis_repeats(self) -> int:
        return self.k_aa if self.k_asis is None else self.k_asis

    def stream(self) -> RandomStream:
        return RandomStream(self.seed, self.stream_id)


@dataclass
class DrawMatrix:
    """Kept draws of nu plus per-chain bookkeeping.

    ``acceptance_rate`` is the post burn-in Metropolis acceptance rate (NaN for
    the sufficient sampler, which has no Metropolis step) and
    ``boundary_u_count`` counts ancillary variables that rounded to 0 or 1.
    """

    nu_draws: np.ndarray
    acceptance_rate: float = float("nan")
    boundary_u_count: int = 0
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        self.nu_draws = np.asarray(self.nu_draws, dtype=float)
        if not np.all(np.isfinite(self.nu_draws)):
            raise DomainError("draws must be finite")

    def __len__(self):
        return self.nu_draws.size


def simulate_observations(stream: RandomStream, nu: float, n: int) -> ObservationSet:
    if not (np.isfinite(nu) and nu > 0):
        raise DomainError(f"nu must be positive, got {nu}")
    if n < 0:
        raise DomainError(f"n must be non-negative, got {n}")
    precision = stream.generator.gamma(nu / 2.0, 2.0 / nu, size=n)
    z = stream.generator.standard_normal(n)
    return ObservationSet(z / np.sqrt(precision))


def tau_cdf(tau, nu):
    """F(tau; nu), the prior distribution function of tau."""
    tau = np.asarray(tau, dtype=float)
    if np.any(tau <= 0):
        raise DomainError("tau must be positive")
    return reg_upper_gamma(nu / 2.0, nu / (2.0 * tau))


def tau_to_u(tau, nu):
    """Map tau to u = F(tau; nu) and flag values that rounded to 0 or 1."""
    u = np.asarray(tau_cdf(tau, nu), dtype=float)
    boundary = (u <= 0.0) | (u >= 1.0)
    if np.any(boundary):
        logger.debug("%d ancillary values on the boundary at nu=%.4g", boundary.sum(), nu)
    return u, boundary


def tau_quantile(u, nu, strict=True):
    """F^-1(u; nu). Failures raise ``NumericFailure``, or give NaN when not strict."""
    if strict:
        on_boundary = np.asarray(u, dtype=float)
        on_boundary = on_boundary[(on_boundary <= 0.0) | (on_boundary >= 1.0)]
        if on_boundary.size:
            raise NumericFailure(
                "u rounded to the boundary of (0, 1)", abscissa=float(on_boundary[0])
            )
    x = reg_upper_gamma_quantile(nu / 2.0, u, strict=strict)
    # subnormal x overflows to tau = inf, which the targets reject
    with np.errstate(over="ignore"):
        return nu / (2.0 * x)


def log_post_nu_given_tau(nu, eta, n):
    """Log kernel of p(nu | tau) up to a constant; tau enters through ``eta`` only."""
    nu = np.asarray(nu, dtype=float)
    half = nu / 2.0
    value = n * (half * np.log(half) - special.gammaln(half)) - nu * eta
    return float(value) if value.ndim == 0 else value


def log_post_nu_given_u(nu, y: ObservationSet, u, prior: NuPrior) -> float:
    """Log kernel of p(nu | y, u); -inf whenever a quantile cannot be evaluated."""
    if not (np.isfinite(nu) and nu > 0):
        return -np.inf
    if y.n == 0:
        return float(prior.log_kernel(nu))
    tau = tau_quantile(u, nu, strict=False)
    if not np.all(np.isfinite(tau)):
        return -np.inf
    log_lik = -0.5 * np.sum(_LOG_2PI + np.log(tau) + y.y_squared / tau)
    return float(log_lik + prior.log_kernel(nu))


def _midpoints(lo, hi, resolution):
    width = (hi - lo) / resolution
    return lo + width * (np.arange(resolution) + 0.5)


def joint_grid(
    y0: float,
    plane: GridPlane,
    nu_range=(1.0, 30.0),
    aux_range=None,
    resolution: int = 200,
    prior: Optional[NuPrior] = None,
) -> pd.DataFrame:
    """Posterior of (nu, tau) or (nu, u) given a single observation on a window.

    Cells are evaluated at their midpoints and normalized to sum to one over the
    window. Without ``prior`` nu is flat over the window.

    Returns:
        pd.DataFrame: columns ``nu``, ``aux``, ``density`` in row-major order (nu outer).
    """
    plane = GridPlane(plane)
    if aux_range is None:
        aux_range = (0.0, 1.0) if plane is GridPlane.AA else (0.0, 20.0)
    nu = _midpoints(*nu_range, resolution)
    aux = _midpoints(*aux_range, resolution)
    nu_mesh, aux_mesh = np.meshgrid(nu, aux, indexing="ij")
    y_sq = float(y0) ** 2
    if plane is GridPlane.SA:
        tau = aux_mesh
        log_density = stats.invgamma.logpdf(tau, a=nu_mesh / 2.0, scale=nu_mesh / 2.0)
    else:
        tau = np.empty_like(aux_mesh)
        for row, nu_value in enumerate(nu):
            tau[row] = tau_quantile(aux, nu_value, strict=False)
        log_density = np.zeros_like(aux_mesh)
    with np.errstate(invalid="ignore", divide="ignore"):
        log_density = log_density - 0.5 * (np.log(tau) + y_sq / tau)
    if prior is not None:
        log_density = log_density + prior.log_kernel(nu_mesh)
    log_density = np.where(np.isfinite(log_density), log_density, -np.inf)
    density = np.exp(log_density - log_density.max())
    density /= density.sum()
    return pd.DataFrame(
        {"nu": nu_mesh.ravel(), "aux": aux_mesh.ravel(), "density": density.ravel()}
    )
