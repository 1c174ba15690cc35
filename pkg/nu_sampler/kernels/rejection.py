"""Exact draws of nu given tau by rejection from an exponential envelope.

With ``g(nu) = n * ((nu/2) log(nu/2) - log Gamma(nu/2)) - nu * eta`` the log
kernel of p(nu | tau), ``g(nu) + nu / xi`` is concave and maximal at the root
``xi*`` of ``g'(xi) + 1 / xi = 0``. An exponential proposal with mean ``xi*``
therefore dominates the target once scaled by ``exp(g(xi*) + 1)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from nu_sampler.model import log_post_nu_given_tau
from nu_sampler.utils.errors import DomainError, RejectionSamplingError
from nu_sampler.utils.numerics import Bracket, RandomStream, digamma, find_root

logger = logging.getLogger(__name__)

MAX_PROPOSALS = 10**6


@dataclass(frozen=True)
class XiSolveResult:
    xi_star: float
    residual: float


def xi_equation(xi: float, eta: float, n: int) -> float:
    half = xi / 2.0
    return (np.log(half) + 1.0 - digamma(half)) * n / 2.0 + 1.0 / xi - eta


def solve_xi_star(eta: float, n: int, tol: float = 1e-12) -> XiSolveResult:
    if not eta > n / 2.0:
        raise DomainError(f"eta must exceed n/2, got eta={eta} for n={n}")
    # large-xi expansion of the equation
    guess = (n / 2.0 + 1.0) / (eta - n / 2.0)
    xi = find_root(
        lambda value: xi_equation(value, eta, n), Bracket(guess / 4.0, guess * 4.0), tol=tol
    )
    residual = xi_equation(xi, eta, n)
    logger.debug("xi* = %.10g for eta=%.6g, n=%d (residual %.2e)", xi, eta, n, residual)
    return XiSolveResult(xi, residual)


def acceptance_log_prob(nu_p, eta: float, n: int, xi: float):
    """Log probability of keeping the proposal ``nu_p``; zero at ``nu_p = xi``."""
    return (
        log_post_nu_given_tau(nu_p, eta, n)
        + np.asarray(nu_p) / xi
        - log_post_nu_given_tau(xi, eta, n)
        - 1.0
    )


def rs_draw_nu(
    stream: RandomStream, eta: float, n: int, max_proposals: int = MAX_PROPOSALS
) -> float:
    xi = solve_xi_star(eta, n).xi_star
    proposals = 0
    batch = 8
    while proposals < max_proposals:
        size = min(batch, max_proposals - proposals)
        nu_p = stream.generator.exponential(xi, size)
        log_uniform = -stream.generator.standard_exponential(size)
        with np.errstate(divide="ignore", invalid="ignore"):
            log_alpha = acceptance_log_prob(nu_p, eta, n, xi)
        hits = np.flatnonzero(log_uniform < log_alpha)
        if hits.size:
            proposals += hits[0] + 1
            logger.debug("accepted after %d proposals", proposals)
            return float(nu_p[hits[0]])
        proposals += size
        batch = min(2 * batch, 4096)
    raise RejectionSamplingError(
        f"no acceptance after {proposals} proposals (eta={eta:.6g}, n={n}, xi*={xi:.6g})",
        eta=eta,
        n=n,
        xi_star=xi,
    )
