"""One-iteration updates of (nu, latent variables) for the three schemes.

SA draws tau given nu and then nu given tau exactly. AA draws tau, maps it to
u = F(tau; nu) and moves nu given u by repeated adaptive Metropolis steps.
ASIS runs the SA update, transfers tau to u at the new nu and finishes with
the AA moves.
"""

from __future__ import annotations

import logging
from dataclasses import replace

import numpy as np

from nu_sampler.kernels.adaptive_metropolis import AMTuning, am_step
from nu_sampler.kernels.rejection import rs_draw_nu
from nu_sampler.model import (
    Algorithm,
    AugmentedState,
    NuPrior,
    ObservationSet,
    log_post_nu_given_u,
    tau_quantile,
    tau_to_u,
)
from nu_sampler.utils.numerics import RandomStream, sample_gamma

logger = logging.getLogger(__name__)


def draw_tau_given_nu(stream: RandomStream, y, nu: float):
    """tau_i = 1 / Gamma((nu + 1) / 2, rate=(nu + y_i^2) / 2), vectorized over y."""
    y = np.asarray(y, dtype=float)
    return 1.0 / sample_gamma(stream, (nu + 1.0) / 2.0, (nu + y**2) / 2.0)


def eta_stat(tau, prior: NuPrior) -> float:
    tau = np.asarray(tau, dtype=float)
    return prior.rate + 0.5 * float(np.sum(np.log(tau) + 1.0 / tau))


def _metropolis_given_u(state, data, u, prior, stream, nu, repeats, jacobian):
    def target(value):
        return log_post_nu_given_u(value, data, u, prior)

    am = state.am if state.am is not None else AMTuning()
    current = target(nu)
    accepted = 0
    for _ in range(repeats):
        step = am_step(stream, am, nu, target, current_log_target=current, jacobian=jacobian)
        nu, am, current = step.nu, step.tuning, step.log_target
        accepted += step.accepted
    return nu, am, accepted


def _finish_ancillary(state, tau, u, boundary, nu_before, nu, am, accepted, repeats):
    if nu != nu_before:
        tau = tau_quantile(u, nu, strict=False)
    return replace(
        state,
        nu=nu,
        tau=tau,
        u=u,
        am=am,
        am_accepted=state.am_accepted + accepted,
        am_proposed=state.am_proposed + repeats,
        boundary_u=state.boundary_u + int(boundary.sum()),
    )


def sa_sweep(
    state: AugmentedState, data: ObservationSet, prior: NuPrior, stream: RandomStream
) -> AugmentedState:
    tau = draw_tau_given_nu(stream, data.y, state.nu)
    nu = rs_draw_nu(stream, eta_stat(tau, prior), data.n)
    return replace(state, nu=nu, tau=tau)


def aa_sweep(
    state: AugmentedState,
    data: ObservationSet,
    prior: NuPrior,
    stream: RandomStream,
    k_aa: int = 20,
    jacobian: bool = True,
) -> AugmentedState:
    tau = draw_tau_given_nu(stream, data.y, state.nu)
    u, boundary = tau_to_u(tau, state.nu)
    nu, am, accepted = _metropolis_given_u(
        state, data, u, prior, stream, state.nu, k_aa, jacobian
    )
    return _finish_ancillary(state, tau, u, boundary, state.nu, nu, am, accepted, k_aa)


def asis_sweep(
    state: AugmentedState,
    data: ObservationSet,
    prior: NuPrior,
    stream: RandomStream,
    k_aa: int = 20,
    jacobian: bool = True,
) -> AugmentedState:
    tau = draw_tau_given_nu(stream, data.y, state.nu)
    nu_sufficient = rs_draw_nu(stream, eta_stat(tau, prior), data.n)
    # u is a deterministic transfer of tau at the new nu, not a fresh draw
    u, boundary = tau_to_u(tau, nu_sufficient)
    nu, am, accepted = _metropolis_given_u(
        state, data, u, prior, stream, nu_sufficient, k_aa, jacobian
    )
    return _finish_ancillary(
        state, tau, u, boundary, nu_sufficient, nu, am, accepted, k_aa
    )


def sweep(
    algorithm: Algorithm,
    state: AugmentedState,
    data: ObservationSet,
    prior: NuPrior,
    stream: RandomStream,
    k_aa: int = 20,
    jacobian: bool = True,
) -> AugmentedState:
    if algorithm is Algorithm.SA:
        return sa_sweep(state, data, prior, stream)
    if algorithm is Algorithm.AA:
        return aa_sweep(state, data, prior, stream, k_aa, jacobian)
    return asis_sweep(state, data, prior, stream, k_aa, jacobian)
