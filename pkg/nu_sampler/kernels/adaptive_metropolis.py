from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Callable, NamedTuple, Optional

from nu_sampler.utils.numerics import RandomStream

logger = logging.getLogger(__name__)


def adaptation_increment(batch_index: int) -> float:
    return min(0.05, batch_index**-0.5)


@dataclass(frozen=True)
class AMTuning:
    """Step size of the log-scale random walk and its batch statistics.

    While ``adapting``, the log of the step standard deviation moves by
    ``adaptation_increment(batch_index)`` after each full batch, upwards when the
    batch acceptance rate exceeded ``target_accept`` and downwards otherwise.
    """

    log_step_sd: float = math.log(0.5)
    batch_size: int = 200
    batch_accept_count: int = 0
    batch_proposals: int = 0
    batch_index: int = 1
    target_accept: float = 0.44
    adapting: bool = True

    @property
    def step_sd(self) -> float:
        return math.exp(self.log_step_sd)

    def record(self, accepted: bool) -> AMTuning:
        if not self.adapting:
            return self
        accept_count = self.batch_accept_count + int(accepted)
        proposals = self.batch_proposals + 1
        if proposals < self.batch_size:
            return replace(self, batch_accept_count=accept_count, batch_proposals=proposals)
        rate = accept_count / proposals
        delta = adaptation_increment(self.batch_index)
        log_step_sd = self.log_step_sd + (delta if rate > self.target_accept else -delta)
        logger.debug(
            "batch %d acceptance %.3f, step sd %.4g -> %.4g",
            self.batch_index,
            rate,
            self.step_sd,
            math.exp(log_step_sd),
        )
        return replace(
            self,
            log_step_sd=log_step_sd,
            batch_accept_count=0,
            batch_proposals=0,
            batch_index=self.batch_index + 1,
        )

    def freeze(self) -> AMTuning:
        return replace(self, adapting=False, batch_accept_count=0, batch_proposals=0)


class AMStepResult(NamedTuple):
    nu: float
    tuning: AMTuning
    accepted: bool
    log_target: float


def am_step(
    stream: RandomStream,
    am: AMTuning,
    nu: float,
    log_target: Callable[[float], float],
    current_log_target: Optional[float] = None,
    jacobian: bool = True,
) -> AMStepResult:
    """One Metropolis-Hastings update of nu through a Gaussian walk on log(nu).

    Proposals with a target of -inf are rejected. From a state whose target is
    -inf any proposal with a finite target is accepted. Random numbers come
    from ``stream.aux_generator``.

    Args:
        stream (RandomStream): Source of the proposal and acceptance draws.
        am (AMTuning): Current step size and batch statistics.
        nu (float): Current value.
        log_target (Callable): Unnormalized log density of nu.
        current_log_target (float): Cached ``log_target(nu)``.
        jacobian (bool): Add ``log(nu_p) - log(nu)`` to the log ratio, which the
            walk on the log scale requires.
    """
    current = log_target(nu) if current_log_target is None else current_log_target
    generator = stream.aux_generator
    log_nu = math.log(nu)
    log_proposal = log_nu + am.step_sd * generator.standard_normal()
    log_uniform = -generator.standard_exponential()
    proposal = math.exp(log_proposal) if log_proposal < 709.0 else math.inf
    proposed = log_target(proposal) if 0.0 < proposal < math.inf else -math.inf
    if proposed == -math.inf:
        accepted = False
    elif current == -math.inf:
        accepted = True
    else:
        log_ratio = proposed - current
        if jacobian:
            log_ratio += log_proposal - log_nu
        accepted = log_uniform < log_ratio
    tuning = am.record(accepted)
    if accepted:
        return AMStepResult(proposal, tuning, True, proposed)
    return AMStepResult(nu, tuning, False, current)
