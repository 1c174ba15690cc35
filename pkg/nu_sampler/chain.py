from __future__ import annotations

import logging
from dataclasses import replace
from typing import List, Sequence

import numpy as np
from tqdm import tqdm

from nu_sampler.kernels import sweeps
from nu_sampler.kernels.adaptive_metropolis import AMTuning
from nu_sampler.model import Algorithm, AugmentedState, ChainSpec, DrawMatrix, ObservationSet

logger = logging.getLogger(__name__)


class ChainRunner:
    """Runs one chain described by a ``ChainSpec`` on a fixed data set.

    The adaptive Metropolis step size is tuned during burn-in and frozen for the
    kept draws, so these come from a fixed Markov kernel.
    """

    def __init__(self, spec: ChainSpec, data: ObservationSet, progress: bool = False):
        self.spec = spec
        self.data = data
        self.progress = progress
        self.stream = spec.stream()
        self.state = AugmentedState.initial(data, spec.init_nu, AMTuning())

    def sweep(self) -> float:
        spec = self.spec
        repeats = spec.asis_repeats if spec.algorithm is Algorithm.ASIS else spec.k_aa
        self.state = sweeps.sweep(
            spec.algorithm, self.state, self.data, spec.prior, self.stream, repeats, spec.jacobian
        )
        return self.state.nu

    def run(self) -> DrawMatrix:
        spec = self.spec
        logger.info(
            "%s chain: n=%d, init nu=%g, lambda=%g, seed=%d, stream=%d",
            spec.algorithm.value,
            self.data.n,
            spec.init_nu,
            spec.prior.rate,
            spec.seed,
            spec.stream_id,
        )
        with tqdm(
            total=spec.burn_in + spec.iterations,
            disable=not self.progress,
            desc=spec.algorithm.value,
            leave=False,
        ) as bar:
            for _ in range(spec.burn_in):
                self.sweep()
                bar.update()
            self.state = replace(self.state, am=self.state.am.freeze())
            accepted_before = self.state.am_accepted
            proposed_before = self.state.am_proposed
            boundary_before = self.state.boundary_u
            draws = np.empty(spec.iterations)
            for index in range(spec.iterations):
                draws[index] = self.sweep()
                bar.update()

        proposed = self.state.am_proposed - proposed_before
        acceptance_rate = (
            (self.state.am_accepted - accepted_before) / proposed if proposed else float("nan")
        )
        boundary = self.state.boundary_u - boundary_before
        if boundary:
            logger.warning(
                "%s chain (stream %d): %d ancillary values rounded to the boundary",
                spec.algorithm.value,
                spec.stream_id,
                boundary,
            )
        logger.info(
            "%s chain done: median nu=%.4g, acceptance=%.3f",
            spec.algorithm.value,
            np.median(draws),
            acceptance_rate,
        )
        return DrawMatrix(
            draws,
            acceptance_rate=acceptance_rate,
            boundary_u_count=boundary,
            extras={"final_step_sd": self.state.am.step_sd},
        )


def run_chains(specs: Sequence[ChainSpec], data: ObservationSet) -> List[DrawMatrix]:
    return [ChainRunner(spec, data).run() for spec in specs]
