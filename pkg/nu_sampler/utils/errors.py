class NuSamplerError(Exception):
    """Base class of every error raised by nu_sampler."""


class DomainError(NuSamplerError, ValueError):
    """An argument lies outside the domain of the operation."""


class ConfigError(NuSamplerError, ValueError):
    """A configuration value is missing or invalid."""


class DataLoadError(NuSamplerError, ValueError):
    """An input file could not be parsed into observations or series."""


class DegenerateChainError(NuSamplerError):
    """The chain is constant, its spectral density at zero is undefined."""


class NumericFailure(NuSamplerError, ArithmeticError):
    """A numerical routine failed to produce a trustworthy value.

    Args:
        message (str): Human readable description.
        abscissa (float, optional): Point at which the evaluation failed.
    """

    def __init__(self, message, abscissa=None):
        super().__init__(message)
        self.abscissa = abscissa


class RootBracketError(NumericFailure):
    """No sign change was found after the bracket expansion budget."""


class RejectionSamplingError(NumericFailure):
    """The proposal cap of a rejection sampler was exceeded."""

    def __init__(self, message, **payload):
        super().__init__(message)
        self.payload = payload


class FisherEstimationError(NumericFailure):
    """Too many Monte-Carlo draws had to be dropped."""


class TrendCycleStepError(NumericFailure):
    """A step of the trend-cycle Gibbs sampler failed.

    Args:
        message (str): Description of the failure.
        step (int): Index of the Gibbs step (2 to 6).
        iteration (int): Gibbs iteration at which it failed.
    """

    def __init__(self, message, step, iteration):
        super().__init__(f"step {step}, iteration {iteration}: {message}")
        self.step = step
        self.iteration = iteration
