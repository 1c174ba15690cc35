"""Special functions, seedable random streams, root finding and numerical
differentiation shared by every sampler of the package.

The special functions are domain-checked front ends to ``scipy.special``.
Quantile functions verify their own output by a round trip through the
corresponding distribution function and report failures instead of returning
saturated values, the ancillarity sampler relies on that signal.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import optimize, special

from nu_sampler.utils.errors import DomainError, NumericFailure, RootBracketError

logger = logging.getLogger(__name__)

_EPS = np.finfo(float).eps
_UINT64_LIMIT = 2**64


def derive_stream_id(*parts) -> int:
    """Map identifiers (algorithm names, grid values, indices...) to a 64-bit id.

    The mapping only depends on the textual form of ``parts``, so the same
    identifiers give the same id in every process.
    """
    key = "|".join(repr(part) for part in parts).encode("utf-8")
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little")


class RandomStream:
    """Random stream fully determined by ``(seed, stream_id)``.

    Args:
        seed (int): Master seed, 64-bit unsigned.
        stream_id (int): Identifier of the chain or data set, 64-bit unsigned.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        for name, value in (("seed", seed), ("stream_id", stream_id)):
            if not 0 <= int(value) < _UINT64_LIMIT:
                raise DomainError(f"{name} must be a 64-bit unsigned integer, got {value}")
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self.generator = self._make_generator(self.stream_id)
        self._aux_generator = None

    @classmethod
    def derived(cls, seed: int, *parts) -> RandomStream:
        """Stream whose id is derived from identifiers, see ``derive_stream_id``."""
        return cls(seed, derive_stream_id(*parts))

    def _make_generator(self, *spawn_key):
        sequence = np.random.SeedSequence(self.seed, spawn_key=spawn_key)
        return np.random.Generator(np.random.PCG64(sequence))

    @property
    def aux_generator(self) -> np.random.Generator:
        """Second independent generator of the same stream.

        Metropolis proposals draw from it so that the number of proposals never
        shifts the conditional draws made from ``generator``.
        """
        if self._aux_generator is None:
            self._aux_generator = self._make_generator(self.stream_id, 1)
        return self._aux_generator

    def __repr__(self):
        return f"RandomStream(seed={self.seed}, stream_id={self.stream_id})"


@dataclass(frozen=True)
class Bracket:
    """Interval ``[lo, hi]`` of positive reals expected to contain a root."""

    lo: float
    hi: float

    def __post_init__(self):
        if not (np.isfinite(self.lo) and np.isfinite(self.hi)):
            raise DomainError(f"bracket bounds must be finite, got {self}")
        if not 0 < self.lo < self.hi:
            raise DomainError(f"bracket needs 0 < lo < hi, got {self}")


def _checked(name, value, allow_zero=False):
    array = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(array)):
        raise DomainError(f"{name} must be finite, got {value!r}")
    if allow_zero:
        if np.any(array < 0):
            raise DomainError(f"{name} must be non-negative, got {value!r}")
    elif np.any(array <= 0):
        raise DomainError(f"{name} must be positive, got {value!r}")
    return array


def _checked_probability(name, value):
    array = np.asarray(value, dtype=float)
    if not np.all((array > 0) & (array < 1)):
        raise DomainError(f"{name} must lie strictly inside (0, 1), got {value!r}")
    return array


def _as_output(result):
    if np.ndim(result) == 0:
        return float(result)
    return result


def log_gamma(x):
    """Natural logarithm of the gamma function for positive ``x``."""
    return _as_output(special.gammaln(_checked("x", x)))


def digamma(x):
    """First derivative of ``log_gamma``."""
    return _as_output(special.psi(_checked("x", x)))


def trigamma(x):
    """Second derivative of ``log_gamma``."""
    return _as_output(special.polygamma(1, _checked("x", x)))


def reg_lower_gamma(shape, x):
    """Regularized lower incomplete gamma function P(shape, x)."""
    return _as_output(
        special.gammainc(_checked("shape", shape), _checked("x", x, allow_zero=True))
    )


def reg_upper_gamma(shape, x):
    """Regularized upper incomplete gamma function Q(shape, x) = 1 - P(shape, x)."""
    return _as_output(
        special.gammaincc(_checked("shape", shape), _checked("x", x, allow_zero=True))
    )


def _round_trip_ok(x, back, target):
    tail = np.minimum(target, 1.0 - target)
    tolerance = np.minimum(1e-10, 1e-6 * tail) + 8 * _EPS
    with np.errstate(invalid="ignore"):
        return np.isfinite(x) & (x > 0) & (np.abs(back - target) <= tolerance)


def _gamma_quantile(shape, prob, strict, inverse, forward, label):
    a = _checked("shape", shape)
    prob = np.asarray(prob, dtype=float)
    if strict:
        _checked_probability(label, prob)
        inside = np.ones(np.broadcast(a, prob).shape, dtype=bool)
    else:
        inside = np.broadcast_to((prob > 0) & (prob < 1), np.broadcast(a, prob).shape)
    safe_prob = np.where(inside, prob, 0.5)
    with np.errstate(all="ignore"):
        x = inverse(a, safe_prob)
        ok = inside & _round_trip_ok(x, forward(a, x), safe_prob)
    if strict and not np.all(ok):
        bad = np.broadcast_to(prob, ok.shape)[~ok]
        raise NumericFailure(
            f"incomplete gamma quantile did not converge for {label}={bad[:5]!r}",
            abscissa=float(bad[0]),
        )
    return _as_output(np.where(ok, x, np.nan))


def reg_gamma_quantile(shape, p, strict=True):
    """Inverse of ``reg_lower_gamma`` in its second argument.

    Args:
        shape (float or np.ndarray): Positive shape.
        p (float or np.ndarray): Probabilities in (0, 1).
        strict (bool): Raise ``NumericFailure`` on any failed entry. When False,
            failed entries and probabilities outside (0, 1) come back as NaN.
    """
    return _gamma_quantile(
        shape, p, strict, special.gammaincinv, special.gammainc, "p"
    )


def reg_upper_gamma_quantile(shape, q, strict=True):
    """Inverse of ``reg_upper_gamma`` in its second argument, see ``reg_gamma_quantile``."""
    return _gamma_quantile(
        shape, q, strict, special.gammainccinv, special.gammaincc, "q"
    )


def sample_gamma(stream: RandomStream, shape, rate, size=None):
    """Gamma(shape, rate) variates drawn from ``stream``."""
    shape = _checked("shape", shape)
    rate = _checked("rate", rate)
    return _as_output(stream.generator.gamma(shape, 1.0 / rate, size))


def find_root(
    f: Callable[[float], float],
    bracket: Bracket,
    tol: float = 1e-12,
    expansion: float = 4.0,
    max_expansions: int = 60,
) -> float:
    """Root of ``f`` inside ``bracket``, expanding it geometrically if needed.

    Both ends move outwards (``lo / expansion``, ``hi * expansion``) until the
    sign of ``f`` differs, then Brent's method runs to relative tolerance ``tol``.
    """
    lo, hi = bracket.lo, bracket.hi
    f_lo, f_hi = f(lo), f(hi)
    expansions = 0
    while f_lo * f_hi > 0:
        if expansions == max_expansions:
            raise RootBracketError(
                f"no sign change on [{lo:.3g}, {hi:.3g}] after {expansions} expansions"
            )
        lo, hi = lo / expansion, hi * expansion
        f_lo, f_hi = f(lo), f(hi)
        expansions += 1
    if not (np.isfinite(f_lo) and np.isfinite(f_hi)):
        raise NumericFailure(
            f"non-finite function value on bracket [{lo:.3g}, {hi:.3g}]",
            abscissa=lo if not np.isfinite(f_lo) else hi,
        )
    if f_lo == 0:
        return lo
    if f_hi == 0:
        return hi
    root = optimize.brentq(f, lo, hi, xtol=1e-300, rtol=max(tol, 4 * _EPS), maxiter=500)
    logger.debug("root %.12g found after %d bracket expansions", root, expansions)
    return root


def _initial_step(x):
    step = 0.1 * max(abs(x), 1.0)
    if x != 0:
        # stencils of functions defined on the positive reals stay inside the domain
        step = min(step, 0.5 * abs(x))
    return step


def richardson_second_derivative(f, x: float, steps: int = 6, h0=None):
    """Richardson-extrapolated central second difference of ``f`` at ``x``.

    ``f`` may return arrays; the extrapolation is applied elementwise and any
    non-finite evaluation propagates as NaN in the corresponding entry.
    The initial step is ``0.1 * max(|x|, 1)``, at most ``|x| / 2`` when ``x`` is
    non-zero, and it is halved per level.
    """
    if steps < 1:
        raise DomainError(f"steps must be a positive integer, got {steps}")
    h = h0 if h0 is not None else _initial_step(x)
    centre = np.asarray(f(x), dtype=float)
    table = []
    for level in range(steps):
        step = h / 2**level
        upper = np.asarray(f(x + step), dtype=float)
        lower = np.asarray(f(x - step), dtype=float)
        table.append((upper - 2.0 * centre + lower) / step**2)
    for order in range(1, steps):
        factor = 4.0**order
        table = [
            (factor * table[k] - table[k - 1]) / (factor - 1.0)
            for k in range(1, len(table))
        ]
    return table[0]


def second_derivative(f: Callable[[float], float], x: float, steps: int = 6) -> float:
    """Scalar version of ``richardson_second_derivative`` raising on bad evaluations."""

    def checked(point):
        value = f(point)
        if not np.all(np.isfinite(value)):
            raise NumericFailure(f"f({point!r}) = {value!r} is not finite", abscissa=point)
        return value

    return float(richardson_second_derivative(checked, x, steps))
