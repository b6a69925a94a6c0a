"""Shared numerical machinery for the simulation modules.

Poisson statistics are evaluated in log space so that error tails of order
1e-5 stay accurate far beyond n = 170 where naive factorials overflow. The
incomplete-gamma wrapper and the summation-based Poisson CDF are deliberately
independent code paths; tests hold them against each other through the
identity reg_lower(n+1, x) = 1 - poisson_cdf(n, x).

Random streams are counter-based (SeedSequence spawn keys feeding Philox):
identical (seed, stream_id) replays the identical sample sequence on any
platform, and distinct stream ids are independent regardless of the order in
which streams are consumed. That is what makes parallel trial execution
byte-identical to serial execution.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence, TypeVar

import numpy as np
from scipy import optimize, special

from .errors import (
    DomainError,
    FitConvergenceError,
    UnboundedDecayError,
)

_T = TypeVar("_T")

# Trials are simulated in fixed-size blocks, one derived sub-stream per
# block, so a trial's randomness depends only on its global index.
BLOCK_TRIALS = 1 << 16


@dataclass(frozen=True)
class EstimateWithError:
    """A scalar estimate with a one-sigma uncertainty."""

    value: float
    std_error: float

    def __post_init__(self):
        if not (self.std_error >= 0.0):
            raise DomainError(f"std_error must be >= 0, got {self.std_error}")


@dataclass(frozen=True)
class FitResult(EstimateWithError):
    """Fit estimate plus the weighted residual norm of the converged model."""

    residual_norm: float = 0.0


def poisson_pmf(n, mean: float):
    """P(N = n) for N ~ Poisson(mean), safe deep into the tail.

    Accepts a scalar or array of counts; mean = 0 degenerates to a point
    mass at n = 0.
    """
    if not np.isfinite(mean) or mean < 0:
        raise DomainError(f"Poisson mean must be finite and >= 0, got {mean}")
    narr = np.asarray(n)
    if np.any(narr < 0):
        raise DomainError("photon counts must be nonnegative")
    if mean == 0.0:
        out = (narr == 0).astype(float)
    else:
        logp = narr * math.log(mean) - mean - special.gammaln(narr + 1)
        out = np.exp(logp)
    return float(out) if np.isscalar(n) else out


def poisson_cdf(n, mean: float):
    """P(N <= n) by direct summation of log-space pmf terms.

    Kept independent of the incomplete-gamma route so the two can
    cross-check each other.
    """
    narr = np.asarray(n)
    if np.any(narr < 0):
        raise DomainError("photon counts must be nonnegative")
    nmax = int(narr.max()) if narr.size else 0
    partial = np.minimum(np.cumsum(poisson_pmf(np.arange(nmax + 1), mean)), 1.0)
    out = partial[narr]
    return float(out) if np.isscalar(n) else out


def reg_lower_incomplete_gamma(shape, x):
    """Regularized lower incomplete gamma P(shape, x) = gamma(shape, x)/Gamma(shape)."""
    sarr = np.asarray(shape, dtype=float)
    xarr = np.asarray(x, dtype=float)
    if np.any(sarr <= 0):
        raise DomainError("gamma shape parameter must be > 0")
    if np.any(xarr < 0):
        raise DomainError("gamma argument must be >= 0")
    out = special.gammainc(sarr, xarr)
    return float(out) if (np.isscalar(shape) and np.isscalar(x)) else out


def binomial_estimate(successes: int, trials: int) -> EstimateWithError:
    """Empirical proportion k/N with its binomial standard error sqrt(p(1-p)/N)."""
    if trials <= 0:
        raise DomainError("trials must be positive")
    if not 0 <= successes <= trials:
        raise DomainError(f"successes must lie in [0, {trials}], got {successes}")
    p = successes / trials
    return EstimateWithError(p, math.sqrt(p * (1.0 - p) / trials))


# Contrast errors below this floor carry no extra weight in fits; prevents
# zero-error synthetic points from dominating.
FIT_ERROR_FLOOR = 0.01


def fit_gaussian_decay(points: Iterable[tuple[float, float, float]]) -> FitResult:
    """Weighted least-squares fit of C(t) = exp(-t^2 / (2 tau_d^2)).

    points: iterable of (delay_s, contrast, contrast_err). Returns the decay
    time tau_d with its standard fit error and the weighted residual norm.

    Raises UnboundedDecayError when every contrast sits at 1 within errors
    (no decay observable) and FitConvergenceError when the optimizer cannot
    produce a finite estimate.
    """
    pts = [(float(t), float(c), float(e)) for t, c, e in points]
    if len(pts) < 3:
        raise DomainError("need at least 3 points to fit a decay curve")
    t = np.array([p[0] for p in pts])
    c = np.array([p[1] for p in pts])
    err = np.array([p[2] for p in pts])
    if not (np.all(np.isfinite(t)) and np.all(np.isfinite(c)) and np.all(np.isfinite(err))):
        raise DomainError("fit input contains non-finite values")
    if np.any(err < 0):
        raise DomainError("contrast errors must be >= 0")
    if not np.any(t > 0):
        raise DomainError("need at least one point with delay > 0")
    if np.any((c < -0.05) | (c > 1.05)):
        raise DomainError("contrasts outside [-0.05, 1.05]")

    sigma = np.maximum(err, FIT_ERROR_FLOOR)
    if np.all(c >= 1.0 - 2.0 * sigma):
        raise UnboundedDecayError("no decay observable: contrasts are 1 within errors")

    # deterministic derivative-free start: first crossing of e^(-1/2)
    below = t[c < math.exp(-0.5)]
    tau0 = float(below[0]) if below.size and below[0] > 0 else float(t.max())

    def model(tt, tau_d):
        return np.exp(-(tt**2) / (2.0 * tau_d**2))

    try:
        with warnings.catch_warnings():
            # degenerate covariance is detected explicitly below
            warnings.simplefilter("ignore", optimize.OptimizeWarning)
            popt, pcov = optimize.curve_fit(
                model, t, c, p0=[tau0], sigma=sigma, maxfev=2000
            )
    except RuntimeError as exc:
        raise FitConvergenceError(f"decay fit did not converge: {exc}") from exc
    tau_d = abs(float(popt[0]))
    var = float(pcov[0, 0])
    if not np.isfinite(tau_d) or tau_d <= 0 or not np.isfinite(var):
        raise FitConvergenceError("decay fit produced a degenerate estimate")
    resid = float(np.linalg.norm((c - model(t, tau_d)) / sigma))
    return FitResult(tau_d, math.sqrt(var), resid)


_U64_MAX = 2**64 - 1


@dataclass(frozen=True)
class RandomStream:
    """Handle for a deterministic, independently addressable random stream.

    seed and stream_id are both 64-bit; path extends the address for derived
    sub-streams (per trial block, per noise component, ...). Instances are
    cheap value objects; generator() builds a fresh numpy Generator that
    always replays the same sequence.
    """

    seed: int
    stream_id: int
    path: tuple[int, ...] = ()

    def generator(self) -> np.random.Generator:
        key = (self.stream_id,) + self.path
        ss = np.random.SeedSequence(self.seed, spawn_key=key)
        return np.random.Generator(np.random.Philox(ss))

    def substream(self, *indices: int) -> "RandomStream":
        for ix in indices:
            if not 0 <= ix <= _U64_MAX:
                raise DomainError(f"substream index out of range: {ix}")
        return RandomStream(self.seed, self.stream_id, self.path + tuple(indices))


def derive_stream(seed: int, stream_id: int) -> RandomStream:
    """Derive the addressable stream (seed, stream_id); counter-based, so
    streams never depend on each other's consumption order."""
    if not 0 <= seed <= _U64_MAX:
        raise DomainError(f"seed must be a 64-bit unsigned integer, got {seed}")
    if not 0 <= stream_id <= _U64_MAX:
        raise DomainError(f"stream_id must be a 64-bit unsigned integer, got {stream_id}")
    return RandomStream(int(seed), int(stream_id))


def block_ranges(trials: int, block: int = BLOCK_TRIALS) -> list[tuple[int, int, int]]:
    """Partition [0, trials) into (block_index, start, stop) chunks."""
    if trials < 0:
        raise DomainError("trials must be >= 0")
    return [
        (b, b * block, min((b + 1) * block, trials))
        for b in range((trials + block - 1) // block)
    ]


def map_blocks(
    n_blocks: int, fn: Callable[[int], _T], threads: int = 1
) -> Sequence[_T]:
    """Apply fn to every block index, optionally on a thread pool.

    Results come back in block order, so downstream reductions are
    schedule-independent.
    """
    if n_blocks <= 0:
        return []
    if threads <= 1 or n_blocks == 1:
        return [fn(b) for b in range(n_blocks)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(n_blocks)))
