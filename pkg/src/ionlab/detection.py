"""Fluorescence state detection for a single optical qubit.

A bright ion scatters Poisson-distributed photons with mean n_bar_B during
the detection window; a dark (shelved) ion yields background counts with
mean n_bar_D, except that the shelf can decay during the delay or the
window itself. The dark-count distribution is therefore a three-term
mixture: survived the whole measurement (background statistics), decayed
already in the delay (full fluorescence), or decayed mid-window. The
mid-window term assumes a single decay and linear interpolation of the
mean count over the remaining window fraction, which makes it an exact
uniform mixture over the two means, expressible through regularized lower
incomplete gamma functions.

simulate_detection is the independent physical oracle for that model: it
draws exponential decay times and applies the same single-decay linear
mixture per trial. The analytic and Monte Carlo routes are kept separate
on purpose so they can validate each other.

Classification convention: n >= threshold means bright.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DomainError
from .fileutil import atomic_write_text
from .numerics import (
    EstimateWithError,
    RandomStream,
    binomial_estimate,
    block_ranges,
    map_blocks,
    poisson_pmf,
    reg_lower_incomplete_gamma,
)


@dataclass(frozen=True)
class DetectionParams:
    """Operating point of one detection window."""

    n_bar_B: float  # mean bright-state counts per window
    n_bar_D: float  # mean dark-state (background) counts per window
    t_det: float    # detection window (s)
    t_delay: float  # delay between shelving and detection (s)
    tau: float      # metastable shelf lifetime (s)

    def __post_init__(self):
        if not (self.n_bar_B > self.n_bar_D >= 0.0):
            raise DomainError(
                f"require n_bar_B > n_bar_D >= 0, got {self.n_bar_B}, {self.n_bar_D}"
            )
        if not self.t_det > 0.0:
            raise DomainError(f"t_det must be > 0, got {self.t_det}")
        if self.t_delay < 0.0:
            raise DomainError(f"t_delay must be >= 0, got {self.t_delay}")
        if not self.tau > 0.0:
            raise DomainError(f"tau must be > 0, got {self.tau}")


@dataclass(eq=False)
class CountHistogram:
    """Photon-count histogram; bin i holds the number of trials with i counts
    (the last bin also absorbs overflow)."""

    counts_per_bin: np.ndarray
    total_trials: int

    def __post_init__(self):
        self.counts_per_bin = np.asarray(self.counts_per_bin, dtype=np.int64)
        if np.any(self.counts_per_bin < 0):
            raise DomainError("histogram bins must be nonnegative")
        if int(self.counts_per_bin.sum()) != self.total_trials:
            raise DomainError("histogram bins must sum to total_trials")


@dataclass(frozen=True)
class ThresholdReport:
    """Discrimination errors at one threshold; *_err fields are set when the
    report came from counted data rather than the analytic model."""

    threshold: int
    eps_B: float       # P(bright ion classified dark)
    eps_D: float       # P(dark ion classified bright)
    eps_avg: float
    fidelity: float
    eps_B_err: float | None = None
    eps_D_err: float | None = None
    eps_avg_err: float | None = None


def support_cap(params: DetectionParams) -> int:
    """Largest photon number tracked; mass beyond is negligible by construction."""
    return int(math.ceil(params.n_bar_B + 20.0 * math.sqrt(params.n_bar_B) + 50.0))


def bright_pmf(params: DetectionParams, n):
    """P(n counts | ion bright): Poisson at the bright mean."""
    return poisson_pmf(n, params.n_bar_B)


def dark_pmf(params: DetectionParams, n):
    """P(n counts | ion prepared dark), including shelf decay.

    Weight bookkeeping: with e_d = exp(-t_delay/tau) and e_t = exp(-t_det/tau),
    the survive/early-decay/mid-window prefactors e_d*e_t, (1-e_d) and
    e_d*(1-e_t) sum to 1 identically, and the mid-window mixture
    [G(n+1, n_bar_B) - G(n+1, n_bar_D)] / (n_bar_B - n_bar_D)
    (G = regularized lower incomplete gamma) sums to 1 over n, so the whole
    distribution is normalized.
    """
    e_d = math.exp(-params.t_delay / params.tau)
    e_t = math.exp(-params.t_det / params.tau)
    narr = np.asarray(n)
    survived = poisson_pmf(narr, params.n_bar_D)
    decayed_early = poisson_pmf(narr, params.n_bar_B)
    mid = (
        reg_lower_incomplete_gamma(narr + 1, params.n_bar_B)
        - reg_lower_incomplete_gamma(narr + 1, params.n_bar_D)
    ) / (params.n_bar_B - params.n_bar_D)
    out = e_d * e_t * survived + (1.0 - e_d) * decayed_early + e_d * (1.0 - e_t) * mid
    return float(out) if np.isscalar(n) else out


def threshold_errors(params: DetectionParams, threshold: int) -> ThresholdReport:
    """Analytic misclassification probabilities for 'n >= threshold is bright'."""
    threshold = int(threshold)
    if threshold < 0:
        raise DomainError("threshold must be >= 0")
    if threshold > support_cap(params):
        raise DomainError(
            f"threshold {threshold} beyond tracked support {support_cap(params)}"
        )
    below = np.arange(threshold)
    eps_B = float(bright_pmf(params, below).sum()) if threshold else 0.0
    eps_D = 1.0 - (float(dark_pmf(params, below).sum()) if threshold else 0.0)
    eps_B = min(max(eps_B, 0.0), 1.0)
    eps_D = min(max(eps_D, 0.0), 1.0)
    eps_avg = (eps_B + eps_D) / 2.0
    return ThresholdReport(threshold, eps_B, eps_D, eps_avg, 1.0 - eps_avg)


def optimal_threshold(params: DetectionParams, max_threshold: int) -> ThresholdReport:
    """Report for the threshold in [1, max_threshold] minimizing eps_avg;
    ties go to the smallest threshold."""
    if max_threshold < 1:
        raise DomainError("max_threshold must be >= 1")
    hi = min(int(max_threshold), support_cap(params))
    best = None
    for thr in range(1, hi + 1):
        rep = threshold_errors(params, thr)
        if best is None or rep.eps_avg < best.eps_avg:
            best = rep
    return best


def simulate_detection(
    params: DetectionParams,
    state: str,
    trials: int,
    stream: RandomStream,
    threads: int = 1,
) -> CountHistogram:
    """Monte Carlo photon counting, deterministic per (stream, trial index).

    Dark trials draw a decay time from Exponential(tau) measured from the
    start of the delay; decays inside the window mix the two means linearly
    by the fraction of the window spent dark. Trials run in fixed-size
    blocks on derived sub-streams, so any thread count reproduces the
    serial histogram bit for bit.
    """
    if state not in ("bright", "dark"):
        raise DomainError(f"state must be 'bright' or 'dark', got {state!r}")
    if trials < 1:
        raise DomainError("trials must be >= 1")
    cap = support_cap(params)

    def run_block(spec):
        b, start, stop = spec
        rng = stream.substream(b).generator()
        size = stop - start
        if state == "bright":
            counts = rng.poisson(params.n_bar_B, size)
        else:
            t_dec = rng.exponential(params.tau, size)
            dark_fraction = np.clip((t_dec - params.t_delay) / params.t_det, 0.0, 1.0)
            mean = params.n_bar_D * dark_fraction + params.n_bar_B * (1.0 - dark_fraction)
            counts = rng.poisson(mean)
        return np.bincount(np.minimum(counts, cap), minlength=cap + 1)

    blocks = block_ranges(trials)
    partials = map_blocks(len(blocks), lambda i: run_block(blocks[i]), threads)
    hist = np.zeros(cap + 1, dtype=np.int64)
    for part in partials:  # fixed order: reduction independent of schedule
        hist += part
    return CountHistogram(counts_per_bin=hist, total_trials=trials)


def histogram_errors(
    bright: CountHistogram, dark: CountHistogram, threshold: int
) -> ThresholdReport:
    """Empirical discrimination errors with binomial standard errors."""
    threshold = int(threshold)
    if threshold < 0:
        raise DomainError("threshold must be >= 0")
    if bright.total_trials <= 0 or dark.total_trials <= 0:
        raise DomainError("histograms must contain at least one trial")
    k_bright_missed = int(bright.counts_per_bin[:threshold].sum())
    k_dark_crossed = int(dark.counts_per_bin[threshold:].sum())
    est_B = binomial_estimate(k_bright_missed, bright.total_trials)
    est_D = binomial_estimate(k_dark_crossed, dark.total_trials)
    eps_avg = (est_B.value + est_D.value) / 2.0
    err_avg = 0.5 * math.hypot(est_B.std_error, est_D.std_error)
    return ThresholdReport(
        threshold,
        est_B.value,
        est_D.value,
        eps_avg,
        1.0 - eps_avg,
        eps_B_err=est_B.std_error,
        eps_D_err=est_D.std_error,
        eps_avg_err=err_avg,
    )


def single_photon_experiment(
    p_detect: float, trials: int, stream: RandomStream
) -> EstimateWithError:
    """Bernoulli Monte Carlo of a detection chain: fraction of trials in
    which the single emitted photon is actually detected."""
    if not 0.0 <= p_detect <= 1.0:
        raise DomainError(f"p_detect must be in [0, 1], got {p_detect}")
    if trials < 1:
        raise DomainError("trials must be >= 1")
    detected = int(stream.generator().binomial(trials, p_detect))
    return binomial_estimate(detected, trials)


def write_histogram_csv(hist: CountHistogram, path: str | Path) -> Path:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["photon_count", "trials"])
    for n, k in enumerate(hist.counts_per_bin):
        writer.writerow([n, int(k)])
    return atomic_write_text(path, buf.getvalue())


def read_histogram_csv(path: str | Path) -> CountHistogram:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["photon_count", "trials"]:
            raise DomainError(f"unexpected histogram CSV header: {header}")
        rows = [(int(n), int(k)) for n, k in reader]
    if not rows or [n for n, _ in rows] != list(range(len(rows))):
        raise DomainError("histogram CSV must list contiguous photon counts from 0")
    counts = np.array([k for _, k in rows], dtype=np.int64)
    return CountHistogram(counts_per_bin=counts, total_trials=int(counts.sum()))
