"""Figure rendering for the CLI report paths.

Everything here draws from already-computed data; the core modules never
import matplotlib. Figures are a convenience view of the CSV/JSON outputs
and are excluded from the reproducibility checksums.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_DPI = 150


def _finish(fig, path: Path) -> Path:
    path = Path(path)
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path


def save_detection_model_figure(counts, bright, dark, threshold, path) -> Path:
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.semilogy(counts, dark, drawstyle="steps-mid", label="dark model")
    ax.semilogy(counts, bright, drawstyle="steps-mid", label="bright model")
    ax.axvline(threshold - 0.5, color="k", linestyle="--", label=f"threshold {threshold}")
    ax.set_ylim(bottom=1e-9)
    ax.set_xlabel("photon counts per window")
    ax.set_ylabel("probability")
    ax.legend()
    fig.tight_layout()
    return _finish(fig, path)


def save_detection_sim_figure(counts, model_pmf, empirical, threshold, label, path) -> Path:
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.semilogy(counts, model_pmf, drawstyle="steps-mid", label=f"{label} model")
    ax.semilogy(counts, empirical, ".", markersize=4, label=f"{label} simulated")
    ax.axvline(threshold - 0.5, color="k", linestyle="--")
    ax.set_ylim(bottom=1e-9)
    ax.set_xlabel("photon counts per window")
    ax.set_ylabel("frequency")
    ax.legend()
    fig.tight_layout()
    return _finish(fig, path)


def save_threshold_scan_figure(thresholds, eps_avg, best_threshold, path) -> Path:
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.semilogy(thresholds, eps_avg, "o-")
    ax.axvline(best_threshold, color="k", linestyle="--", label=f"optimum {best_threshold}")
    ax.set_xlabel("detection threshold")
    ax.set_ylabel("average error")
    ax.legend()
    fig.tight_layout()
    return _finish(fig, path)


def save_efficiency_figure(names, cumulative, path) -> Path:
    fig, ax = plt.subplots(figsize=(6.5, 4.0))
    x = np.arange(len(names))
    ax.semilogy(x, cumulative, "o-")
    ax.set_xticks(x, names, rotation=30, ha="right")
    ax.set_ylabel("cumulative efficiency")
    fig.tight_layout()
    return _finish(fig, path)


def save_coherence_figure(curve, path, fit_tau=None, label="") -> Path:
    delays = np.array([p[0] for p in curve.points])
    contrasts = np.array([p[1] for p in curve.points])
    errs = np.array([p[2] for p in curve.points])
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.errorbar(delays, contrasts, yerr=errs, fmt="o", capsize=2, label=label or None)
    if fit_tau is not None:
        grid = np.linspace(0.0, delays[-1] * 1.05, 200)
        ax.plot(grid, np.exp(-(grid**2) / (2.0 * fit_tau**2)), "-",
                label=f"fit: {fit_tau * 1e3:.3g} ms")
    ax.set_ylim(-0.05, 1.05)
    ax.set_xlabel("free evolution time (s)")
    ax.set_ylabel("contrast")
    if label or fit_tau is not None:
        ax.legend()
    fig.tight_layout()
    return _finish(fig, path)


def save_decoupling_figure(curves, path) -> Path:
    """Overlay contrast curves for several pulse sequences (log time axis)."""
    fig, ax = plt.subplots(figsize=(6.5, 4.0))
    for label, curve in curves.items():
        delays = [p[0] for p in curve.points]
        contrasts = [p[1] for p in curve.points]
        errs = [p[2] for p in curve.points]
        ax.errorbar(delays, contrasts, yerr=errs, fmt="o-", markersize=3,
                    capsize=2, label=label)
    ax.set_xscale("log")
    ax.set_ylim(-0.05, 1.05)
    ax.set_xlabel("free evolution time (s)")
    ax.set_ylabel("contrast")
    ax.legend()
    fig.tight_layout()
    return _finish(fig, path)


def save_timeseries_figure(series, path) -> Path:
    t = np.arange(series.samples.size) / series.sample_rate
    fig, ax = plt.subplots(figsize=(6.5, 3.5))
    ax.plot(t, series.samples, linewidth=0.7)
    ax.set_xlabel("time (s)")
    ax.set_ylabel("displacement (nm)")
    fig.tight_layout()
    return _finish(fig, path)


def save_spectrum_figure(spectrum, peaks, cutoff, path) -> Path:
    fig, ax = plt.subplots(figsize=(6.5, 4.0))
    ax.plot(spectrum.frequencies, spectrum.amplitudes, linewidth=0.8)
    for freq, amp, idx in peaks:
        tag = f"k={idx}" if idx is not None else "?"
        ax.annotate(tag, (freq, amp), textcoords="offset points", xytext=(2, 4))
        ax.plot([freq], [amp], "rv", markersize=5)
    if cutoff is not None:
        ax.axvline(cutoff, color="k", linestyle=":", linewidth=0.8)
    upper = max((f for f, _, _ in peaks), default=spectrum.frequencies[-1])
    ax.set_xlim(0.0, min(spectrum.frequencies[-1], max(upper * 2.0, 10.0)))
    ax.set_xlabel("frequency (Hz)")
    ax.set_ylabel("amplitude (nm)")
    fig.tight_layout()
    return _finish(fig, path)
