"""Command-line harness: config-driven runs, seeded and reproducible.

Every experiment reads one YAML config, writes delimited data plus JSON
reports atomically into the output directory, renders matplotlib figures
next to them, and records a manifest with checksums of the data files.
Exit codes: 0 success, 2 config problem, 3 runtime domain/fit failure.
"""

from __future__ import annotations

import hashlib
import json
import platform
import sys
from importlib.metadata import PackageNotFoundError, version as _dist_version
from pathlib import Path

import click
import numpy as np
import scipy

from . import SCHEMA_VERSION
from .config import EXPERIMENTS, RunConfig, load_config, prepare_parameters
from .coherence import coherence_scan, read_curve_csv, write_curve_csv
from .detection import (
    bright_pmf,
    dark_pmf,
    histogram_errors,
    optimal_threshold,
    simulate_detection,
    support_cap,
    threshold_errors,
    write_histogram_csv,
)
from .efficiency import chain_efficiency, compare_with_measurement, na_to_solid_angle_fraction
from .errors import ConfigError, ToolkitError
from .fileutil import atomic_write_text
from .numerics import derive_stream, fit_gaussian_decay
from .vibration import (
    amplitude_spectrum,
    find_peaks,
    high_pass,
    read_timeseries_csv,
    rms,
    synthesize,
    write_peaks_json,
    write_spectrum_csv,
    write_timeseries_csv,
)

try:
    TOOL_VERSION = _dist_version("artifact")
except PackageNotFoundError:  # running from a source tree without metadata
    TOOL_VERSION = "0.0.0"

EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_json(path: Path, payload: dict) -> Path:
    return atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _write_manifest(out_dir: Path, config_sha: str | None, seed: int,
                    data_files: list[Path], figures: list[Path],
                    reports: list[Path] | None = None) -> Path:
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "tool_version": TOOL_VERSION,
        "seed": seed,
        "config_sha256": config_sha,
        "versions": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "outputs": [
            {"name": p.name, "sha256": _sha256(p), "bytes": p.stat().st_size}
            for p in sorted(data_files, key=lambda p: p.name)
        ],
        "figures": sorted(p.name for p in figures),
        "reports": sorted(p.name for p in (reports or [])),
    }
    return _write_json(out_dir / "manifest.json", manifest)


def _report_dict(report) -> dict:
    d = {
        "threshold": report.threshold,
        "eps_B": report.eps_B,
        "eps_D": report.eps_D,
        "eps_avg": report.eps_avg,
        "fidelity": report.fidelity,
    }
    if report.eps_avg_err is not None:
        d.update(
            eps_B_err=report.eps_B_err,
            eps_D_err=report.eps_D_err,
            eps_avg_err=report.eps_avg_err,
        )
    return d


def _pmf_rows(params):
    counts = np.arange(support_cap(params) + 1)
    return counts, bright_pmf(params, counts), dark_pmf(params, counts)


def _run_detect_model(cfg: RunConfig, prep: dict, threads: int):
    from . import plots

    out = cfg.output_dir
    params = prep["params"]
    counts, bright, dark = _pmf_rows(params)
    lines = ["count,bright_pmf,dark_pmf"]
    for n, b, d in zip(counts.tolist(), bright.tolist(), dark.tolist()):
        lines.append(f"{n},{b!r},{d!r}")
    pmf_csv = atomic_write_text(out / "model_pmf.csv", "\n".join(lines) + "\n")

    requested = threshold_errors(params, prep["threshold"])
    best = optimal_threshold(params, prep["max_threshold"])
    report = _write_json(
        out / "threshold_report.json",
        {"requested": _report_dict(requested), "optimal": _report_dict(best)},
    )
    fig = plots.save_detection_model_figure(
        counts, bright, dark, prep["threshold"], out / "detect_model.png"
    )
    return [pmf_csv, report], [fig]


def _tv_distance(hist, pmf_fn, params) -> float:
    cap = support_cap(params)
    counts = np.arange(cap + 1)
    model = pmf_fn(params, counts)
    model[-1] = max(1.0 - float(model[:-1].sum()), 0.0)  # overflow bin
    freq = hist.counts_per_bin / hist.total_trials
    return 0.5 * float(np.abs(freq - model).sum())


def _run_detect_sim(cfg: RunConfig, prep: dict, threads: int):
    from . import plots

    out = cfg.output_dir
    params = prep["params"]
    bright_hist = simulate_detection(
        params, "bright", prep["trials"], derive_stream(cfg.seed, 0), threads=threads
    )
    dark_hist = simulate_detection(
        params, "dark", prep["trials"], derive_stream(cfg.seed, 1), threads=threads
    )
    files = [
        write_histogram_csv(bright_hist, out / "bright_hist.csv"),
        write_histogram_csv(dark_hist, out / "dark_hist.csv"),
    ]
    empirical = histogram_errors(bright_hist, dark_hist, prep["threshold"])
    analytic = threshold_errors(params, prep["threshold"])
    files.append(
        _write_json(
            out / "sim_report.json",
            {
                "trials_per_state": prep["trials"],
                "empirical": _report_dict(empirical),
                "analytic": _report_dict(analytic),
                "tv_bright": _tv_distance(bright_hist, bright_pmf, params),
                "tv_dark": _tv_distance(dark_hist, dark_pmf, params),
            },
        )
    )
    counts, bright, dark = _pmf_rows(params)
    figures = [
        plots.save_detection_sim_figure(
            counts, bright, bright_hist.counts_per_bin / bright_hist.total_trials,
            prep["threshold"], "bright", out / "detect_sim_bright.png",
        ),
        plots.save_detection_sim_figure(
            counts, dark, dark_hist.counts_per_bin / dark_hist.total_trials,
            prep["threshold"], "dark", out / "detect_sim_dark.png",
        ),
    ]
    return files, figures


def _run_threshold_scan(cfg: RunConfig, prep: dict, threads: int):
    from . import plots

    out = cfg.output_dir
    params = prep["params"]
    rows = [threshold_errors(params, t) for t in range(prep["max_threshold"] + 1)]
    lines = ["threshold,eps_B,eps_D,eps_avg,fidelity"]
    for r in rows:
        lines.append(f"{r.threshold},{r.eps_B!r},{r.eps_D!r},{r.eps_avg!r},{r.fidelity!r}")
    scan_csv = atomic_write_text(out / "threshold_scan.csv", "\n".join(lines) + "\n")
    best = optimal_threshold(params, prep["max_threshold"])
    report = _write_json(out / "optimal_threshold.json", _report_dict(best))
    fig = plots.save_threshold_scan_figure(
        [r.threshold for r in rows],
        [r.eps_avg for r in rows],
        best.threshold,
        out / "threshold_scan.png",
    )
    return [scan_csv, report], [fig]


def _run_efficiency(cfg: RunConfig, prep: dict, threads: int):
    from . import plots

    out = cfg.output_dir
    budget = prep["budget"]
    solid = na_to_solid_angle_fraction(budget.na)
    overall = chain_efficiency(budget)
    names = ["solid_angle"]
    cumulative = [solid]
    lines = ["stage,transmission,cumulative_efficiency"]
    lines.append(f"solid_angle,,{solid!r}")
    running = solid
    for stage in budget.stages:
        running *= stage.transmission
        names.append(stage.name)
        cumulative.append(running)
        lines.append(f"{stage.name},{stage.transmission!r},{running!r}")
    stages_csv = atomic_write_text(out / "efficiency_stages.csv", "\n".join(lines) + "\n")

    payload = {
        "na": budget.na,
        "solid_angle_fraction": solid,
        "chain_efficiency": overall,
        "comparison": None,
    }
    if prep["measured"] is not None:
        detections, trials = prep["measured"]
        payload["comparison"] = compare_with_measurement(
            overall, detections, trials
        ).to_json_dict()
    report = _write_json(out / "efficiency_report.json", payload)
    fig = plots.save_efficiency_figure(names, cumulative, out / "efficiency.png")
    return [stages_csv, report], [fig]


def _run_coherence_scan(cfg: RunConfig, prep: dict, threads: int):
    from . import plots

    out = cfg.output_dir
    curve = coherence_scan(
        prep["model"],
        prep["kind"],
        prep["delays"],
        prep["pi_time"],
        prep["pulse_errors"],
        prep["trials"],
        derive_stream(cfg.seed, 0),
        threads=threads,
        cycles=prep["cycles"],
    )
    curve_csv = out / "coherence_curve.csv"
    write_curve_csv(curve, curve_csv)
    summary = {
        "kind": prep["kind"],
        "cycles": prep["cycles"],
        "trials": prep["trials"],
        "points": len(curve.points),
        "fit": None,
    }
    fit_tau = None
    try:
        fit = fit_gaussian_decay(curve.points)
        fit_tau = fit.value
        summary["fit"] = {
            "tau_d_s": fit.value,
            "std_error": fit.std_error,
            "residual_norm": fit.residual_norm,
        }
    except ToolkitError as exc:
        summary["fit"] = {"error": str(exc)}
    report = _write_json(out / "scan_summary.json", summary)
    fig = plots.save_coherence_figure(
        curve, out / "coherence_scan.png", fit_tau=fit_tau, label=prep["kind"]
    )
    return [curve_csv, report], [fig]


def _run_coherence_fit(cfg: RunConfig, prep: dict, threads: int):
    from . import plots

    out = cfg.output_dir
    curve = read_curve_csv(prep["input_curve"])
    fit = fit_gaussian_decay(curve.points)
    report = _write_json(
        out / "coherence_fit.json",
        {
            "input": str(prep["input_curve"]),
            "tau_d_s": fit.value,
            "std_error": fit.std_error,
            "residual_norm": fit.residual_norm,
        },
    )
    fig = plots.save_coherence_figure(curve, out / "coherence_fit.png", fit_tau=fit.value)
    return [report], [fig]


def _run_vibration_analyze(cfg: RunConfig, prep: dict, threads: int):
    from . import plots

    out = cfg.output_dir
    series = read_timeseries_csv(prep["input_timeseries"])
    filtered = high_pass(series, prep["cutoff"])
    spectrum = amplitude_spectrum(filtered)
    peaks = find_peaks(spectrum, prep["min_peak_amplitude"], prep["fundamental"])
    spectrum_csv = out / "spectrum.csv"
    write_spectrum_csv(spectrum, spectrum_csv)
    peaks_json = out / "peaks.json"
    write_peaks_json(peaks, peaks_json)
    report = _write_json(
        out / "vibration_analysis.json",
        {
            "input": str(prep["input_timeseries"]),
            "samples": int(series.samples.size),
            "sample_rate_hz": series.sample_rate,
            "cutoff_hz": prep["cutoff"],
            "rms_raw_nm": rms(series),
            "rms_filtered_nm": rms(filtered),
            "rbw_hz": spectrum.rbw,
        },
    )
    fig = plots.save_spectrum_figure(
        spectrum, peaks.peaks, prep["cutoff"], out / "vibration_spectrum.png"
    )
    return [spectrum_csv, peaks_json, report], [fig]


def _run_vibration_synth(cfg: RunConfig, prep: dict, threads: int):
    from . import plots

    out = cfg.output_dir
    series = synthesize(
        prep["tones"],
        prep["drift"],
        prep["noise_rms"],
        prep["duration"],
        prep["sample_rate"],
        derive_stream(cfg.seed, 0),
    )
    ts_csv = out / "timeseries.csv"
    write_timeseries_csv(series, ts_csv)
    fig = plots.save_timeseries_figure(series, out / "vibration_timeseries.png")
    return [ts_csv], [fig]


_RUNNERS = {
    "detect-model": _run_detect_model,
    "detect-sim": _run_detect_sim,
    "threshold-scan": _run_threshold_scan,
    "efficiency": _run_efficiency,
    "coherence-scan": _run_coherence_scan,
    "coherence-fit": _run_coherence_fit,
    "vibration-analyze": _run_vibration_analyze,
    "vibration-synth": _run_vibration_synth,
}


def _execute(experiment: str, config_path: Path, seed, out_dir, threads: int) -> None:
    try:
        cfg = load_config(config_path, seed_override=seed, output_dir_override=out_dir)
        if cfg.experiment != experiment:
            raise ConfigError(
                f"config declares experiment {cfg.experiment!r} but "
                f"{experiment!r} was invoked",
                key="experiment",
            )
        prep = prepare_parameters(cfg.experiment, cfg.parameters)
    except ConfigError as exc:
        detail = f" (key: {exc.key})" if exc.key else ""
        click.echo(f"config error: {exc}{detail}", err=True)
        sys.exit(EXIT_CONFIG)

    try:
        cfg.output_dir.mkdir(parents=True, exist_ok=True)
        data_files, figures = _RUNNERS[experiment](cfg, prep, threads)
        manifest = _write_manifest(
            cfg.output_dir, _sha256(config_path), cfg.seed, data_files, figures
        )
    except ToolkitError as exc:
        click.echo(f"runtime error: {exc}", err=True)
        sys.exit(EXIT_RUNTIME)
    click.echo(
        f"{experiment}: wrote {len(data_files)} data files and "
        f"{len(figures)} figures to {cfg.output_dir} ({manifest.name})"
    )


@click.group()
@click.version_option(
    version=TOOL_VERSION,
    prog_name="ionlab",
    message=f"%(prog)s %(version)s (schema {SCHEMA_VERSION})",
)
def main() -> None:
    """Simulation and analysis toolkit for ion detection, coherence,
    collection efficiency, and vibration records."""


def _register(experiment: str) -> None:
    @main.command(name=experiment, help=f"Run the {experiment} experiment from a config file.")
    @click.option("--config", "config_path", required=True,
                  type=click.Path(exists=True, dir_okay=False, path_type=Path))
    @click.option("--seed", type=click.IntRange(0, 2**64 - 1), default=None,
                  help="Overrides the config seed.")
    @click.option("--out", "out_dir", type=click.Path(file_okay=False, path_type=Path),
                  default=None, help="Overrides the config output_dir.")
    @click.option("--threads", type=click.IntRange(1, 256), default=1, show_default=True,
                  help="Monte Carlo worker threads (results are thread-count independent).")
    def _cmd(config_path: Path, seed, out_dir, threads: int) -> None:
        _execute(experiment, config_path, seed, out_dir, threads)


for _name in EXPERIMENTS:
    _register(_name)


@main.command()
@click.option("--seed", type=click.IntRange(0, 2**64 - 1), default=42, show_default=True)
@click.option("--out", "out_dir", type=click.Path(file_okay=False, path_type=Path),
              default=None, help="Report directory [default: reproduce-<seed>].")
@click.option("--threads", type=click.IntRange(1, 256), default=1, show_default=True)
@click.option("--tolerance-scale", type=float, default=1.0, hidden=True)
def reproduce(seed: int, out_dir, threads: int, tolerance_scale: float) -> None:
    """Run every acceptance criterion and write a pass/fail report."""
    from .acceptance import format_table, run_all

    out = Path(out_dir) if out_dir is not None else Path(f"reproduce-{seed}")
    out.mkdir(parents=True, exist_ok=True)
    results, data_files, figures = run_all(
        seed=seed, threads=threads, tolerance_scale=tolerance_scale, out_dir=out
    )
    report = {
        "schema_version": SCHEMA_VERSION,
        "tool_version": TOOL_VERSION,
        "seed": seed,
        "tolerance_scale": tolerance_scale,
        "all_passed": all(r.passed for r in results),
        "criteria": [r.as_dict() for r in results],
    }
    report_path = _write_json(out / "acceptance_report.json", report)
    _write_manifest(out, None, seed, data_files, figures, reports=[report_path])
    click.echo(format_table(results))
    click.echo(f"report written to {report_path}")
    if not report["all_passed"]:
        sys.exit(1)


if __name__ == "__main__":
    main()
