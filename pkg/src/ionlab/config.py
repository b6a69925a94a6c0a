"""Run configuration: YAML loading, unit-suffix conversion, validation.

Config files carry explicit unit suffixes (t_det_us, sigma_hz, tau_c_s);
parsing strips the suffix and rescales so every downstream computation sees
seconds and hertz. Displacements keep the nanometre scale used throughout
the vibration pipeline. All schema and value problems raise ConfigError
before any computation starts; the CLI maps that to exit code 2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

import numpy as np
import yaml

from . import SCHEMA_VERSION
from .coherence import NoiseModel, PulseErrors, build_sequence
from .detection import DetectionParams
from .efficiency import EfficiencyBudget, EfficiencyStage, reference_budget
from .errors import ConfigError, DomainError

__all__ = [
    "EXPERIMENTS",
    "RunConfig",
    "convert_units",
    "load_config",
    "prepare_parameters",
]

EXPERIMENTS = (
    "detect-model",
    "detect-sim",
    "threshold-scan",
    "efficiency",
    "coherence-scan",
    "coherence-fit",
    "vibration-analyze",
    "vibration-synth",
)

_MAX_SEED = 2**64

# suffix -> scale into the internal unit (seconds, hertz, nanometres)
_UNIT_SUFFIXES = (
    ("_us", 1e-6),
    ("_ms", 1e-3),
    ("_s", 1.0),
    ("_khz", 1e3),
    ("_mhz", 1e6),
    ("_hz", 1.0),
    ("_nm", 1.0),
)


@dataclass(frozen=True)
class RunConfig:
    """One validated experiment invocation."""

    experiment: str
    seed: int
    parameters: dict
    output_dir: Path


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float, np.integer, np.floating)) and not isinstance(
        value, bool
    )


def _scale(key: str, value: Any, factor: float) -> Any:
    if _is_number(value):
        return float(value) * factor
    if isinstance(value, list) and all(_is_number(v) for v in value):
        return [float(v) * factor for v in value]
    raise ConfigError(
        f"unit-suffixed key {key!r} needs a number or list of numbers, got {value!r}",
        key=key,
    )


def convert_units(mapping: dict) -> dict:
    """Strip recognized unit suffixes and rescale values, recursively."""
    out: dict = {}
    for key, value in mapping.items():
        if isinstance(value, dict):
            value = convert_units(value)
        elif isinstance(value, list):
            value = [convert_units(v) if isinstance(v, dict) else v for v in value]
        target = key
        if isinstance(key, str):
            for suffix, factor in _UNIT_SUFFIXES:
                stem = key[: -len(suffix)]
                if key.endswith(suffix) and stem:
                    value = _scale(key, value, factor)
                    target = stem
                    break
        if target in out or (target != key and target in mapping):
            raise ConfigError(
                f"key {key!r} collides with {target!r} after unit conversion",
                key=target,
            )
        out[target] = value
    return out


def load_config(
    path,
    seed_override: Optional[int] = None,
    output_dir_override=None,
) -> RunConfig:
    """Parse and validate a YAML run configuration."""
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}" if mark is not None else ""
        raise ConfigError(f"YAML parse error{where}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config root must be a mapping, got {type(raw).__name__}")

    version = raw.get("schema_version")
    if version is None:
        raise ConfigError("config is missing schema_version", key="schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(
            f"schema_version {version!r} is not supported (expected {SCHEMA_VERSION})",
            key="schema_version",
        )

    experiment = raw.get("experiment")
    if experiment not in EXPERIMENTS:
        raise ConfigError(
            f"unknown experiment {experiment!r}; expected one of {', '.join(EXPERIMENTS)}",
            key="experiment",
        )

    seed = seed_override if seed_override is not None else raw.get("seed")
    if seed is None:
        raise ConfigError(
            "no seed: set it in the config or pass --seed", key="seed"
        )
    if not isinstance(seed, (int, np.integer)) or isinstance(seed, bool):
        raise ConfigError(f"seed must be an integer, got {seed!r}", key="seed")
    if not 0 <= seed < _MAX_SEED:
        raise ConfigError(f"seed must fit in 64 bits, got {seed}", key="seed")

    out_dir = output_dir_override if output_dir_override is not None else raw.get("output_dir")
    if out_dir is None:
        raise ConfigError(
            "no output_dir: set it in the config or pass --out", key="output_dir"
        )

    params = raw.get("parameters", {})
    if not isinstance(params, dict):
        raise ConfigError("parameters must be a mapping", key="parameters")

    extra = set(raw) - {"schema_version", "experiment", "seed", "output_dir", "parameters"}
    if extra:
        raise ConfigError(f"unknown top-level keys: {sorted(extra)}")

    return RunConfig(
        experiment=experiment,
        seed=int(seed),
        parameters=convert_units(params),
        output_dir=Path(out_dir),
    )


class _Reader:
    """Pop-and-check access to an experiment's parameter mapping."""

    def __init__(self, experiment: str, params: dict):
        self.experiment = experiment
        self.params = dict(params)

    def _missing(self, key: str):
        return ConfigError(
            f"experiment {self.experiment!r} requires parameter {key!r}", key=key
        )

    def require_number(self, key: str) -> float:
        if key not in self.params:
            raise self._missing(key)
        value = self.params.pop(key)
        if not _is_number(value):
            raise ConfigError(f"{key} must be a number, got {value!r}", key=key)
        return float(value)

    def optional_number(self, key: str, default: float) -> float:
        if key not in self.params:
            return default
        value = self.params.pop(key)
        if not _is_number(value):
            raise ConfigError(f"{key} must be a number, got {value!r}", key=key)
        return float(value)

    def require_int(self, key: str, minimum: int) -> int:
        if key not in self.params:
            raise self._missing(key)
        return self._as_int(key, self.params.pop(key), minimum)

    def optional_int(self, key: str, minimum: int, default):
        if key not in self.params:
            return default
        return self._as_int(key, self.params.pop(key), minimum)

    def _as_int(self, key: str, value, minimum: int) -> int:
        if not isinstance(value, (int, np.integer)) or isinstance(value, bool):
            raise ConfigError(
                f"{key} must be an integer >= {minimum}, got {value!r}", key=key
            )
        if value < minimum:
            raise ConfigError(
                f"{key} must be an integer >= {minimum}, got {value}", key=key
            )
        return int(value)

    def require_str(self, key: str) -> str:
        if key not in self.params:
            raise self._missing(key)
        value = self.params.pop(key)
        if not isinstance(value, str) or not value:
            raise ConfigError(f"{key} must be a non-empty string, got {value!r}", key=key)
        return value

    def pop(self, key: str, default=None):
        return self.params.pop(key, default)

    def finish(self) -> None:
        if self.params:
            names = ", ".join(repr(k) for k in sorted(self.params))
            raise ConfigError(
                f"unknown parameters for {self.experiment!r}: {names}",
                key=next(iter(sorted(self.params))),
            )


def _detection_params(r: _Reader) -> DetectionParams:
    fields = {k: r.require_number(k) for k in ("n_bar_B", "n_bar_D", "t_det", "t_delay", "tau")}
    try:
        return DetectionParams(**fields)
    except DomainError as exc:
        raise ConfigError(str(exc)) from exc


def _prepare_detect_model(r: _Reader) -> dict:
    params = _detection_params(r)
    threshold = r.require_int("threshold", 0)
    max_threshold = r.optional_int(
        "max_threshold", 1, default=int(math.ceil(params.n_bar_B))
    )
    r.finish()
    return {"params": params, "threshold": threshold, "max_threshold": max_threshold}


def _prepare_detect_sim(r: _Reader) -> dict:
    params = _detection_params(r)
    threshold = r.require_int("threshold", 0)
    trials = r.require_int("trials", 1)
    r.finish()
    return {"params": params, "threshold": threshold, "trials": trials}


def _prepare_threshold_scan(r: _Reader) -> dict:
    params = _detection_params(r)
    max_threshold = r.optional_int(
        "max_threshold", 1, default=int(math.ceil(params.n_bar_B))
    )
    r.finish()
    return {"params": params, "max_threshold": max_threshold}


def _prepare_efficiency(r: _Reader) -> dict:
    use_reference = r.pop("use_reference", False)
    if use_reference not in (True, False):
        raise ConfigError("use_reference must be a boolean", key="use_reference")
    try:
        if use_reference:
            budget = reference_budget()
        else:
            na = r.require_number("na")
            raw_stages = r.pop("stages", [])
            if not isinstance(raw_stages, list):
                raise ConfigError("stages must be a list of mappings", key="stages")
            stages = []
            for entry in raw_stages:
                if not isinstance(entry, dict) or set(entry) != {"name", "transmission"}:
                    raise ConfigError(
                        f"each stage needs exactly name and transmission, got {entry!r}",
                        key="stages",
                    )
                stages.append(
                    EfficiencyStage(
                        name=entry["name"], transmission=entry["transmission"]
                    )
                )
            budget = EfficiencyBudget(na=na, stages=tuple(stages))
    except DomainError as exc:
        raise ConfigError(str(exc)) from exc

    measured = r.pop("measured")
    if measured is not None:
        if not isinstance(measured, dict):
            raise ConfigError("measured must be a mapping", key="measured")
        m = _Reader(r.experiment, measured)
        detections = m.require_int("detections", 0)
        trials = m.require_int("trials", 1)
        m.finish()
        measured = (detections, trials)
    r.finish()
    return {"budget": budget, "measured": measured}


def _delay_grid(r: _Reader):
    if "delays" not in r.params:
        raise r._missing("delays")
    raw = r.params.pop("delays")
    if isinstance(raw, list):
        if not all(_is_number(v) for v in raw):
            raise ConfigError("delays list must hold numbers", key="delays")
        return [float(v) for v in raw]
    if isinstance(raw, dict):
        g = _Reader(r.experiment, raw)
        start = g.require_number("start")
        stop = g.require_number("stop")
        count = g.require_int("count", 2)
        spacing = g.pop("spacing", "linear")
        g.finish()
        if spacing == "linear":
            return np.linspace(start, stop, count).tolist()
        if spacing == "log":
            if start <= 0:
                raise ConfigError("log spacing needs start > 0", key="delays")
            return np.geomspace(start, stop, count).tolist()
        raise ConfigError(
            f"spacing must be 'linear' or 'log', got {spacing!r}", key="delays"
        )
    raise ConfigError(
        "delays must be a list or a start/stop/count mapping", key="delays"
    )


def _noise_model(r: _Reader) -> NoiseModel:
    raw = r.pop("noise")
    if not isinstance(raw, dict):
        raise ConfigError(
            "experiment needs a noise mapping with at least one component",
            key="noise",
        )
    n = _Reader(r.experiment, raw)
    parts = []
    try:
        offset = n.pop("static_offset")
        if offset is not None:
            if not _is_number(offset):
                raise ConfigError("static_offset must be a number", key="noise")
            parts.append(NoiseModel.static_offset(offset))
        sigma_qs = n.pop("quasi_static_sigma")
        if sigma_qs is not None:
            if not _is_number(sigma_qs):
                raise ConfigError("quasi_static_sigma must be a number", key="noise")
            parts.append(NoiseModel.quasi_static_gaussian(sigma_qs))
        ou_list = n.pop("ou", [])
        if not isinstance(ou_list, list):
            raise ConfigError("noise.ou must be a list", key="noise")
        for entry in ou_list:
            if not isinstance(entry, dict) or set(entry) != {"sigma", "tau_c"}:
                raise ConfigError(
                    f"each ou component needs exactly sigma and tau_c, got {entry!r}",
                    key="noise",
                )
            parts.append(
                NoiseModel.ornstein_uhlenbeck(entry["sigma"], entry["tau_c"])
            )
    except DomainError as exc:
        raise ConfigError(str(exc), key="noise") from exc
    n.finish()
    if not parts:
        raise ConfigError("noise mapping defines no components", key="noise")
    if len(parts) == 1:
        return parts[0]
    return NoiseModel.composite(*parts)


def _prepare_coherence_scan(r: _Reader) -> dict:
    kind = r.require_str("kind")
    cycles = r.optional_int("cycles", 1, default=None)
    delays = _delay_grid(r)
    trials = r.require_int("trials", 100)
    pi_time = r.require_number("pi_time")
    amplitude_error = r.optional_number("amplitude_error", 0.0)
    detuning_offset = r.optional_number("detuning_offset", 0.0)
    model = _noise_model(r)
    r.finish()
    try:
        errs = PulseErrors(
            amplitude_error=amplitude_error, detuning_offset=detuning_offset
        )
        if not delays:
            raise DomainError("delays must be non-empty")
        # probe the most constrained point so infeasible sequences fail here
        build_sequence(kind, min(delays), pi_time, errs, cycles=cycles)
    except DomainError as exc:
        raise ConfigError(str(exc)) from exc
    return {
        "kind": kind,
        "cycles": cycles,
        "delays": delays,
        "trials": trials,
        "pi_time": pi_time,
        "pulse_errors": errs,
        "model": model,
    }


def _prepare_coherence_fit(r: _Reader) -> dict:
    path = r.require_str("input_curve")
    r.finish()
    return {"input_curve": Path(path)}


def _prepare_vibration_analyze(r: _Reader) -> dict:
    path = r.require_str("input_timeseries")
    cutoff = r.optional_number("cutoff", 0.03)
    min_peak = r.optional_number("min_peak_amplitude", 0.5)
    fundamental = r.optional_number("fundamental", math.nan)
    r.finish()
    if not cutoff > 0:
        raise ConfigError(f"cutoff must be > 0, got {cutoff}", key="cutoff")
    if not min_peak >= 0:
        raise ConfigError(
            f"min_peak_amplitude must be >= 0, got {min_peak}", key="min_peak_amplitude"
        )
    if not (math.isnan(fundamental) or fundamental > 0):
        raise ConfigError(
            f"fundamental must be > 0, got {fundamental}", key="fundamental"
        )
    return {
        "input_timeseries": Path(path),
        "cutoff": cutoff,
        "min_peak_amplitude": min_peak,
        "fundamental": None if math.isnan(fundamental) else fundamental,
    }


def _prepare_vibration_synth(r: _Reader) -> dict:
    duration = r.require_number("duration")
    sample_rate = r.require_number("sample_rate")
    raw_tones = r.pop("tones", [])
    if not isinstance(raw_tones, list):
        raise ConfigError("tones must be a list of mappings", key="tones")
    tones = []
    for entry in raw_tones:
        if not isinstance(entry, dict):
            raise ConfigError(f"each tone must be a mapping, got {entry!r}", key="tones")
        t = _Reader(r.experiment, entry)
        freq = t.require_number("frequency")
        amp = t.require_number("amplitude")
        phase = t.optional_number("phase", 0.0)
        t.finish()
        if not freq > 0:
            raise ConfigError(f"tone frequency must be > 0, got {freq}", key="tones")
        if not amp >= 0:
            raise ConfigError(f"tone amplitude must be >= 0, got {amp}", key="tones")
        if sample_rate <= 2.0 * freq:
            raise ConfigError(
                f"sample_rate {sample_rate} Hz aliases a {freq} Hz tone", key="tones"
            )
        tones.append((freq, amp, phase))
    drift = r.optional_number("drift", 0.0)
    noise_rms = r.optional_number("noise_rms", 0.0)
    r.finish()
    if not duration > 0:
        raise ConfigError(f"duration must be > 0, got {duration}", key="duration")
    if not sample_rate > 0:
        raise ConfigError(
            f"sample_rate must be > 0, got {sample_rate}", key="sample_rate"
        )
    if not noise_rms >= 0:
        raise ConfigError(f"noise_rms must be >= 0, got {noise_rms}", key="noise_rms")
    return {
        "duration": duration,
        "sample_rate": sample_rate,
        "tones": tones,
        "drift": drift,
        "noise_rms": noise_rms,
    }


_PREPARERS = {
    "detect-model": _prepare_detect_model,
    "detect-sim": _prepare_detect_sim,
    "threshold-scan": _prepare_threshold_scan,
    "efficiency": _prepare_efficiency,
    "coherence-scan": _prepare_coherence_scan,
    "coherence-fit": _prepare_coherence_fit,
    "vibration-analyze": _prepare_vibration_analyze,
    "vibration-synth": _prepare_vibration_synth,
}


def prepare_parameters(experiment: str, params: dict) -> dict:
    """Check one experiment's parameters and build the typed inputs.

    Raises ConfigError (naming the offending key where there is one) for
    anything that would fail module-level validation at run time.
    """
    if experiment not in _PREPARERS:
        raise ConfigError(f"unknown experiment {experiment!r}", key="experiment")
    return _PREPARERS[experiment](_Reader(experiment, params))
