"""Two-level qubit dephasing simulator.

Builds pulse sequences (Ramsey, Hahn echo, XY4, repeated-XY4), samples
stochastic detuning records, propagates the qubit through them, and scans
contrast against delay time to produce coherence curves.

Propagation has two routes. The toggled-phase route applies to ideal
instantaneous pulses: free evolution accumulates phase 2*pi*integral(delta)
with a sign that flips at each pi pulse, and the survival probability is
(1 + cos(phase - analysis_phase)) / 2. The unitary route composes 2x2
matrices for finite-duration pulses (Rabi rotation with the instantaneous
detuning active) and delays; it handles amplitude and frequency errors.
Both routes agree to rounding for ideal pulses, which a test pins down.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from scipy.signal import lfilter

from .errors import DomainError, InfeasibleSequenceError
from .fileutil import atomic_write_text
from .numerics import BLOCK_TRIALS, RandomStream, block_ranges, map_blocks

__all__ = [
    "NoiseModel",
    "PulseSpec",
    "Delay",
    "PulseErrors",
    "PulseSequence",
    "CoherenceCurve",
    "GradientSpec",
    "DetuningTrajectory",
    "build_sequence",
    "sample_trajectory",
    "propagate",
    "pulse_unitary",
    "coherence_scan",
    "gradient_detuning",
    "pi_time_to_rabi",
    "write_curve_csv",
    "read_curve_csv",
    "N_ANALYSIS_PHASES",
]

# analysis-phase grid used to recover the fringe amplitude in full mode
N_ANALYSIS_PHASES = 8

_PI = math.pi
_ANGLE_TOL = 1e-9

_CURVE_HEADER = "delay_s,contrast,contrast_err"


def _require_finite(name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise DomainError(f"{name} must be finite, got {value!r}")
    return value


@dataclass(frozen=True)
class NoiseModel:
    """Detuning-noise process driving qubit dephasing.

    Variants: a fixed offset, a shot-to-shot Gaussian draw held constant
    within each trial, an Ornstein-Uhlenbeck process with stationary
    standard deviation sigma and correlation time tau_c, and a composite
    that sums independent component processes.
    """

    variant: str
    delta0: float = 0.0
    sigma: float = 0.0
    tau_c: float = 0.0
    parts: tuple["NoiseModel", ...] = ()

    def __post_init__(self) -> None:
        if self.variant == "static_offset":
            _require_finite("delta0", self.delta0)
        elif self.variant == "quasi_static_gaussian":
            if not (math.isfinite(self.sigma) and self.sigma >= 0.0):
                raise DomainError(f"sigma must be >= 0, got {self.sigma!r}")
        elif self.variant == "ornstein_uhlenbeck":
            if not (math.isfinite(self.sigma) and self.sigma >= 0.0):
                raise DomainError(f"sigma must be >= 0, got {self.sigma!r}")
            if not (math.isfinite(self.tau_c) and self.tau_c > 0.0):
                raise DomainError(f"tau_c must be > 0, got {self.tau_c!r}")
        elif self.variant == "composite":
            if not self.parts:
                raise DomainError("composite noise model needs at least one part")
            for part in self.parts:
                if not isinstance(part, NoiseModel) or part.variant == "composite":
                    raise DomainError("composite parts must be simple noise models")
        else:
            raise DomainError(f"unknown noise model variant {self.variant!r}")

    @classmethod
    def static_offset(cls, delta0: float) -> "NoiseModel":
        return cls(variant="static_offset", delta0=float(delta0))

    @classmethod
    def quasi_static_gaussian(cls, sigma: float) -> "NoiseModel":
        return cls(variant="quasi_static_gaussian", sigma=float(sigma))

    @classmethod
    def ornstein_uhlenbeck(cls, sigma: float, tau_c: float) -> "NoiseModel":
        return cls(variant="ornstein_uhlenbeck", sigma=float(sigma),
                   tau_c=float(tau_c))

    @classmethod
    def composite(cls, *parts: "NoiseModel") -> "NoiseModel":
        flat: list[NoiseModel] = []
        for part in parts:
            if isinstance(part, NoiseModel) and part.variant == "composite":
                flat.extend(part.parts)
            else:
                flat.append(part)
        return cls(variant="composite", parts=tuple(flat))

    def components(self) -> tuple["NoiseModel", ...]:
        """Simple constituent processes; the model itself if not composite."""
        if self.variant == "composite":
            return self.parts
        return (self,)

    def min_correlation_time(self) -> float:
        """Shortest OU correlation time present, inf if none."""
        taus = [p.tau_c for p in self.components()
                if p.variant == "ornstein_uhlenbeck"]
        return min(taus) if taus else math.inf


@dataclass(frozen=True)
class PulseSpec:
    """One resonant drive pulse.

    phase is the rotation-axis azimuth in radians (0 = X, pi/2 = Y), angle
    the nominal rotation angle, duration the wall time the drive is on
    (0 means an idealized instantaneous rotation). amplitude_error scales
    the Rabi rate by (1 + amplitude_error); detuning_offset is a frequency
    error in Hz active only while the pulse runs.
    """

    phase: float
    angle: float
    duration: float
    amplitude_error: float = 0.0
    detuning_offset: float = 0.0

    def __post_init__(self) -> None:
        _require_finite("phase", self.phase)
        angle = _require_finite("angle", self.angle)
        if not 0.0 < angle <= 2.0 * _PI:
            raise DomainError(f"pulse angle must be in (0, 2*pi], got {angle!r}")
        duration = _require_finite("duration", self.duration)
        if duration < 0.0:
            raise DomainError(f"pulse duration must be >= 0, got {duration!r}")
        amp = _require_finite("amplitude_error", self.amplitude_error)
        if amp <= -1.0:
            raise DomainError("amplitude_error <= -1 would invert the drive")
        _require_finite("detuning_offset", self.detuning_offset)

    @property
    def is_pi(self) -> bool:
        return abs(self.angle - _PI) < _ANGLE_TOL


@dataclass(frozen=True)
class Delay:
    """Free evolution for a fixed duration."""

    duration: float

    def __post_init__(self) -> None:
        duration = _require_finite("duration", self.duration)
        if duration <= 0.0:
            raise DomainError(f"delay duration must be > 0, got {duration!r}")


@dataclass(frozen=True)
class PulseErrors:
    """Systematic pulse imperfections applied uniformly by the builder."""

    amplitude_error: float = 0.0
    detuning_offset: float = 0.0

    def __post_init__(self) -> None:
        amp = _require_finite("amplitude_error", self.amplitude_error)
        if amp <= -1.0:
            raise DomainError("amplitude_error <= -1 would invert the drive")
        _require_finite("detuning_offset", self.detuning_offset)

    @property
    def is_zero(self) -> bool:
        return self.amplitude_error == 0.0 and self.detuning_offset == 0.0


SequenceElement = Union[PulseSpec, Delay]


@dataclass
class PulseSequence:
    """Ordered pulses and delays, bracketed by pi/2 pulses."""

    elements: list
    total_free_evolution: float

    def __post_init__(self) -> None:
        if not self.elements:
            raise DomainError("sequence has no elements")
        for el in self.elements:
            if not isinstance(el, (PulseSpec, Delay)):
                raise DomainError(f"invalid sequence element {el!r}")
        first, last = self.elements[0], self.elements[-1]
        for end in (first, last):
            if not isinstance(end, PulseSpec) or abs(end.angle - _PI / 2) > _ANGLE_TOL:
                raise DomainError("sequence must begin and end with a pi/2 pulse")
        total = math.fsum(el.duration for el in self.elements
                          if isinstance(el, Delay))
        if not math.isclose(total, self.total_free_evolution,
                            rel_tol=1e-9, abs_tol=1e-12):
            raise DomainError(
                f"delay durations sum to {total!r}, not the declared "
                f"total_free_evolution {self.total_free_evolution!r}"
            )

    @property
    def wall_duration(self) -> float:
        """Total elapsed time including pulse durations."""
        return math.fsum(el.duration for el in self.elements)

    @property
    def pi_pulse_count(self) -> int:
        return sum(1 for el in self.elements
                   if isinstance(el, PulseSpec) and el.is_pi)


@dataclass
class CoherenceCurve:
    """Contrast vs delay, with standard errors; the scan output."""

    points: list

    def __post_init__(self) -> None:
        prev = 0.0
        for point in self.points:
            if len(point) != 3:
                raise DomainError(f"curve point must be a 3-tuple, got {point!r}")
            delay, contrast, err = (float(v) for v in point)
            if not delay > prev:
                raise DomainError("curve delays must be positive and strictly increasing")
            if not 0.0 <= contrast <= 1.0 + 1e-9:
                raise DomainError(f"contrast {contrast!r} outside [0, 1]")
            if not (math.isfinite(err) and err >= 0.0):
                raise DomainError(f"contrast_err must be >= 0, got {err!r}")
            prev = delay


@dataclass(frozen=True)
class GradientSpec:
    """Magnetic field gradient (G/m) and qubit sensitivity (Hz/G)."""

    gradient: float
    sensitivity: float

    def __post_init__(self) -> None:
        _require_finite("gradient", self.gradient)
        sens = _require_finite("sensitivity", self.sensitivity)
        if sens <= 0.0:
            raise DomainError(f"sensitivity must be > 0, got {sens!r}")


@dataclass(frozen=True, eq=False)
class DetuningTrajectory:
    """Detuning record in Hz on a uniform time grid.

    values[k] holds the detuning at time k*dt and is treated as constant
    over [k*dt, (k+1)*dt) when integrating.
    """

    values: np.ndarray
    dt: float

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1 or values.size < 2:
            raise DomainError("trajectory needs at least two samples")
        if not (math.isfinite(self.dt) and self.dt > 0.0):
            raise DomainError(f"trajectory dt must be > 0, got {self.dt!r}")
        object.__setattr__(self, "values", values)

    @property
    def duration(self) -> float:
        return (self.values.size - 1) * self.dt

    def value_at(self, t: float) -> float:
        idx = int(t / self.dt)
        if idx < 0:
            raise DomainError(f"trajectory lookup at negative time {t!r}")
        return float(self.values[min(idx, self.values.size - 1)])

    def integral(self, t0: float, t1: float) -> float:
        """Integral of the piecewise-constant record over [t0, t1], in Hz*s."""
        if t1 < t0:
            raise DomainError("integration interval is reversed")
        edges = np.arange(self.values.size) * self.dt
        lo = np.clip(edges[:-1], t0, t1)
        hi = np.clip(edges[1:], t0, t1)
        return float(np.dot(self.values[:-1], hi - lo))


_KIND_CYCLES_RE = re.compile(r"xyn\{(\d+)\}")
_KIND_XYN_RE = re.compile(r"xy(\d+)")


def _parse_kind(kind: str, cycles: Optional[int]):
    """Resolve a sequence-kind name to (base, cycle count)."""
    if cycles is not None:
        if not isinstance(cycles, int) or isinstance(cycles, bool) or cycles < 1:
            raise DomainError(f"cycles must be a positive integer, got {cycles!r}")
    if kind in ("ramsey", "hahn"):
        if cycles is not None:
            raise DomainError(f"{kind} takes no cycle count")
        return kind, None
    if kind == "xyn":
        if cycles is None:
            raise DomainError("xyn needs a cycle count, e.g. 'xyn{8}' or cycles=8")
        return "xyn", cycles
    m = _KIND_CYCLES_RE.fullmatch(kind)
    if m:
        if cycles is not None:
            raise DomainError("cycle count given both in the kind and as an argument")
        c = int(m.group(1))
        if c < 1:
            raise DomainError("cycle count must be >= 1")
        return "xyn", c
    m = _KIND_XYN_RE.fullmatch(kind)
    if m:
        if cycles is not None:
            raise DomainError("cycle count given both in the kind and as an argument")
        n_pulses = int(m.group(1))
        if n_pulses < 4 or n_pulses % 4 != 0:
            raise DomainError(
                f"'{kind}' is not a whole number of 4-pulse cycles"
            )
        return "xyn", n_pulses // 4
    raise DomainError(f"unknown sequence kind {kind!r}")


def build_sequence(
    kind: str,
    total_delay: float,
    pi_time: float,
    pulse_errors: Optional[PulseErrors] = None,
    cycles: Optional[int] = None,
) -> PulseSequence:
    """Assemble a pi/2-bracketed sequence with total_delay of free evolution.

    kind: 'ramsey', 'hahn', 'xy4', 'xyn{c}' (or kind='xyn' with cycles=c);
    'xy32' style names mean the 4-pulse block repeated that many pulses / 4
    times. pi_time = 0 requests ideal instantaneous pulses; pi/2 pulses take
    half the pi time. Raises InfeasibleSequenceError when the summed pulse
    time exceeds total_delay, since then free evolution no longer dominates
    the schedule the delays describe.
    """
    total_delay = _require_finite("total_delay", total_delay)
    if total_delay <= 0.0:
        raise DomainError(f"total_delay must be > 0, got {total_delay!r}")
    pi_time = _require_finite("pi_time", pi_time)
    if pi_time < 0.0:
        raise DomainError(f"pi_time must be >= 0, got {pi_time!r}")
    base, n_cycles = _parse_kind(kind, cycles)
    errs = pulse_errors if pulse_errors is not None else PulseErrors()

    def half_pulse(phase: float) -> PulseSpec:
        return PulseSpec(phase, _PI / 2, pi_time / 2.0,
                         errs.amplitude_error, errs.detuning_offset)

    def pi_pulse(phase: float) -> PulseSpec:
        return PulseSpec(phase, _PI, pi_time,
                         errs.amplitude_error, errs.detuning_offset)

    if base == "ramsey":
        delays = [total_delay]
        pi_phases: list[float] = []
    elif base == "hahn":
        delays = [total_delay / 2.0, total_delay / 2.0]
        pi_phases = [0.0]
    else:
        n_pi = 4 * n_cycles
        tau = total_delay / n_pi
        delays = [tau / 2.0] + [tau] * (n_pi - 1) + [tau / 2.0]
        pi_phases = [0.0, _PI / 2] * (2 * n_cycles)

    total_pulse_time = pi_time * len(pi_phases) + 2 * (pi_time / 2.0)
    if total_pulse_time > total_delay:
        raise InfeasibleSequenceError(
            f"{total_pulse_time!r} s of pulses does not fit into "
            f"{total_delay!r} s of free evolution"
        )

    # the final pi/2 phase makes the ideal-pulse survival probability equal
    # (1 + cos(toggled phase))/2 for every kind: an odd pi-pulse count flips
    # the closing fringe, which the extra pi on the analysis pulse undoes
    final_phase = _PI if len(pi_phases) % 2 == 1 else 0.0

    elements: list = [half_pulse(0.0)]
    for i, d in enumerate(delays):
        elements.append(Delay(d))
        if i < len(pi_phases):
            elements.append(pi_pulse(pi_phases[i]))
    elements.append(half_pulse(final_phase))
    return PulseSequence(elements=elements,
                         total_free_evolution=math.fsum(delays))


def sample_trajectory(
    model: NoiseModel,
    duration: float,
    dt: float,
    stream: RandomStream,
) -> DetuningTrajectory:
    """Draw one detuning record covering at least `duration` at spacing dt.

    The OU update x_{k+1} = x_k e^(-dt/tau_c) + sigma sqrt(1 - e^(-2dt/tau_c))
    xi_k is distribution-exact at any step size; the first sample comes from
    the stationary distribution. Composite models sum per-part records drawn
    from derived substreams, one per part index.
    """
    duration = _require_finite("duration", duration)
    dt = _require_finite("dt", dt)
    if duration <= 0.0:
        raise DomainError(f"duration must be > 0, got {duration!r}")
    if not 0.0 < dt <= duration:
        raise DomainError(f"dt must satisfy 0 < dt <= duration, got {dt!r}")
    n_steps = max(1, math.ceil(duration / dt - 1e-12))
    n_samples = n_steps + 1

    if model.variant == "composite":
        values = np.zeros(n_samples)
        for ci, part in enumerate(model.parts):
            values = values + sample_trajectory(
                part, duration, dt, stream.substream(ci)
            ).values
        return DetuningTrajectory(values=values, dt=dt)

    rng = stream.generator()
    if model.variant == "static_offset":
        values = np.full(n_samples, model.delta0)
    elif model.variant == "quasi_static_gaussian":
        values = np.full(n_samples, model.sigma * rng.standard_normal())
    else:
        alpha = math.exp(-dt / model.tau_c)
        drive = np.empty(n_samples)
        drive[0] = model.sigma * rng.standard_normal()
        drive[1:] = (model.sigma * math.sqrt(1.0 - alpha * alpha)
                     * rng.standard_normal(n_steps))
        values = lfilter([1.0], [1.0, -alpha], drive)
    return DetuningTrajectory(values=values, dt=dt)


def _rotation(angle: float, phase: float) -> np.ndarray:
    """Instantaneous rotation by `angle` about the equatorial axis `phase`."""
    c = math.cos(angle / 2.0)
    s = math.sin(angle / 2.0)
    return np.array(
        [[c, -1j * s * np.exp(-1j * phase)],
         [-1j * s * np.exp(1j * phase), c]]
    )


def _axis_angle_step(vx: float, vy: float, vz: float, t: float) -> np.ndarray:
    """exp(-i t (vx sx + vy sy + vz sz)/2), closed form so it stays unitary."""
    norm = math.sqrt(vx * vx + vy * vy + vz * vz)
    theta = norm * t
    if theta == 0.0:
        return np.eye(2, dtype=complex)
    c = math.cos(theta / 2.0)
    s = math.sin(theta / 2.0)
    nx, ny, nz = vx / norm, vy / norm, vz / norm
    return np.array(
        [[c - 1j * s * nz, -1j * s * (nx - 1j * ny)],
         [-1j * s * (nx + 1j * ny), c + 1j * s * nz]]
    )


def pulse_unitary(pulse: PulseSpec, detuning_hz: float = 0.0) -> np.ndarray:
    """Unitary for one pulse with a constant background detuning in Hz.

    The drive runs at Rabi rate angle/duration scaled by (1+amplitude_error)
    while (detuning_hz + detuning_offset) stays active on the z axis.
    Zero-duration pulses reduce to the ideal rotation with the scaled angle.
    """
    detuning_hz = _require_finite("detuning_hz", detuning_hz)
    if pulse.duration == 0.0:
        return _rotation(pulse.angle * (1.0 + pulse.amplitude_error), pulse.phase)
    rabi = (pulse.angle / pulse.duration) * (1.0 + pulse.amplitude_error)
    wz = 2.0 * _PI * (detuning_hz + pulse.detuning_offset)
    return _axis_angle_step(rabi * math.cos(pulse.phase),
                            rabi * math.sin(pulse.phase),
                            wz, pulse.duration)


# minimum number of integration substeps across a finite pulse
_PULSE_SUBSTEPS = 20


def _apply_pulse(psi, pulse: PulseSpec, phase: float,
                 trajectory: DetuningTrajectory, t: float):
    """Advance the state through one pulse whose axis azimuth is `phase`."""
    if pulse.duration == 0.0:
        spec = PulseSpec(phase, pulse.angle, 0.0,
                         pulse.amplitude_error, pulse.detuning_offset)
        return pulse_unitary(spec) @ psi
    n_sub = max(_PULSE_SUBSTEPS, math.ceil(pulse.duration / trajectory.dt))
    h = pulse.duration / n_sub
    rabi = (pulse.angle / pulse.duration) * (1.0 + pulse.amplitude_error)
    vx = rabi * math.cos(phase)
    vy = rabi * math.sin(phase)
    for i in range(n_sub):
        delta = trajectory.value_at(t + (i + 0.5) * h) + pulse.detuning_offset
        psi = _axis_angle_step(vx, vy, 2.0 * _PI * delta, h) @ psi
    return psi


def _toggled_eligible(sequence: PulseSequence) -> bool:
    return all(
        el.duration == 0.0 and el.amplitude_error == 0.0
        and el.detuning_offset == 0.0
        for el in sequence.elements if isinstance(el, PulseSpec)
    )


def _check_coverage(sequence: PulseSequence, trajectory: DetuningTrajectory):
    wall = sequence.wall_duration
    if trajectory.duration < wall - 1e-12:
        raise DomainError(
            f"trajectory covers {trajectory.duration!r} s but the sequence "
            f"runs for {wall!r} s"
        )


def _toggled_phase(sequence: PulseSequence,
                   trajectory: DetuningTrajectory) -> float:
    phi = 0.0
    sign = 1.0
    t = 0.0
    for el in sequence.elements:
        if isinstance(el, Delay):
            phi += sign * 2.0 * _PI * trajectory.integral(t, t + el.duration)
            t += el.duration
        else:
            if el.is_pi:
                sign = -sign
            t += el.duration
    return phi


def _analysis_sign(sequence: PulseSequence) -> float:
    # commuting the pi pulses out of the sequence flips the sense of the
    # closing pulse's phase once per pulse, so an odd count reverses how the
    # analysis phase enters the fringe
    return 1.0 if sequence.pi_pulse_count % 2 == 0 else -1.0


def _state_before_final(sequence: PulseSequence,
                        trajectory: DetuningTrajectory):
    """Propagate up to (not including) the closing analysis pulse."""
    psi = np.array([1.0, 0.0], dtype=complex)
    t = 0.0
    for el in sequence.elements[:-1]:
        if isinstance(el, Delay):
            phi = 2.0 * _PI * trajectory.integral(t, t + el.duration)
            psi = np.array([np.exp(-1j * phi / 2.0) * psi[0],
                            np.exp(1j * phi / 2.0) * psi[1]])
        else:
            psi = _apply_pulse(psi, el, el.phase, trajectory, t)
        t += el.duration
    return psi, t


def _finish(psi, final_pulse: PulseSpec, analysis_phase: float,
            sign: float, trajectory: DetuningTrajectory, t: float) -> float:
    phase = final_pulse.phase + sign * analysis_phase
    psi = _apply_pulse(psi, final_pulse, phase, trajectory, t)
    return float(abs(psi[1]) ** 2)


def propagate(
    sequence: PulseSequence,
    trajectory: DetuningTrajectory,
    analysis_phase: float = 0.0,
    method: str = "auto",
) -> float:
    """Survival probability for one sequence over one detuning record.

    method 'auto' uses the toggled-phase route when every pulse is ideal and
    instantaneous, the unitary route otherwise; 'toggled' and 'unitary'
    force a route (forcing 'toggled' on an ineligible sequence is an error).
    analysis_phase offsets the closing pi/2 pulse so a fringe can be traced.
    """
    _check_coverage(sequence, trajectory)
    analysis_phase = _require_finite("analysis_phase", analysis_phase)
    if method == "auto":
        method = "toggled" if _toggled_eligible(sequence) else "unitary"
    if method == "toggled":
        if not _toggled_eligible(sequence):
            raise DomainError(
                "toggled-phase route needs ideal instantaneous pulses"
            )
        phi = _toggled_phase(sequence, trajectory)
        return 0.5 * (1.0 + math.cos(phi - analysis_phase))
    if method != "unitary":
        raise DomainError(f"unknown propagation method {method!r}")
    psi, t = _state_before_final(sequence, trajectory)
    return _finish(psi, sequence.elements[-1], analysis_phase,
                   _analysis_sign(sequence), trajectory, t)


def _signed_delays(sequence: PulseSequence) -> list:
    """(sign, duration) per free-evolution segment in toggled-frame order."""
    out = []
    sign = 1.0
    for el in sequence.elements:
        if isinstance(el, Delay):
            out.append((sign, el.duration))
        elif el.is_pi:
            sign = -sign
    return out


def _scan_dt(model: NoiseModel, min_delay: float, pi_time: float) -> float:
    dt = min(model.min_correlation_time() / 100.0, min_delay / 100.0)
    if pi_time > 0.0:
        dt = min(dt, pi_time / 20.0)
    return dt


def _fast_block_phasors(model: NoiseModel, segments, dt: float,
                        stream: RandomStream, width: int) -> np.ndarray:
    """Per-trial fringe phasors e^(i phi) for ideal instantaneous pulses."""
    phi = np.zeros(width)
    signed_span = math.fsum(s * d for s, d in segments)
    for ci, part in enumerate(model.components()):
        rng = stream.substream(ci).generator()
        if part.variant == "static_offset":
            phi += 2.0 * _PI * part.delta0 * signed_span
        elif part.variant == "quasi_static_gaussian":
            phi += (2.0 * _PI * signed_span * part.sigma) * rng.standard_normal(width)
        else:
            x = part.sigma * rng.standard_normal(width)
            for sign, span in segments:
                n_sub = max(1, math.ceil(span / dt - 1e-12))
                h = span / n_sub
                alpha = math.exp(-h / part.tau_c)
                kick = part.sigma * math.sqrt(1.0 - alpha * alpha)
                weight = 2.0 * _PI * sign * h
                for _ in range(n_sub):
                    phi += weight * x
                    x = alpha * x + kick * rng.standard_normal(width)
    return np.exp(1j * phi)


def _fringe_block_phasors(model: NoiseModel, sequence: PulseSequence,
                          dt: float, stream: RandomStream,
                          width: int) -> np.ndarray:
    """Per-trial phasors recovered from an analysis-phase scan (full mode)."""
    thetas = 2.0 * _PI * np.arange(N_ANALYSIS_PHASES) / N_ANALYSIS_PHASES
    weights = np.exp(1j * thetas)
    sign = _analysis_sign(sequence)
    final_pulse = sequence.elements[-1]
    wall = sequence.wall_duration
    out = np.empty(width, dtype=complex)
    for i in range(width):
        traj = sample_trajectory(model, wall, dt, stream.substream(i))
        psi, t = _state_before_final(sequence, traj)
        ps = np.array([
            _finish(psi, final_pulse, float(theta), sign, traj, t)
            for theta in thetas
        ])
        # first fringe harmonic; equals e^(i phi)/4 per analysis point for an
        # ideal closing pulse, so scale back to a unit-modulus phasor
        out[i] = 4.0 * np.mean(ps * weights)
    return out


def coherence_scan(
    model: NoiseModel,
    kind: str,
    delays: Sequence[float],
    pi_time: float,
    pulse_errors: Optional[PulseErrors],
    trials: int,
    stream: RandomStream,
    threads: int = 1,
    cycles: Optional[int] = None,
) -> CoherenceCurve:
    """Monte Carlo contrast curve over the given delays.

    Contrast at each delay is |mean of per-trial fringe phasors|; with ideal
    pulses the phasor is e^(i phi) from the toggled phase, otherwise it is
    recovered from an 8-point analysis-phase fringe. The error bar is the
    standard error of the phasor component along the mean direction. Trials
    are split into fixed-size blocks on derived substreams, so the result is
    independent of the thread count.
    """
    if not isinstance(trials, (int, np.integer)) or trials < 100:
        raise DomainError(f"trials must be an integer >= 100, got {trials!r}")
    delays = [float(d) for d in delays]
    if not delays:
        raise DomainError("delays must be non-empty")
    prev = 0.0
    for d in delays:
        if not (math.isfinite(d) and d > prev):
            raise DomainError("delays must be positive and strictly increasing")
        prev = d
    errs = pulse_errors if pulse_errors is not None else PulseErrors()
    fast = pi_time == 0.0 and errs.is_zero
    dt = _scan_dt(model, delays[0], pi_time)
    blocks = block_ranges(trials, BLOCK_TRIALS)

    points = []
    for di, total_delay in enumerate(delays):
        sequence = build_sequence(kind, total_delay, pi_time, errs, cycles=cycles)
        segments = _signed_delays(sequence)

        def run_block(bi: int) -> np.ndarray:
            b, start, stop = blocks[bi]
            width = stop - start
            if fast:
                sub = stream.substream(di, b, 0)
                return _fast_block_phasors(model, segments, dt, sub, width)
            sub = stream.substream(di, b, 1)
            return _fringe_block_phasors(model, sequence, dt, sub, width)

        phasors = np.concatenate(map_blocks(len(blocks), run_block, threads))
        mean = phasors.mean()
        contrast = float(abs(mean))
        direction = mean / abs(mean) if contrast > 0.0 else 1.0
        radial = np.real(phasors * np.conj(direction))
        err = float(radial.std(ddof=1) / math.sqrt(trials))
        points.append((total_delay, min(contrast, 1.0), err))
    return CoherenceCurve(points=points)


def gradient_detuning(spec: GradientSpec, displacement: float) -> float:
    """Detuning in Hz for an ion displaced along the field gradient."""
    displacement = _require_finite("displacement", displacement)
    return spec.gradient * spec.sensitivity * displacement


def pi_time_to_rabi(pi_time: float) -> float:
    """Angular Rabi rate (rad/s) that completes a pi rotation in pi_time."""
    pi_time = _require_finite("pi_time", pi_time)
    if pi_time <= 0.0:
        raise DomainError(f"pi_time must be > 0, got {pi_time!r}")
    return _PI / pi_time


def write_curve_csv(curve: CoherenceCurve, path) -> None:
    lines = [_CURVE_HEADER]
    for delay, contrast, err in curve.points:
        lines.append(f"{delay!r},{contrast!r},{err!r}")
    atomic_write_text(Path(path), "\n".join(lines) + "\n")


def read_curve_csv(path) -> CoherenceCurve:
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise DomainError(f"cannot read coherence curve {path}: {exc}") from exc
    if not lines or lines[0] != _CURVE_HEADER:
        raise DomainError(f"expected header {_CURVE_HEADER!r}")
    points = []
    for line in lines[1:]:
        if not line:
            continue
        fields = line.split(",")
        if len(fields) != 3:
            raise DomainError(f"malformed curve row {line!r}")
        try:
            points.append(tuple(float(v) for v in fields))
        except ValueError as exc:
            raise DomainError(f"malformed curve row {line!r}") from exc
    return CoherenceCurve(points=points)
