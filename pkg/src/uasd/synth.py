"""Synthetic machine-sound generation with ground-truth activity intervals.

A "machine" is a harmonic stack (fundamental + decaying overtones) that
switches on and off in bursts drawn from a duty cycle; amplitude ramps at
the burst edges avoid clicks. Anomalies modify the sound only inside the
active regions. Two noise profiles exist: a similar machine whose
fundamental sits near the target's and drifts slowly (so its harmonics
sweep through the target's bins), and spectrally shaped broadband noise.
All generation is a pure function of the spec's seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .audio import AudioClip, clamp_amplitudes
from .errors import DegenerateInputError

NOISE_KINDS = ("broadband", "similar_machine")
ANOMALY_KINDS = ("none", "freq_shift", "missing_harmonic", "transient_clicks")

_ACTIVE_RMS = 0.08  # RMS of the tone inside bursts, leaves mixing headroom
_EDGE_RAMP_SECONDS = 0.03
# long enough that a burst spans several fully-active feature windows
_MIN_BURST_SECONDS = 0.25


@dataclass
class ActivityIntervals:
    """Sorted, disjoint, half-open [start, end) sample intervals."""

    intervals: list[tuple[int, int]] = field(default_factory=list)

    def __post_init__(self):
        self.intervals = [(int(s), int(e)) for s, e in self.intervals]
        prev_end = -1
        for start, end in self.intervals:
            if start >= end:
                raise DegenerateInputError(f"empty interval [{start}, {end})")
            if start <= prev_end:
                raise DegenerateInputError("intervals must be sorted and disjoint")
            prev_end = end

    def validate_for_length(self, n_samples: int) -> None:
        if self.intervals and self.intervals[-1][1] > n_samples:
            raise DegenerateInputError("interval extends past the clip end")
        if self.intervals and self.intervals[0][0] < 0:
            raise DegenerateInputError("interval starts before sample 0")

    def total_active_samples(self) -> int:
        return sum(e - s for s, e in self.intervals)

    def mask(self, n_samples: int) -> np.ndarray:
        """Boolean per-sample activity mask."""
        m = np.zeros(n_samples, dtype=bool)
        for start, end in self.intervals:
            m[start:end] = True
        return m

    def to_jsonable(self) -> list[list[int]]:
        return [[s, e] for s, e in self.intervals]

    @classmethod
    def from_jsonable(cls, payload) -> "ActivityIntervals":
        return cls([(int(s), int(e)) for s, e in payload])


@dataclass
class SynthSpec:
    """Parameters for one synthetic machine clip."""

    clip_seconds: float = 4.0
    sample_rate_hz: int = 16000
    machine_fundamental_hz: float = 170.0
    n_harmonics: int = 8
    duty_cycle: float = 0.5
    noise_kind: str = "similar_machine"
    anomaly_kind: str = "none"
    seed: int = 0

    def __post_init__(self):
        if self.clip_seconds <= 0:
            raise DegenerateInputError("clip_seconds must be positive")
        if not 0.0 < self.duty_cycle < 1.0:
            raise DegenerateInputError("duty_cycle must lie in (0, 1)")
        if self.n_harmonics < 1:
            raise DegenerateInputError("need at least one harmonic")
        if self.noise_kind not in NOISE_KINDS:
            raise DegenerateInputError(f"unknown noise_kind {self.noise_kind!r}")
        if self.anomaly_kind not in ANOMALY_KINDS:
            raise DegenerateInputError(f"unknown anomaly_kind {self.anomaly_kind!r}")
        if self.machine_fundamental_hz <= 0:
            raise DegenerateInputError("machine_fundamental_hz must be positive")

    @property
    def n_samples(self) -> int:
        return int(round(self.clip_seconds * self.sample_rate_hz))


def draw_activity_intervals(
    rng: np.random.Generator, n_samples: int, sample_rate_hz: int, duty_cycle: float
) -> ActivityIntervals:
    """Draw 2-4 on-bursts whose total duration tracks the duty cycle.

    Each burst fills at most 85% of its cycle, so every clip keeps at
    least one inactive region.
    """
    n_bursts = int(rng.integers(2, 5))
    cycle = n_samples // n_bursts
    min_burst = min(int(_MIN_BURST_SECONDS * sample_rate_hz), int(0.8 * cycle))
    intervals = []
    for i in range(n_bursts):
        active = duty_cycle * cycle * rng.uniform(0.75, 1.25)
        active = int(np.clip(active, min_burst, 0.85 * cycle))
        slack = cycle - active
        start = i * cycle + int(rng.uniform(0.05, 0.95) * slack)
        intervals.append((start, start + active))
    return ActivityIntervals(intervals)


def _burst_envelope(
    intervals: ActivityIntervals,
    n_samples: int,
    sample_rate_hz: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Per-sample gain: raised-cosine attack/release plus per-burst level."""
    env = np.zeros(n_samples)
    ramp = int(_EDGE_RAMP_SECONDS * sample_rate_hz)
    for start, end in intervals.intervals:
        length = end - start
        r = min(ramp, length // 2)
        gain = rng.uniform(0.85, 1.15)
        shape = np.ones(length)
        if r > 0:
            edge = 0.5 * (1.0 - np.cos(np.pi * np.arange(r) / r))
            shape[:r] = edge
            shape[length - r :] = edge[::-1]
        env[start:end] = gain * shape
    return env


def _harmonic_stack(
    n_samples: int,
    sample_rate_hz: int,
    fundamental_hz: float,
    amplitudes: np.ndarray,
    phases: np.ndarray,
) -> np.ndarray:
    t = np.arange(n_samples) / sample_rate_hz
    tone = np.zeros(n_samples)
    for k, (a, phi) in enumerate(zip(amplitudes, phases), start=1):
        if a == 0.0:
            continue
        tone += a * np.sin(2.0 * np.pi * k * fundamental_hz * t + phi)
    return tone


def _rms_normalize(x: np.ndarray, target_rms: float) -> np.ndarray:
    rms = float(np.sqrt(np.mean(x**2)))
    if rms == 0.0:
        raise DegenerateInputError("cannot normalize an all-zero signal")
    return x * (target_rms / rms)


def _add_clicks(
    samples: np.ndarray,
    intervals: ActivityIntervals,
    rng: np.random.Generator,
    sample_rate_hz: int,
) -> None:
    """Scatter short decaying noise bursts inside the active regions."""
    active_positions = np.flatnonzero(intervals.mask(samples.shape[0]))
    n_clicks = int(rng.integers(8, 17))
    for _ in range(n_clicks):
        center = int(rng.choice(active_positions))
        length = int(rng.integers(32, 81))
        end = min(center + length, samples.shape[0])
        burst = rng.normal(0.0, 1.0, end - center)
        burst *= np.exp(-np.arange(end - center) / (0.2 * length))
        samples[center:end] += 0.35 * burst


def synth_machine_clip(spec: SynthSpec) -> tuple[AudioClip, ActivityIntervals, str]:
    """Synthesize one machine clip; returns (clip, intervals, condition).

    condition is "normal" iff the spec's anomaly_kind is "none".
    """
    rng = np.random.default_rng(spec.seed)
    n = spec.n_samples
    intervals = draw_activity_intervals(rng, n, spec.sample_rate_hz, spec.duty_cycle)

    f0 = spec.machine_fundamental_hz * (1.0 + rng.uniform(-0.02, 0.02))
    amplitudes = np.arange(1, spec.n_harmonics + 1, dtype=np.float64) ** -0.8
    phases = rng.uniform(0.0, 2.0 * np.pi, spec.n_harmonics)

    if spec.anomaly_kind == "freq_shift":
        f0 *= 1.0 + rng.choice([-1.0, 1.0]) * rng.uniform(0.05, 0.12)
    elif spec.anomaly_kind == "missing_harmonic":
        drop = [k for k in (2, 4) if k <= spec.n_harmonics] or [spec.n_harmonics]
        amplitudes = amplitudes.copy()
        for k in drop:
            amplitudes[k - 1] = 0.0

    tone = _harmonic_stack(n, spec.sample_rate_hz, f0, amplitudes, phases)
    tone = _rms_normalize(tone, _ACTIVE_RMS)
    samples = tone * _burst_envelope(intervals, n, spec.sample_rate_hz, rng)

    if spec.anomaly_kind == "transient_clicks":
        _add_clicks(samples, intervals, rng, spec.sample_rate_hz)

    samples, n_clipped = clamp_amplitudes(samples)
    condition = "normal" if spec.anomaly_kind == "none" else "anomalous"
    clip = AudioClip(samples, spec.sample_rate_hz, clipped_samples=n_clipped)
    return clip, intervals, condition


def _shaped_white_noise(
    rng: np.random.Generator, n_samples: int, sample_rate_hz: int, tilt: float = 0.5
) -> np.ndarray:
    """White noise with a gentle 1/f**tilt spectral slope."""
    white = rng.normal(0.0, 1.0, n_samples)
    spectrum = np.fft.rfft(white)
    freqs = np.fft.rfftfreq(n_samples, d=1.0 / sample_rate_hz)
    shaping = (1.0 + freqs / 200.0) ** -tilt
    return np.fft.irfft(spectrum * shaping, n=n_samples)


def synth_broadband_noise(
    rng: np.random.Generator, n_samples: int, sample_rate_hz: int
) -> AudioClip:
    """Spectrally shaped stationary broadband noise."""
    noise = _rms_normalize(_shaped_white_noise(rng, n_samples, sample_rate_hz), 0.1)
    noise, n_clipped = clamp_amplitudes(noise)
    return AudioClip(noise, sample_rate_hz, clipped_samples=n_clipped)


def synth_similar_machine_noise(
    rng: np.random.Generator,
    n_samples: int,
    sample_rate_hz: int,
    target_fundamental_hz: float,
    n_harmonics: int,
) -> AudioClip:
    """A continuously running machine whose fundamental sits within +-20%
    of the target's and slowly drifts, so its harmonics sweep through the
    target's spectral bins; a small broadband floor fills the gaps."""
    offset = rng.choice([-1.0, 1.0]) * rng.uniform(0.08, 0.20)
    base = target_fundamental_hz * (1.0 + offset)
    t = np.arange(n_samples) / sample_rate_hz

    drift_rate = rng.uniform(0.15, 0.45)
    drift_phase = rng.uniform(0.0, 2.0 * np.pi)
    inst_freq = base * (1.0 + 0.15 * np.sin(2.0 * np.pi * drift_rate * t + drift_phase))
    phase = 2.0 * np.pi * np.cumsum(inst_freq) / sample_rate_hz

    amplitudes = np.arange(1, n_harmonics + 1, dtype=np.float64) ** -0.8
    amplitudes *= rng.uniform(0.7, 1.3, n_harmonics)
    tone = np.zeros(n_samples)
    for k, (a, phi0) in enumerate(
        zip(amplitudes, rng.uniform(0.0, 2.0 * np.pi, n_harmonics)), start=1
    ):
        tone += a * np.sin(k * phase + phi0)

    am_rate = rng.uniform(0.3, 1.0)
    am_phase = rng.uniform(0.0, 2.0 * np.pi)
    tone *= 1.0 + 0.25 * np.sin(2.0 * np.pi * am_rate * t + am_phase)
    tone = _rms_normalize(tone, 1.0)

    floor = _rms_normalize(_shaped_white_noise(rng, n_samples, sample_rate_hz), 1.0)
    noise = _rms_normalize(tone + np.sqrt(0.15) * floor, 0.1)
    noise, n_clipped = clamp_amplitudes(noise)
    return AudioClip(noise, sample_rate_hz, clipped_samples=n_clipped)


def synth_noise(
    kind: str,
    rng: np.random.Generator,
    n_samples: int,
    sample_rate_hz: int,
    target_fundamental_hz: float,
    n_harmonics: int,
) -> AudioClip:
    if kind == "broadband":
        return synth_broadband_noise(rng, n_samples, sample_rate_hz)
    if kind == "similar_machine":
        return synth_similar_machine_noise(
            rng, n_samples, sample_rate_hz, target_fundamental_hz, n_harmonics
        )
    raise DegenerateInputError(f"unknown noise kind {kind!r}")
