"""Stimulus-artifact excision, 50 Hz template subtraction and IIR filtering."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import signal

from .core import SignalBuffer, StimTrain, ms_to_samples
from .errors import InvalidSpec, MissingTemplate, TooShort, WindowOutOfRange

logger = logging.getLogger(__name__)

LINE_HZ = 50.0
MIN_LINE_PERIODS = 40
DEFAULT_EXTRA_MS = 4.0


# --- artifact excision -------------------------------------------------------


def excision_windows(train: StimTrain, fs: float, extra_ms: float = DEFAULT_EXTRA_MS,
                     pulse_width_ms: float | None = None) -> list[tuple[int, int]]:
    """Half-open sample ranges ``[start, stop)`` replaced around each pulse."""
    pw = train.pulse_width if pulse_width_ms is None else pulse_width_ms
    n = ms_to_samples(pw + extra_ms, fs)
    return [(int(o), int(o) + n) for o in train.pulse_onsets]


def excise_artifact(buffer: SignalBuffer, train: StimTrain, extra_ms: float = DEFAULT_EXTRA_MS,
                    pulse_width_ms: float | None = None) -> SignalBuffer:
    """Replace every stimulation window by a straight line.

    The window spans the pulse plus ``extra_ms``. Each replaced stretch joins
    the last sample before the window to the first sample after it, on all
    channels. Samples outside the windows are copied unchanged.
    """
    windows = excision_windows(train, buffer.fs, extra_ms, pulse_width_ms)
    out = np.array(buffer.samples)
    n = buffer.n_samples
    for start, stop in windows:
        left, right = start - 1, stop
        if left < 0 or right >= n:
            raise WindowOutOfRange(
                f"excision window [{start}, {stop}) needs samples {left} and {right} "
                f"inside a {n}-sample buffer"
            )
        span = right - left
        k = np.arange(1, span)
        ya = out[:, left:left + 1]
        yb = out[:, right:right + 1]
        out[:, start:stop] = ya + (yb - ya) * k / span
    return buffer.with_samples(out)


# --- line noise --------------------------------------------------------------


@dataclass(frozen=True)
class LineNoiseTemplate:
    """One line period of phase-locked average, anchored at sample 0."""

    pattern: np.ndarray
    period_samples: float
    fs: float
    channel: str = ""
    n_segments: int = 0

    def __post_init__(self):
        pattern = np.array(self.pattern, dtype=float)
        pattern.setflags(write=False)
        object.__setattr__(self, "pattern", pattern)

    @property
    def integer_period(self) -> bool:
        return abs(self.period_samples - round(self.period_samples)) < 1e-9

    def tile(self, n: int) -> np.ndarray:
        """The template repeated over ``n`` samples starting at phase 0."""
        if self.integer_period:
            return np.resize(self.pattern, n)
        # bin b averages phases [b, b+1)/m, so its value sits at b + 0.5
        m = self.pattern.size
        pos = (np.arange(n) % self.period_samples) / self.period_samples * m - 0.5
        xp = np.arange(-1, m + 1)
        fp = np.concatenate(([self.pattern[-1]], self.pattern, [self.pattern[0]]))
        return np.interp(pos, xp, fp)

    @property
    def rms(self) -> float:
        return float(np.sqrt(np.mean(self.pattern ** 2)))


def _overlaps(start: int, stop: int, windows: Sequence[tuple[int, int]]) -> bool:
    return any(a < stop and start < b for a, b in windows)


def estimate_line_template(buffer: SignalBuffer, channel: str,
                           exclude: Iterable[tuple[int, int]] = (),
                           line_hz: float = LINE_HZ) -> LineNoiseTemplate:
    """Average consecutive line periods of one channel into a template.

    Periods that touch any ``exclude`` window are skipped. The template has
    its mean removed so it carries no DC.
    """
    x = buffer.channel(channel)
    period = buffer.fs / line_hz
    m = int(round(period))
    windows = sorted(exclude)
    n_periods = int(x.size // period)
    if n_periods < MIN_LINE_PERIODS:
        raise TooShort(f"{n_periods} line periods recorded, need {MIN_LINE_PERIODS}")

    if abs(period - m) < 1e-9:
        starts = np.arange(n_periods) * m
        keep = [s for s in starts if not _overlaps(int(s), int(s) + m, windows)]
        if len(keep) < MIN_LINE_PERIODS:
            raise TooShort(f"only {len(keep)} clean line periods, need {MIN_LINE_PERIODS}")
        pattern = np.mean([x[s:s + m] for s in keep], axis=0)
        n_seg = len(keep)
    else:
        warnings.warn(
            f"fs/{line_hz:g} = {period:.3f} is not an integer; template is resampled",
            RuntimeWarning, stacklevel=2,
        )
        idx = np.arange(int(n_periods * period))
        cycle = np.minimum((idx / period).astype(int), n_periods - 1)
        bad = np.array([
            _overlaps(int(np.ceil(c * period)), int(np.ceil((c + 1) * period)), windows)
            for c in range(n_periods)
        ], dtype=bool)
        n_seg = int(np.sum(~bad))
        if n_seg < MIN_LINE_PERIODS:
            raise TooShort(f"only {n_seg} clean line periods, need {MIN_LINE_PERIODS}")
        ok = ~bad[cycle]
        bins = np.minimum(((idx - cycle * period) / period * m).astype(int), m - 1)
        sums = np.bincount(bins[ok], weights=x[idx[ok]], minlength=m)
        counts = np.bincount(bins[ok], minlength=m)
        pattern = sums / np.maximum(counts, 1)
    pattern = pattern - pattern.mean()
    return LineNoiseTemplate(pattern, period, buffer.fs, channel, n_seg)


def subtract_line_noise(buffer: SignalBuffer, templates: Mapping[str, LineNoiseTemplate],
                        channels: Iterable[str] | None = None) -> SignalBuffer:
    """Subtract each channel's tiled template; unlisted channels are kept."""
    channels = list(buffer.channel_ids if channels is None else channels)
    out = np.array(buffer.samples)
    for ch in channels:
        if ch not in templates:
            raise MissingTemplate(f"no line-noise template for channel {ch!r}")
        out[buffer.index(ch)] -= templates[ch].tile(buffer.n_samples)
    return buffer.with_samples(out)


@dataclass(frozen=True)
class LineNoiseReport:
    reference_channel: str
    reference_phase_rad: float
    templates: dict[str, LineNoiseTemplate] = field(default_factory=dict)
    similarity: dict[str, float] = field(default_factory=dict)


def remove_line_noise(buffer: SignalBuffer, exclude: Iterable[tuple[int, int]] = (),
                      channels: Iterable[str] | None = None,
                      line_hz: float = LINE_HZ) -> tuple[SignalBuffer, LineNoiseReport]:
    """Multi-channel cleaning: lock phase on the noisiest channel, then clean each.

    Every channel gets its own template, all anchored at the same sample
    phase as the reference. ``similarity`` records how well each channel's
    pattern matches the reference one.
    """
    exclude = list(exclude)
    channels = list(buffer.channel_ids if channels is None else channels)
    templates = {ch: estimate_line_template(buffer, ch, exclude, line_hz) for ch in channels}
    ref = max(channels, key=lambda ch: templates[ch].rms)
    ref_pattern = templates[ref].pattern
    fundamental = np.fft.rfft(ref_pattern)[1] if ref_pattern.size > 1 else 0j
    similarity = {}
    for ch in channels:
        p = templates[ch].pattern
        denom = np.linalg.norm(p) * np.linalg.norm(ref_pattern)
        similarity[ch] = float(p @ ref_pattern / denom) if denom > 0 else 0.0
    logger.debug("line-noise reference channel %s", ref)
    report = LineNoiseReport(ref, float(np.angle(fundamental)), templates, similarity)
    return subtract_line_noise(buffer, templates, channels), report


# --- filtering ---------------------------------------------------------------


@dataclass(frozen=True)
class FilterSpec:
    """Butterworth design: order per edge, cutoffs in Hz."""

    kind: str = "bandpass"
    order: int = 2
    cutoffs: tuple[float, ...] = (1.0, 1000.0)
    zero_phase: bool = True

    def __post_init__(self):
        object.__setattr__(self, "cutoffs", tuple(float(c) for c in np.atleast_1d(self.cutoffs)))

    def validate(self, fs: float) -> None:
        nyq = fs / 2.0
        if not isinstance(self.order, (int, np.integer)) or self.order < 1:
            raise InvalidSpec(f"filter order must be a positive integer, got {self.order!r}")
        if self.kind == "bandpass":
            if len(self.cutoffs) != 2:
                raise InvalidSpec("band-pass needs two cutoffs")
            lo, hi = self.cutoffs
            if not (0 < lo < hi < nyq):
                raise InvalidSpec(f"need 0 < {lo} < {hi} < {nyq} Hz")
        elif self.kind in ("lowpass", "highpass"):
            if len(self.cutoffs) != 1 or not (0 < self.cutoffs[0] < nyq):
                raise InvalidSpec(f"{self.kind} needs one cutoff in (0, {nyq}) Hz")
        else:
            raise InvalidSpec(f"unknown filter kind {self.kind!r}")

    def sos(self, fs: float) -> np.ndarray:
        self.validate(fs)
        wn = self.cutoffs if self.kind == "bandpass" else self.cutoffs[0]
        return signal.butter(self.order, wn, btype=self.kind, fs=fs, output="sos")

    @classmethod
    def lowpass(cls, cutoff: float, order: int = 3) -> "FilterSpec":
        return cls("lowpass", order, (cutoff,), True)


BANDPASS_1_1000 = FilterSpec()


def filter_array(x: np.ndarray, fs: float, spec: FilterSpec) -> np.ndarray:
    """Filter along the last axis.

    Zero-phase runs forward then backward. The edge initialisation of that
    pass is not mirror-symmetric, so the result is averaged with the same
    pass applied to the time-reversed input; the interior is unaffected and
    the output is exactly reversal-symmetric.
    """
    sos = spec.sos(fs)
    x = np.asarray(x, dtype=float)
    if not spec.zero_phase:
        return signal.sosfilt(sos, x, axis=-1)
    fwd = signal.sosfiltfilt(sos, x, axis=-1)
    rev = np.flip(signal.sosfiltfilt(sos, np.flip(x, axis=-1), axis=-1), axis=-1)
    return 0.5 * (fwd + rev)


def apply_filter(buffer: SignalBuffer, spec: FilterSpec) -> SignalBuffer:
    return buffer.with_samples(filter_array(buffer.samples, buffer.fs, spec))
