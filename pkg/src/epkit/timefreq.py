"""Short-time spectra of epochs and baseline-normalised power in decibels."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import ms_to_samples
from .epochs import EpochSet
from .errors import InvalidManifest, MissingCenter, WindowTooShort

logger = logging.getLogger(__name__)

SEGMENT_MS = 20.0
STEP_MS = 5.0
TF_BASELINE_MS = (-25.0, -15.0)
GAMMA_HZ = 50.0
GAMMA_CENTERS_MS = (20.0, 25.0, 30.0, 35.0, 40.0)


@dataclass(frozen=True)
class TimeFrequencyMap:
    """Power change (dB) per window center (rows) and frequency (columns).

    ``baseline_def`` is the range of window centers averaged into the
    reference power; ``gamma_bin_hz`` is the bin used for gamma summaries.
    """

    centers: np.ndarray
    freqs: np.ndarray
    power_db: np.ndarray
    baseline_def: tuple[float, float]
    n_epochs: int = 0
    gamma_bin_hz: float = GAMMA_HZ

    def __post_init__(self):
        for name in ("centers", "freqs", "power_db"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def bin_index(self, hz: float) -> int:
        return int(np.argmin(np.abs(self.freqs - hz)))

    def center_index(self, ms: float) -> int:
        hit = np.nonzero(np.abs(self.centers - ms) < 1e-6)[0]
        if not hit.size:
            raise MissingCenter(f"no window centered at {ms} ms")
        return int(hit[0])


def hann_periodic(n: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)


def segment_power(segments: np.ndarray, window: np.ndarray, nfft: int) -> np.ndarray:
    """One-sided power per bin; bins sum to the windowed segment energy."""
    spec = np.fft.rfft(segments * window, n=nfft, axis=-1)
    p = np.abs(spec) ** 2 / nfft
    p[..., 1:] *= 2.0
    if nfft % 2 == 0:
        p[..., -1] /= 2.0
    return p


def window_centers(window_ms: tuple[float, float], segment_ms: float = SEGMENT_MS,
                   step_ms: float = STEP_MS) -> np.ndarray:
    """Multiples of ``step_ms`` whose whole segment fits in the epoch."""
    half = segment_ms / 2.0
    lo = np.ceil((window_ms[0] + half) / step_ms - 1e-9) * step_ms
    hi = np.floor((window_ms[1] - half) / step_ms + 1e-9) * step_ms
    if hi < lo:
        return np.empty(0)
    return np.arange(lo, hi + step_ms / 2, step_ms)


def stft_power_db(epochs: EpochSet, segment_ms: float = SEGMENT_MS, step_ms: float = STEP_MS,
                  baseline_ms: tuple[float, float] = TF_BASELINE_MS,
                  nfft: int | None = None) -> TimeFrequencyMap:
    """Hann-windowed short-time power, averaged over epochs, in dB re baseline.

    Segments are ``segment_ms`` long and centered every ``step_ms``. The
    reference power at each frequency is the mean over the windows whose
    centers lie in ``baseline_ms``. ``nfft`` defaults to the segment length,
    which at 19.2 kHz puts a bin exactly on 50 Hz.
    """
    fs = epochs.fs
    n_seg = ms_to_samples(segment_ms, fs)
    nfft = n_seg if nfft is None else int(nfft)
    if nfft < n_seg:
        raise ValueError(f"nfft {nfft} is shorter than the {n_seg}-sample segment")
    centers = window_centers(epochs.window, segment_ms, step_ms)
    base = (centers >= baseline_ms[0] - 1e-9) & (centers <= baseline_ms[1] + 1e-9)
    needed_start = baseline_ms[0] - segment_ms / 2
    if not base.any() or centers[0] > baseline_ms[0] + 1e-9:
        raise WindowTooShort(f"epochs {epochs.window} ms do not cover the baseline windows "
                             f"centered in {baseline_ms} ms (need data from {needed_start} ms)")

    half = n_seg // 2
    starts = epochs.onset_index + np.array([ms_to_samples(c, fs) for c in centers]) - half
    idx = starts[:, None] + np.arange(n_seg)[None, :]
    win = hann_periodic(n_seg)
    # mean over epochs, accumulated in epoch order
    power = np.zeros((centers.size, nfft // 2 + 1))
    for row in epochs.epochs:
        power += segment_power(row[idx], win, nfft)
    power /= epochs.n_epochs

    ref = power[base].mean(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        db = 10.0 * np.log10(power / ref)
    db = np.where(np.isfinite(db), db, 0.0)
    freqs = np.fft.rfftfreq(nfft, 1.0 / fs)
    gamma = float(freqs[np.argmin(np.abs(freqs - GAMMA_HZ))])
    if abs(gamma - GAMMA_HZ) > 1e-9:
        logger.info("nearest bin to %g Hz is %g Hz", GAMMA_HZ, gamma)
    return TimeFrequencyMap(centers, freqs, db, (float(baseline_ms[0]), float(baseline_ms[1])),
                            epochs.n_epochs, gamma)


def gamma_band_summary(tf: TimeFrequencyMap,
                       centers: Sequence[float] = GAMMA_CENTERS_MS) -> float:
    """Mean dB change at the gamma bin over the requested window centers."""
    rows = [tf.center_index(c) for c in centers]
    if not rows:
        raise MissingCenter("no window centers requested")
    col = tf.bin_index(tf.gamma_bin_hz)
    return float(np.mean(tf.power_db[rows, col]))


def write_tf_map(tf: TimeFrequencyMap, path: str | Path) -> None:
    """Tab-separated matrix: a frequency header row, then one row per center."""
    lines = [
        f"# baseline_centers_ms: {tf.baseline_def[0]!r} {tf.baseline_def[1]!r}",
        f"# n_epochs: {tf.n_epochs}",
        f"# gamma_bin_hz: {tf.gamma_bin_hz!r}",
        "center_ms\\freq_hz\t" + "\t".join(f"{f:.6f}" for f in tf.freqs),
    ]
    for c, row in zip(tf.centers, tf.power_db):
        lines.append(f"{c:.6f}\t" + "\t".join(f"{v:.6f}" for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_tf_map(path: str | Path) -> TimeFrequencyMap:
    meta, rows, freqs = {}, [], None
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            key, _, value = line[1:].partition(":")
            meta[key.strip()] = value.strip()
        elif line.startswith("center_ms"):
            freqs = [float(v) for v in line.split("\t")[1:]]
        elif line:
            rows.append([float(v) for v in line.split("\t")])
    try:
        b0, b1 = (float(v) for v in meta["baseline_centers_ms"].split())
        arr = np.array(rows)
        return TimeFrequencyMap(arr[:, 0], np.array(freqs), arr[:, 1:], (b0, b1),
                                int(meta.get("n_epochs", 0)),
                                float(meta.get("gamma_bin_hz", GAMMA_HZ)))
    except (KeyError, ValueError, IndexError, TypeError) as exc:
        raise InvalidManifest(f"{path}: malformed time-frequency table ({exc})") from None
