"""Waveform metrics of averaged evoked potentials and per-pulse onsets.

Conventions: traces are positive-up, times are ms after the pulse. Zero
crossings are interpolated linearly between the two bracketing samples and
the crossing nearest to the N1 peak is the one reported on each side.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable

import numpy as np

from .epochs import EpochSet, EvokedPotential
from .errors import InvalidManifest, NoN1, NoZeroCrossing, TooFewEpochs, WindowOutOfRange
from .preprocess import FilterSpec, filter_array

logger = logging.getLogger(__name__)

N1_SEARCH_MS = (8.0, 35.0)
AREA_MS = (40.0, 100.0)
SLOPE_MS = (50.0, 80.0)
METRIC_LOWPASS_HZ = 200.0
ONSET_LOWPASS_HZ = 250.0
LOWPASS_ORDER = 3


def smooth(trace: np.ndarray, fs: float, cutoff_hz: float | None,
           order: int = LOWPASS_ORDER) -> np.ndarray:
    """Zero-phase Butterworth low-pass; ``None`` returns the trace unchanged."""
    if cutoff_hz is None:
        return np.asarray(trace, dtype=float)
    return filter_array(np.asarray(trace, dtype=float), fs, FilterSpec.lowpass(cutoff_hz, order))


def _cross(t: np.ndarray, y: np.ndarray, i: int, level: float) -> float:
    """Time where the segment between samples ``i`` and ``i+1`` meets ``level``."""
    y0, y1 = y[i] - level, y[i + 1] - level
    if y0 == y1:
        return float(t[i])
    return float(t[i] + (t[i + 1] - t[i]) * y0 / (y0 - y1))


def crossings_around(t: np.ndarray, y: np.ndarray, peak: int, level: float,
                     first: int = 0) -> tuple[float | None, float | None]:
    """Nearest ``level`` crossings before and after the trough at ``peak``.

    Before: the last sample in ``[first, peak)`` at or above ``level``,
    joined to its successor. After: the first sample past ``peak`` at or
    above ``level``, joined to its predecessor.
    """
    left = np.nonzero(y[first:peak] >= level)[0]
    before = _cross(t, y, first + int(left[-1]), level) if left.size else None
    right = np.nonzero(y[peak + 1:] >= level)[0]
    after = _cross(t, y, peak + int(right[0]), level) if right.size else None
    return before, after


def _parabolic(y: np.ndarray, i: int) -> tuple[float, float]:
    """Sub-sample offset and value of the extremum through samples i-1, i, i+1."""
    if i <= 0 or i >= y.size - 1:
        return 0.0, float(y[i])
    a, b, c = y[i - 1], y[i], y[i + 1]
    denom = a - 2 * b + c
    if denom == 0:
        return 0.0, float(b)
    d = 0.5 * (a - c) / denom
    return float(d), float(b - 0.25 * (a - c) * d)


def _window_indices(t: np.ndarray, lo: float, hi: float) -> np.ndarray:
    idx = np.nonzero((t >= lo - 1e-9) & (t <= hi + 1e-9))[0]
    if idx.size == 0:
        raise WindowOutOfRange(f"[{lo}, {hi}] ms is outside the epoch")
    return idx


@dataclass(frozen=True)
class N1Location:
    latency: float
    maxamp: float
    t_zc1: float | None
    t_zc2: float | None
    w_n1: float | None
    whq_n1: float | None
    p0: tuple[float, float] | None = None


def _locate(t: np.ndarray, y: np.ndarray, fs: float, onset_floor_ms: float,
            search_ms: tuple[float, float], noise_k: float, baseline_ms=(-5.0, 0.0)) -> N1Location:
    idx = _window_indices(t, *search_ms)
    i = int(idx[np.argmin(y[idx])])
    base = y[(t >= baseline_ms[0]) & (t < baseline_ms[1])]
    floor = noise_k * float(np.std(base)) if base.size else 0.0
    if not y[i] < -floor:
        raise NoN1(f"no negative peak below -{floor:.3g} uV in {search_ms} ms")
    d, amp = _parabolic(y, i)
    latency = float(t[i] + d * 1000.0 / fs)
    first = int(np.searchsorted(t, onset_floor_ms - 1e-9))
    first = min(first, i)
    zc1, zc2 = crossings_around(t, y, i, 0.0, first)
    q1, q2 = crossings_around(t, y, i, amp / 4, first)
    w = zc2 - zc1 if zc1 is not None and zc2 is not None else None
    whq = q2 - q1 if q1 is not None and q2 is not None else None
    p0 = None
    if zc1 is not None:
        seg = np.nonzero((t > onset_floor_ms) & (t < zc1))[0]
        if seg.size:
            k = int(seg[np.argmax(y[seg])])
            if y[k] > 0:
                p0 = (float(t[k]), float(y[k]))
    return N1Location(latency, amp, zc1, zc2, w, whq, p0)


def locate_n1(ep: EvokedPotential, search_ms: tuple[float, float] = N1_SEARCH_MS,
              lowpass_hz: float | None = METRIC_LOWPASS_HZ, onset_floor_ms: float | None = None,
              noise_k: float = 3.0, require_onset: bool = False) -> N1Location:
    """Find the N1 trough and the zero / quarter-depth crossings around it.

    The trace is low-passed first. N1 is the most negative sample in
    ``search_ms`` (refined by a parabola); it must lie below ``noise_k``
    times the baseline standard deviation. Crossings before N1 are only
    searched after ``onset_floor_ms`` (default: end of the excised
    artifact). Missing crossings leave the dependent fields ``None`` unless
    ``require_onset`` asks for an error.
    """
    y = smooth(ep.trace, ep.fs, lowpass_hz)
    floor_ms = ep.artifact_ms if onset_floor_ms is None else onset_floor_ms
    loc = _locate(ep.times_ms, y, ep.fs, floor_ms, search_ms, noise_k)
    if loc.t_zc1 is None:
        msg = f"trace never crosses zero between {floor_ms} ms and N1 at {loc.latency:.2f} ms"
        if require_onset:
            raise NoZeroCrossing(msg)
        logger.warning(msg)
    return loc


def signed_area(ep: EvokedPotential, t0: float = AREA_MS[0], t1: float = AREA_MS[1]) -> float:
    """Trapezoidal integral of the trace over ``[t0, t1]`` ms, in uV*ms."""
    t = ep.times_ms
    if t0 < t[0] - 1e-9 or t1 > t[-1] + 1e-9 or t1 <= t0:
        raise WindowOutOfRange(f"[{t0}, {t1}] ms is outside the epoch {ep.window}")
    inner = (t > t0) & (t < t1)
    ts = np.concatenate(([t0], t[inner], [t1]))
    ys = np.concatenate(([np.interp(t0, t, ep.trace)], ep.trace[inner], [np.interp(t1, t, ep.trace)]))
    return float(np.trapezoid(ys, ts))


def relaxation_min_slope(ep: EvokedPotential, t0: float = SLOPE_MS[0], t1: float = SLOPE_MS[1],
                         lowpass_hz: float | None = METRIC_LOWPASS_HZ) -> tuple[float, str]:
    """Minimum central-difference slope (uV/ms) over ``[t0, t1]`` and its class.

    A negative minimum means an after-positivity follows N1; otherwise
    the relaxation is monotonic.
    """
    t = ep.times_ms
    idx = _window_indices(t, t0, t1)
    if t[0] > t0 + 1e-9 or t[-1] < t1 - 1e-9:
        raise WindowOutOfRange(f"[{t0}, {t1}] ms is outside the epoch {ep.window}")
    y = smooth(ep.trace, ep.fs, lowpass_hz)
    dy = np.gradient(y, 1000.0 / ep.fs)
    m = float(np.min(dy[idx]))
    return m, ("after-positivity" if m < 0 else "monotonic")


@dataclass(frozen=True)
class WaveformMetrics:
    t_zc1: float | None
    t_zc2: float | None
    W_N1: float | None
    WHQ_N1: float | None
    N1_MAXAMP: float
    N1_latency: float
    area_40_100: float
    min_slope_50_80: float
    relaxation_class: str
    P0: tuple[float, float] | None = None
    inverted: bool = False

    _UNITS = {
        "t_zc1": "t_zc1_ms", "t_zc2": "t_zc2_ms", "W_N1": "w_n1_ms", "WHQ_N1": "whq_n1_ms",
        "N1_MAXAMP": "n1_maxamp_uv", "N1_latency": "n1_latency_ms",
        "area_40_100": "area_40_100_uvms", "min_slope_50_80": "min_slope_50_80_uv_per_ms",
        "relaxation_class": "relaxation_class", "inverted": "inverted",
    }

    def to_record(self, **labels) -> dict:
        rec = dict(labels)
        for f in fields(self):
            if f.name == "P0":
                rec["p0_latency_ms"] = self.P0[0] if self.P0 else None
                rec["p0_amplitude_uv"] = self.P0[1] if self.P0 else None
            else:
                rec[self._UNITS[f.name]] = getattr(self, f.name)
        return rec


def dominant_is_positive(ep: EvokedPotential, search_ms=N1_SEARCH_MS,
                         lowpass_hz: float | None = METRIC_LOWPASS_HZ) -> bool:
    y = smooth(ep.trace, ep.fs, lowpass_hz)
    seg = y[_window_indices(ep.times_ms, *search_ms)]
    return float(np.max(seg)) > -float(np.min(seg))


def compute_metrics(ep: EvokedPotential, invert: bool = False,
                    search_ms: tuple[float, float] = N1_SEARCH_MS,
                    lowpass_hz: float | None = METRIC_LOWPASS_HZ,
                    area_ms: tuple[float, float] = AREA_MS,
                    slope_ms: tuple[float, float] = SLOPE_MS,
                    noise_k: float = 3.0) -> WaveformMetrics:
    """All waveform metrics of one averaged EP.

    With ``invert`` the trace is flipped first when its dominant extremum
    in the N1 window is positive; the flip is recorded in the result.
    """
    flipped = False
    if invert and dominant_is_positive(ep, search_ms, lowpass_hz):
        ep = ep.with_trace(-ep.trace, inverted=not ep.inverted)
        flipped = True
    loc = locate_n1(ep, search_ms, lowpass_hz, noise_k=noise_k)
    slope, cls = relaxation_min_slope(ep, *slope_ms, lowpass_hz=lowpass_hz)
    return WaveformMetrics(
        t_zc1=loc.t_zc1, t_zc2=loc.t_zc2, W_N1=loc.w_n1, WHQ_N1=loc.whq_n1,
        N1_MAXAMP=loc.maxamp, N1_latency=loc.latency,
        area_40_100=signed_area(ep, *area_ms), min_slope_50_80=slope,
        relaxation_class=cls, P0=loc.p0, inverted=flipped,
    )


@dataclass(frozen=True)
class OnsetReport:
    onsets_ms: tuple[float, ...]
    pulse_indices: tuple[int, ...]
    n_missing: int

    @property
    def median(self) -> float:
        return float(np.median(self.onsets_ms))


def per_train_onsets(epochs: EpochSet, lowpass_hz: float = ONSET_LOWPASS_HZ,
                     order: int = LOWPASS_ORDER, artifact_end_ms: float | None = None,
                     margin_ms: float = 2.0,
                     search_ms: tuple[float, float] = N1_SEARCH_MS) -> OnsetReport:
    """N1 onset (t_zc1) of every single epoch.

    Each epoch is low-passed on its own (zero phase), then its onset is the
    zero crossing nearest its own N1 trough, searched from ``margin_ms``
    after the end of the stimulation pulse. Epochs without a crossing are
    left out and counted.
    """
    if epochs.n_epochs < 5:
        raise TooFewEpochs(f"per-pulse onsets need at least 5 epochs, got {epochs.n_epochs}")
    end = epochs.pulse_ms if artifact_end_ms is None else artifact_end_ms
    t = epochs.times_ms
    y = smooth(epochs.epochs, epochs.fs, lowpass_hz, order)
    idx = _window_indices(t, *search_ms)
    first = int(np.searchsorted(t, end + margin_ms - 1e-9))
    onsets, kept, missing = [], [], 0
    for row, pulse in zip(y, epochs.pulse_indices):
        i = int(idx[np.argmin(row[idx])])
        zc1, _ = crossings_around(t, row, i, 0.0, min(first, i))
        if zc1 is None:
            missing += 1
            continue
        onsets.append(zc1)
        kept.append(pulse)
    if missing:
        logger.info("%d of %d epochs had no measurable onset", missing, epochs.n_epochs)
    return OnsetReport(tuple(onsets), tuple(kept), missing)


# --- records -----------------------------------------------------------------


def write_records(records: Iterable[dict], path: str | Path) -> None:
    """One JSON object per line, keys in insertion order."""
    lines = [json.dumps(r) for r in records]
    Path(path).write_text("".join(line + "\n" for line in lines))


def read_records(path: str | Path) -> list[dict]:
    out = []
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            out.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise InvalidManifest(f"{path}:{n}: {exc}") from None
    return out
