"""Epoching, per-epoch baseline correction, averaging and quality checks."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .core import Kind, SignalBuffer, StimTrain, ms_to_samples
from .errors import Empty, InvalidManifest, NoValidEpochs, TooFewEpochs, WindowOutOfRange
from .preprocess import DEFAULT_EXTRA_MS

logger = logging.getLogger(__name__)

DEFAULT_WINDOW_MS = (-40.0, 105.0)
BASELINE_MS = (-5.0, 0.0)


def _time_axis(n: int, onset_index: int, fs: float) -> np.ndarray:
    return (np.arange(n) - onset_index) * 1000.0 / fs


@dataclass(frozen=True)
class EpochSet:
    """Pulse-locked epochs, one row per kept pulse, baseline-corrected.

    ``onset_index`` is the column of t = 0; ``artifact_ms`` is how long after
    onset the signal was replaced by interpolation, ``pulse_ms`` how long
    the stimulation pulse itself lasted.
    """

    epochs: np.ndarray
    window: tuple[float, float]
    fs: float
    channel: str
    kind: Kind
    onset_index: int
    artifact_ms: float = 0.0
    pulse_indices: tuple[int, ...] = ()
    pulse_ms: float = 0.0

    def __post_init__(self):
        arr = np.array(self.epochs, dtype=float, ndmin=2)
        arr.setflags(write=False)
        object.__setattr__(self, "epochs", arr)
        object.__setattr__(self, "kind", Kind(self.kind))
        if not self.pulse_indices:
            object.__setattr__(self, "pulse_indices", tuple(range(arr.shape[0])))
        if not (self.window[0] < 0 < self.window[1]):
            raise WindowOutOfRange(f"epoch window {self.window} must straddle 0 ms")

    @property
    def n_epochs(self) -> int:
        return self.epochs.shape[0]

    @property
    def times_ms(self) -> np.ndarray:
        return _time_axis(self.epochs.shape[1], self.onset_index, self.fs)

    def subset(self, rows) -> "EpochSet":
        rows = list(rows)
        return replace(self, epochs=self.epochs[rows],
                       pulse_indices=tuple(self.pulse_indices[i] for i in rows))


@dataclass(frozen=True)
class EvokedPotential:
    """Averaged trace (microvolts, positive up) time-locked to the pulse."""

    trace: np.ndarray
    window: tuple[float, float]
    fs: float
    n_averaged: int
    kind: Kind
    onset_index: int
    channel: str = ""
    artifact_ms: float = 0.0
    inverted: bool = False
    polarity_convention: str = "positive-up"

    def __post_init__(self):
        arr = np.array(self.trace, dtype=float)
        arr.setflags(write=False)
        object.__setattr__(self, "trace", arr)
        object.__setattr__(self, "kind", Kind(self.kind))

    @property
    def times_ms(self) -> np.ndarray:
        return _time_axis(self.trace.size, self.onset_index, self.fs)

    def index_at(self, ms: float) -> int:
        return self.onset_index + ms_to_samples(ms, self.fs)

    def with_trace(self, trace: np.ndarray, **changes) -> "EvokedPotential":
        return replace(self, trace=trace, **changes)


def baseline_correct(epochs: np.ndarray, onset_index: int, fs: float,
                     baseline_ms: tuple[float, float] = BASELINE_MS) -> np.ndarray:
    """Subtract each row's mean over the closed-open ``baseline_ms`` interval."""
    a = onset_index + ms_to_samples(baseline_ms[0], fs)
    b = onset_index + ms_to_samples(baseline_ms[1], fs)
    if a < 0 or b <= a:
        raise WindowOutOfRange(f"baseline {baseline_ms} ms falls outside the epoch")
    epochs = np.asarray(epochs, dtype=float)
    return epochs - epochs[..., a:b].mean(axis=-1, keepdims=True)


def extract_epochs(buffer: SignalBuffer, train: StimTrain, channel: str,
                   window: tuple[float, float] = DEFAULT_WINDOW_MS,
                   artifact_ms: float | None = None,
                   baseline_ms: tuple[float, float] = BASELINE_MS) -> EpochSet:
    """Cut one baseline-corrected epoch per pulse.

    Pulses whose window leaves the buffer are dropped with a warning.
    """
    t0, t1 = window
    if not (t0 < 0 < t1):
        raise WindowOutOfRange(f"epoch window {window} must straddle 0 ms")
    if t0 > baseline_ms[0]:
        raise WindowOutOfRange(f"epoch window {window} does not hold the baseline {baseline_ms}")
    fs = buffer.fs
    i0 = ms_to_samples(t0, fs)
    i1 = ms_to_samples(t1, fs)
    x = buffer.channel(channel)
    rows, kept = [], []
    for k, onset in enumerate(train.pulse_onsets):
        start, stop = int(onset) + i0, int(onset) + i1
        if start < 0 or stop > x.size:
            logger.warning("pulse %d at sample %d: epoch leaves the recording, dropped", k, onset)
            continue
        rows.append(x[start:stop])
        kept.append(k)
    if not rows:
        raise NoValidEpochs(f"no pulse of the train has a complete {window} ms epoch")
    onset_index = -i0
    epochs = baseline_correct(np.vstack(rows), onset_index, fs, baseline_ms)
    if artifact_ms is None:
        artifact_ms = train.pulse_width + DEFAULT_EXTRA_MS
    return EpochSet(epochs, (float(t0), float(t1)), fs, channel, train.kind,
                    onset_index, float(artifact_ms), tuple(kept), float(train.pulse_width))


def average_epochs(epochs: EpochSet) -> EvokedPotential:
    if epochs.n_epochs < 1:
        raise Empty("cannot average an empty epoch set")
    # mean of deviations from the first epoch: exact when all epochs agree
    ref = epochs.epochs[0]
    trace = ref + np.mean(epochs.epochs - ref, axis=0)
    return EvokedPotential(trace, epochs.window, epochs.fs, epochs.n_epochs, epochs.kind,
                           epochs.onset_index, epochs.channel, epochs.artifact_ms)


@dataclass(frozen=True)
class GateResult:
    accepted: bool
    peak_uv: float
    threshold_uv: float
    mode: str

    def __bool__(self) -> bool:
        return self.accepted


def amplitude_gate(ep: EvokedPotential, threshold_uv: float = 100.0, mode: str = "any",
                   start_ms: float | None = None, stop_ms: float = 100.0,
                   n1_window_ms: tuple[float, float] = (8.0, 35.0)) -> GateResult:
    """Accept an EP whose largest deflection reaches ``threshold_uv``.

    ``mode="any"`` takes the largest absolute value over (artifact end,
    ``stop_ms``]; ``mode="n1"`` takes the depth of the most negative value
    inside ``n1_window_ms``. Reaching the threshold exactly accepts.
    """
    if ep.trace.size == 0:
        raise Empty("empty trace")
    t = ep.times_ms
    if mode == "any":
        start = ep.artifact_ms if start_ms is None else start_ms
        seg = ep.trace[(t > start) & (t <= stop_ms)]
        peak = float(np.max(np.abs(seg))) if seg.size else 0.0
    elif mode == "n1":
        seg = ep.trace[(t >= n1_window_ms[0]) & (t <= n1_window_ms[1])]
        peak = float(max(0.0, -np.min(seg))) if seg.size else 0.0
    else:
        raise ValueError(f"unknown gate mode {mode!r}")
    return GateResult(peak >= threshold_uv, peak, float(threshold_uv), mode)


@dataclass(frozen=True)
class StabilityReport:
    similarity: float
    stable: bool
    threshold: float
    n_first: int
    n_second: int


def stability_check(epochs: EpochSet, threshold: float = 0.8,
                    start_ms: float | None = None, stop_ms: float | None = None) -> StabilityReport:
    """Split-half repeatability of the response shape.

    Correlates (Pearson, zero lag) the average of the first half of the
    train with the average of the second half over the post-artifact part
    of the epoch.
    """
    n = epochs.n_epochs
    if n < 4:
        raise TooFewEpochs(f"stability needs at least 4 epochs, got {n}")
    t = epochs.times_ms
    start = epochs.artifact_ms if start_ms is None else start_ms
    stop = epochs.window[1] if stop_ms is None else stop_ms
    sel = (t > start) & (t <= stop)
    half = n // 2
    a = epochs.epochs[:half, sel].mean(axis=0)
    b = epochs.epochs[half:, sel].mean(axis=0)
    a = a - a.mean()
    b = b - b.mean()
    denom = np.linalg.norm(a) * np.linalg.norm(b)
    r = float(np.clip(a @ b / denom, -1.0, 1.0)) if denom > 0 else 0.0
    return StabilityReport(r, r >= threshold, threshold, half, n - half)


# --- text export -------------------------------------------------------------


def write_evoked(ep: EvokedPotential, path: str | Path) -> None:
    """Two-column table (time_ms, amplitude_uv) under a ``#`` metadata header."""
    header = [
        f"# kind: {ep.kind.value}",
        f"# channel: {ep.channel}",
        f"# n_averaged: {ep.n_averaged}",
        f"# fs_hz: {ep.fs!r}",
        f"# window_ms: {ep.window[0]!r} {ep.window[1]!r}",
        f"# onset_index: {ep.onset_index}",
        f"# artifact_ms: {ep.artifact_ms!r}",
        f"# inverted: {str(ep.inverted).lower()}",
        "time_ms\tamplitude_uv",
    ]
    lines = [f"{t:.6f}\t{v:.6f}" for t, v in zip(ep.times_ms, ep.trace)]
    Path(path).write_text("\n".join(header + lines) + "\n")


def read_evoked(path: str | Path) -> EvokedPotential:
    meta, rows = {}, []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            key, _, value = line[1:].partition(":")
            meta[key.strip()] = value.strip()
        elif line and not line.startswith("time_ms"):
            rows.append(float(line.split("\t")[1]))
    try:
        w0, w1 = (float(v) for v in meta["window_ms"].split())
        return EvokedPotential(
            np.array(rows), (w0, w1), float(meta["fs_hz"]), int(meta["n_averaged"]),
            Kind(meta["kind"]), int(meta["onset_index"]), meta.get("channel", ""),
            float(meta.get("artifact_ms", 0.0)), meta.get("inverted") == "true",
        )
    except (KeyError, ValueError) as exc:
        raise InvalidManifest(f"{path}: malformed evoked-potential table ({exc})") from None
