"""Configuration and the standard processing chain used by the command line."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Iterable, Mapping

from .core import Session
from .epochs import (BASELINE_MS, DEFAULT_WINDOW_MS, EpochSet, EvokedPotential, GateResult,
                     StabilityReport, amplitude_gate, average_epochs, extract_epochs,
                     stability_check)
from .errors import ConfigError, TooFewEpochs
from .metrics import (AREA_MS, METRIC_LOWPASS_HZ, N1_SEARCH_MS, ONSET_LOWPASS_HZ, SLOPE_MS,
                      WaveformMetrics, compute_metrics)
from .preprocess import (DEFAULT_EXTRA_MS, LINE_HZ, FilterSpec, apply_filter, excise_artifact,
                         excision_windows, remove_line_noise)
from .timefreq import GAMMA_CENTERS_MS, TF_BASELINE_MS

logger = logging.getLogger(__name__)

STEP_EXCISE = "excise"
STEP_LINE = "line50"
STEP_BANDPASS = "bandpass"


def _pair(value, name: str) -> tuple[float, float]:
    try:
        a, b = (float(v) for v in value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a pair of numbers, got {value!r}") from None
    return a, b


@dataclass(frozen=True)
class PipelineConfig:
    """Every tunable of the chain. JSON keys match the field names."""

    bandpass_hz: tuple[float, float] = (1.0, 1000.0)
    bandpass_order: int = 2
    metric_lowpass_hz: float = METRIC_LOWPASS_HZ
    onset_lowpass_hz: float = ONSET_LOWPASS_HZ
    excision_extra_ms: float = DEFAULT_EXTRA_MS
    line_hz: float = LINE_HZ
    epoch_window_ms: tuple[float, float] = DEFAULT_WINDOW_MS
    baseline_ms: tuple[float, float] = BASELINE_MS
    amplitude_threshold_uv: float = 100.0
    gate_mode: str = "any"
    n1_search_ms: tuple[float, float] = N1_SEARCH_MS
    area_ms: tuple[float, float] = AREA_MS
    slope_ms: tuple[float, float] = SLOPE_MS
    stability_threshold: float = 0.8
    tf_centers_ms: tuple[float, ...] = GAMMA_CENTERS_MS
    tf_baseline_ms: tuple[float, float] = TF_BASELINE_MS
    invert: bool = False
    output_dir: str = "."

    def __post_init__(self):
        for name in ("bandpass_hz", "epoch_window_ms", "baseline_ms", "n1_search_ms",
                     "area_ms", "slope_ms", "tf_baseline_ms"):
            object.__setattr__(self, name, _pair(getattr(self, name), name))
        object.__setattr__(self, "tf_centers_ms", tuple(float(c) for c in self.tf_centers_ms))
        self.validate()

    def validate(self) -> None:
        w0, w1 = self.epoch_window_ms
        if not w0 < 0 < w1:
            raise ConfigError(f"epoch window {self.epoch_window_ms} must straddle 0 ms")
        b0, b1 = self.baseline_ms
        if not (w0 <= b0 < b1 <= 0):
            raise ConfigError(f"baseline {self.baseline_ms} must lie in [{w0}, 0] ms")
        for name in ("n1_search_ms", "area_ms", "slope_ms"):
            a, b = getattr(self, name)
            if not (0 <= a < b <= w1):
                raise ConfigError(f"{name} {(a, b)} must lie inside (0, {w1}] ms")
        if self.gate_mode not in ("any", "n1"):
            raise ConfigError(f"gate_mode must be 'any' or 'n1', got {self.gate_mode!r}")
        if self.excision_extra_ms < 0 or self.amplitude_threshold_uv < 0:
            raise ConfigError("excision margin and amplitude threshold must be non-negative")
        if not 0 < self.bandpass_hz[0] < self.bandpass_hz[1]:
            raise ConfigError(f"band-pass cutoffs {self.bandpass_hz} must increase")
        if self.bandpass_order < 1:
            raise ConfigError("band-pass order must be at least 1")

    @property
    def bandpass(self) -> FilterSpec:
        return FilterSpec("bandpass", int(self.bandpass_order), self.bandpass_hz, True)

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        try:
            return cls(**dict(data))
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def updated(self, **overrides) -> "PipelineConfig":
        """Copy with every non-None override applied."""
        changes = {k: v for k, v in overrides.items() if v is not None}
        return self.from_dict({**asdict(self), **changes}) if changes else self


def load_config(path: str | Path) -> PipelineConfig:
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return PipelineConfig.from_dict(data)


def save_config(config: PipelineConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=2) + "\n")


# --- chain -------------------------------------------------------------------


def is_clean(session: Session) -> bool:
    return STEP_LINE in session.processing


def preprocess_session(session: Session, config: PipelineConfig = PipelineConfig()) -> Session:
    """Excise every train's artifacts, remove line noise, band-pass."""
    done = set(session.processing)
    windows = [w for tr in session.trains
               for w in excision_windows(tr, session.buffer.fs, config.excision_extra_ms)]
    if STEP_EXCISE not in done:
        buf = session.buffer
        for tr in session.trains:
            buf = excise_artifact(buf, tr, config.excision_extra_ms)
        session = session.with_buffer(buf, STEP_EXCISE)
    if STEP_LINE not in done:
        buf, report = remove_line_noise(session.buffer, windows, line_hz=config.line_hz)
        logger.info("line noise removed, reference channel %s", report.reference_channel)
        session = session.with_buffer(buf, STEP_LINE)
    if STEP_BANDPASS not in done:
        session = session.with_buffer(apply_filter(session.buffer, config.bandpass), STEP_BANDPASS)
    return session


@dataclass(frozen=True)
class TrainResponse:
    """Everything derived from one train on one channel."""

    train_index: int
    epochs: EpochSet
    evoked: EvokedPotential
    gate: GateResult
    stability: StabilityReport | None
    metrics: WaveformMetrics | None = None
    notes: tuple[str, ...] = field(default_factory=tuple)

    @property
    def accepted(self) -> bool:
        return bool(self.gate) and (self.stability is None or self.stability.stable)


def train_response(session: Session, train_index: int, channel: str,
                   config: PipelineConfig = PipelineConfig(),
                   with_metrics: bool = True) -> TrainResponse:
    train = session.trains[train_index]
    epochs = extract_epochs(session.buffer, train, channel, config.epoch_window_ms,
                            train.pulse_width + config.excision_extra_ms, config.baseline_ms)
    ep = average_epochs(epochs)
    gate = amplitude_gate(ep, config.amplitude_threshold_uv, config.gate_mode,
                          n1_window_ms=config.n1_search_ms)
    try:
        stab = stability_check(epochs, config.stability_threshold)
    except TooFewEpochs:
        stab = None
    notes = []
    metrics = None
    if with_metrics and gate:
        metrics = compute_metrics(ep, config.invert, config.n1_search_ms, config.metric_lowpass_hz,
                                  config.area_ms, config.slope_ms)
    elif not gate:
        notes.append(f"below {config.amplitude_threshold_uv} uV gate ({gate.peak_uv:.1f} uV)")
    if stab is not None and not stab.stable:
        notes.append(f"unstable, split-half r = {stab.similarity:.3f}")
    return TrainResponse(train_index, epochs, ep, gate, stab, metrics, tuple(notes))


def session_responses(session: Session, channels: Iterable[str] | None = None,
                      config: PipelineConfig = PipelineConfig()) -> list[TrainResponse]:
    channels = list(session.buffer.channel_ids if channels is None else channels)
    return [train_response(session, i, ch, config)
            for ch in channels for i in range(len(session.trains))]


def response_record(session: Session, resp: TrainResponse) -> dict:
    """Flat metric record of an accepted response, labelled with its origin."""
    train = session.trains[resp.train_index]
    labels = {"patient": session.patient_label, "channel": resp.epochs.channel,
              "train": resp.train_index, "kind": train.kind.value,
              "n_epochs": resp.epochs.n_epochs}
    rec = resp.metrics.to_record(**labels)
    rec["stable"] = None if resp.stability is None else resp.stability.stable
    return rec

