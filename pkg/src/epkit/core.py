"""Recordings, stimulation metadata, electrode geometry and session files.

A session lives in a directory: a JSON manifest plus one raw file of
little-endian float32 samples stored channel-major. Time is kept as sample
indices; helpers convert to and from milliseconds at the API boundary.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import InvalidManifest, MissingFile, NonFinite, TruncatedData

logger = logging.getLogger(__name__)

MANIFEST_NAME = "session.json"
SAMPLE_FORMAT = "f32le"
SPACING_TOLERANCE = 0.01


class Kind(str, Enum):
    DCR = "DCR"
    ACEP = "ACEP"


def ms_to_samples(ms: float, fs: float) -> int:
    return int(round(ms * fs / 1000.0))


def samples_to_ms(n: float, fs: float) -> float:
    return n * 1000.0 / fs


def _frozen(a, dtype=np.float64) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class SignalBuffer:
    """Uniformly sampled multichannel voltages in microvolts.

    ``samples`` has shape ``(n_channels, n_samples)`` and is read-only.
    """

    samples: np.ndarray
    fs: float
    channel_ids: tuple[str, ...]

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr[np.newaxis, :]
        if arr.ndim != 2:
            raise InvalidManifest(f"samples must be 2-D, got shape {arr.shape}")
        object.__setattr__(self, "samples", _frozen(arr))
        object.__setattr__(self, "channel_ids", tuple(str(c) for c in self.channel_ids))
        if not (self.fs > 0 and math.isfinite(self.fs)):
            raise InvalidManifest(f"sampling rate must be positive, got {self.fs}")
        if arr.shape[1] < 1:
            raise InvalidManifest("buffer must hold at least one sample")
        if len(self.channel_ids) != arr.shape[0]:
            raise InvalidManifest(
                f"{len(self.channel_ids)} channel ids for {arr.shape[0]} channels"
            )
        if len(set(self.channel_ids)) != len(self.channel_ids):
            raise InvalidManifest("duplicate channel ids")

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def duration_ms(self) -> float:
        return samples_to_ms(self.n_samples, self.fs)

    def index(self, channel: str) -> int:
        try:
            return self.channel_ids.index(channel)
        except ValueError:
            raise InvalidManifest(f"unknown channel {channel!r}") from None

    def channel(self, channel: str) -> np.ndarray:
        return self.samples[self.index(channel)]

    def with_samples(self, samples: np.ndarray) -> "SignalBuffer":
        return SignalBuffer(samples, self.fs, self.channel_ids)


@dataclass(frozen=True)
class StimTrain:
    """One train of stimulation pulses with known onsets (sample indices)."""

    pulse_onsets: np.ndarray
    f_des: float
    pulse_width: float  # ms, full biphasic duration
    polarity_pattern: tuple[int, ...]
    kind: Kind
    site: tuple[float, float, float] | None = None

    def __post_init__(self):
        onsets = np.asarray(self.pulse_onsets, dtype=np.int64)
        object.__setattr__(self, "pulse_onsets", _frozen(onsets, np.int64))
        object.__setattr__(self, "kind", Kind(self.kind))
        pattern = tuple(int(p) for p in self.polarity_pattern)
        object.__setattr__(self, "polarity_pattern", pattern)
        if self.site is not None:
            site = tuple(float(v) for v in self.site)
            if len(site) != 3 or not all(math.isfinite(v) for v in site):
                raise InvalidManifest(f"site must be three finite coordinates, got {self.site}")
            object.__setattr__(self, "site", site)
        if onsets.ndim != 1 or onsets.size < 1:
            raise InvalidManifest("a train needs at least one pulse")
        if np.any(np.diff(onsets) <= 0):
            raise InvalidManifest("pulse onsets must be strictly increasing")
        if not (self.pulse_width > 0):
            raise InvalidManifest(f"pulse width must be positive, got {self.pulse_width}")
        if not (self.f_des > 0):
            raise InvalidManifest(f"stimulation frequency must be positive, got {self.f_des}")
        if len(pattern) != onsets.size or any(p not in (1, -1) for p in pattern):
            raise InvalidManifest("polarity pattern must hold one +1/-1 per pulse")

    @property
    def n_pulses(self) -> int:
        return int(self.pulse_onsets.size)

    def check_spacing(self, fs: float) -> None:
        if self.n_pulses < 2:
            return
        expected = fs / self.f_des
        spacing = np.diff(self.pulse_onsets)
        worst = np.max(np.abs(spacing - expected)) / expected
        if worst > SPACING_TOLERANCE:
            raise InvalidManifest(
                f"pulse spacing deviates {worst:.2%} from {self.f_des} Hz"
            )


def euclidean_distance(a: Sequence[float], b: Sequence[float]) -> float:
    """Straight-line distance between two 3-D points, in their unit (mm)."""
    pa = np.asarray(a, dtype=float)
    pb = np.asarray(b, dtype=float)
    if pa.shape != (3,) or pb.shape != (3,):
        raise ValueError("points must have three coordinates")
    if not (np.all(np.isfinite(pa)) and np.all(np.isfinite(pb))):
        raise NonFinite("coordinates must be finite")
    return math.hypot(*(pa - pb))


@dataclass(frozen=True)
class ElectrodeGeometry:
    positions: Mapping[str, tuple[float, float, float]]
    des_sites: Mapping[str, tuple[float, float, float]] = field(default_factory=dict)

    def __post_init__(self):
        for name, table in (("positions", self.positions), ("des_sites", self.des_sites)):
            clean = {}
            for key, xyz in table.items():
                xyz = tuple(float(v) for v in xyz)
                if len(xyz) != 3 or not all(math.isfinite(v) for v in xyz):
                    raise NonFinite(f"{name}[{key!r}] must be three finite coordinates")
                clean[str(key)] = xyz
            object.__setattr__(self, name, clean)

    def distance(self, channel: str, site: str) -> float:
        return euclidean_distance(self.positions[channel], self.des_sites[site])


@dataclass(frozen=True)
class Session:
    buffer: SignalBuffer
    trains: tuple[StimTrain, ...]
    geometry: ElectrodeGeometry | None = None
    patient_label: str = ""
    processing: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "trains", tuple(self.trains))
        object.__setattr__(self, "processing", tuple(self.processing))
        n = self.buffer.n_samples
        spans = []
        for i, train in enumerate(self.trains):
            train.check_spacing(self.buffer.fs)
            if train.pulse_onsets[0] < 0 or train.pulse_onsets[-1] >= n:
                raise InvalidManifest(f"train {i} has pulses outside the recording")
            spans.append((int(train.pulse_onsets[0]), int(train.pulse_onsets[-1]), i))
        spans.sort()
        for (_, end, i), (start, _, j) in zip(spans, spans[1:]):
            if start <= end:
                raise InvalidManifest(f"trains {i} and {j} overlap in time")
        if self.geometry is not None:
            missing = [c for c in self.buffer.channel_ids if c not in self.geometry.positions]
            if missing:
                raise InvalidManifest(f"no electrode position for channels {missing}")

    def with_buffer(self, buffer: SignalBuffer, step: str | None = None) -> "Session":
        processing = self.processing + ((step,) if step else ())
        return replace(self, buffer=buffer, processing=processing)

    def train_distance(self, train_index: int, channel: str) -> float:
        site = self.trains[train_index].site
        if site is None or self.geometry is None:
            raise InvalidManifest(f"no geometry for train {train_index} / channel {channel!r}")
        return euclidean_distance(site, self.geometry.positions[channel])


# --- manifest I/O -----------------------------------------------------------


def _require(obj: Mapping, key: str, where: str = "manifest"):
    if key not in obj:
        raise InvalidManifest(f"{where} lacks field {key!r}")
    return obj[key]


def _parse_manifest(data: Mapping) -> dict:
    if not isinstance(data, Mapping):
        raise InvalidManifest("manifest must be a JSON object")
    fs = _require(data, "fs_hz")
    if not isinstance(fs, (int, float)) or isinstance(fs, bool) or not fs > 0:
        raise InvalidManifest(f"fs_hz must be a positive number, got {fs!r}")
    if _require(data, "sample_format") != SAMPLE_FORMAT:
        raise InvalidManifest(f"unsupported sample_format {data['sample_format']!r}")
    n_samples = _require(data, "n_samples")
    if not isinstance(n_samples, int) or isinstance(n_samples, bool) or n_samples < 1:
        raise InvalidManifest(f"n_samples must be a positive integer, got {n_samples!r}")
    raw_file = _require(data, "raw_file")
    if not isinstance(raw_file, str) or not raw_file:
        raise InvalidManifest("raw_file must be a file name")
    channels = _require(data, "channels")
    if not isinstance(channels, list) or not channels:
        raise InvalidManifest("channels must be a non-empty list")
    trains = data.get("trains", [])
    if not isinstance(trains, list):
        raise InvalidManifest("trains must be a list")
    processing = data.get("processing", [])
    if not isinstance(processing, list) or not all(isinstance(p, str) for p in processing):
        raise InvalidManifest("processing must be a list of step names")
    label = data.get("patient_label", "")
    if not isinstance(label, str):
        raise InvalidManifest("patient_label must be text")
    return dict(fs=float(fs), n_samples=n_samples, raw_file=raw_file,
                channels=channels, trains=trains, processing=processing, label=label)


def _xyz(value, where: str):
    if value is None:
        return None
    if not isinstance(value, list) or len(value) != 3:
        raise InvalidManifest(f"{where} must be a list of three numbers")
    try:
        xyz = tuple(float(v) for v in value)
    except (TypeError, ValueError):
        raise InvalidManifest(f"{where} must be numeric") from None
    if not all(math.isfinite(v) for v in xyz):
        raise InvalidManifest(f"{where} must be finite")
    return xyz


def _train_from_dict(d, i: int) -> StimTrain:
    where = f"trains[{i}]"
    if not isinstance(d, Mapping):
        raise InvalidManifest(f"{where} must be an object")
    try:
        onsets = [int(v) for v in _require(d, "pulse_onsets_samples", where)]
        pattern = [int(v) for v in _require(d, "polarity_pattern", where)]
        return StimTrain(
            pulse_onsets=np.array(onsets, dtype=np.int64),
            f_des=float(_require(d, "f_des_hz", where)),
            pulse_width=float(_require(d, "pulse_width_ms", where)),
            polarity_pattern=tuple(pattern),
            kind=Kind(_require(d, "kind", where)),
            site=_xyz(d.get("site_xyz_mm"), f"{where}.site_xyz_mm"),
        )
    except InvalidManifest:
        raise
    except (TypeError, ValueError) as exc:
        raise InvalidManifest(f"{where}: {exc}") from None


def session_from_manifest(data: Mapping, samples: np.ndarray) -> Session:
    m = _parse_manifest(data)
    ids, positions = [], {}
    for i, ch in enumerate(m["channels"]):
        if not isinstance(ch, Mapping) or not isinstance(ch.get("id"), str):
            raise InvalidManifest(f"channels[{i}] needs a text id")
        ids.append(ch["id"])
        xyz = _xyz(ch.get("xyz_mm"), f"channels[{i}].xyz_mm")
        if xyz is not None:
            positions[ch["id"]] = xyz
    trains = tuple(_train_from_dict(t, i) for i, t in enumerate(m["trains"]))
    geometry = None
    if positions:
        sites = {f"train{i}": t.site for i, t in enumerate(trains) if t.site is not None}
        geometry = ElectrodeGeometry(positions, sites)
    buffer = SignalBuffer(samples, m["fs"], tuple(ids))
    return Session(buffer, trains, geometry, m["label"], tuple(m["processing"]))


def manifest_dict(session: Session, raw_file: str = "raw.f32") -> dict:
    """Canonical manifest for ``session``; field order is fixed."""
    buf = session.buffer
    positions = session.geometry.positions if session.geometry else {}
    channels = []
    for cid in buf.channel_ids:
        xyz = positions.get(cid)
        channels.append({"id": cid, "xyz_mm": list(xyz) if xyz is not None else None})
    trains = []
    for t in session.trains:
        trains.append({
            "kind": t.kind.value,
            "f_des_hz": float(t.f_des),
            "pulse_width_ms": float(t.pulse_width),
            "pulse_onsets_samples": [int(v) for v in t.pulse_onsets],
            "polarity_pattern": list(t.polarity_pattern),
            "site_xyz_mm": list(t.site) if t.site is not None else None,
        })
    return {
        "patient_label": session.patient_label,
        "fs_hz": float(buf.fs),
        "n_samples": int(buf.n_samples),
        "raw_file": raw_file,
        "sample_format": SAMPLE_FORMAT,
        "channels": channels,
        "trains": trains,
        "processing": list(session.processing),
    }


def dumps_manifest(data: Mapping) -> str:
    return json.dumps(data, indent=2) + "\n"


def _manifest_path(path: str | Path) -> Path:
    path = Path(path)
    return path / MANIFEST_NAME if path.is_dir() else path


def load_session(manifest_path: str | Path) -> Session:
    """Load and validate a session from a manifest file or session directory."""
    path = _manifest_path(manifest_path)
    if not path.is_file():
        raise MissingFile(f"manifest not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InvalidManifest(f"{path}: {exc}") from None
    m = _parse_manifest(data)
    raw_path = path.parent / m["raw_file"]
    if not raw_path.is_file():
        raise MissingFile(f"raw data not found: {raw_path}")
    n_ch = len(m["channels"])
    expected = n_ch * m["n_samples"]
    raw = np.fromfile(raw_path, dtype="<f4")
    if raw.size < expected:
        raise TruncatedData(f"{raw_path} holds {raw.size} samples, manifest claims {expected}")
    if raw.size > expected or raw_path.stat().st_size % 4:
        raise InvalidManifest(f"{raw_path} is larger than the manifest declares")
    if not np.all(np.isfinite(raw)):
        raise NonFinite(f"{raw_path} contains non-finite samples")
    return session_from_manifest(data, raw.reshape(n_ch, m["n_samples"]).astype(np.float64))


def save_session(session: Session, directory: str | Path, raw_file: str = "raw.f32") -> Path:
    """Write ``session`` as manifest + raw file; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    session.buffer.samples.astype("<f4").tofile(directory / raw_file)
    path = directory / MANIFEST_NAME
    path.write_text(dumps_manifest(manifest_dict(session, raw_file)))
    return path
