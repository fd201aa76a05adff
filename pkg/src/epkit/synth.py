"""Forward model of DCR / ACEP evoked potentials and synthetic recordings.

An evoked potential is a sum of lobes in continuous time (ms after the
pulse), shifted by a conduction delay:

* P0: brief raised-cosine positivity;
* N1: peak-normalised double exponential (slower decay than rise);
* after-positivity: raised-cosine lobe peaking 50-80 ms (ACEP presets);
* recovery: broad raised-cosine return through zero (DCR presets);

and the sum is tapered to exactly zero before the next pulse of a 9 Hz
train. Because the model is an explicit function, the reference metrics in
:class:`GroundTruth` come from root finding and quadrature on it, not from
the sampled trace the analysis pipeline sees.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import integrate, optimize

from .core import ElectrodeGeometry, Kind, Session, SignalBuffer, StimTrain, ms_to_samples
from .epochs import DEFAULT_WINDOW_MS, EvokedPotential
from .errors import InvalidSpec, KernelOutOfWindow, TrainTooLong

GRID_MS = 0.001
N1_SEARCH_MS = (8.0, 35.0)
AREA_MS = (40.0, 100.0)
SLOPE_MS = (50.0, 80.0)


@dataclass(frozen=True)
class Lobe:
    """Raised cosine: peak ``amplitude`` at ``latency``, full support ``width`` (ms)."""

    latency: float
    amplitude: float
    width: float

    def __post_init__(self):
        if not self.width > 0:
            raise KernelOutOfWindow(f"lobe width must be positive, got {self.width}")

    @property
    def support(self) -> tuple[float, float]:
        return self.latency - self.width / 2, self.latency + self.width / 2

    def value(self, s):
        u = (np.asarray(s, dtype=float) - self.latency) * (2 * np.pi / self.width)
        return np.where(np.abs(u) < np.pi, 0.5 * self.amplitude * (1 + np.cos(u)), 0.0)

    def slope(self, s):
        u = (np.asarray(s, dtype=float) - self.latency) * (2 * np.pi / self.width)
        k = -0.5 * self.amplitude * 2 * np.pi / self.width
        return np.where(np.abs(u) < np.pi, k * np.sin(u), 0.0)


@dataclass(frozen=True)
class N1Kernel:
    """Double exponential reaching ``amplitude`` at ``latency`` (ms).

    Shape ``exp(-u/decay) * (1 - exp(-u/rise))**order`` for ``u`` ms after onset.
    Order 1 is the plain difference of exponentials; higher orders round off the
    onset kink so the kernel survives the 200 Hz analysis filter unchanged.
    """

    latency: float
    amplitude: float
    rise: float
    decay: float
    order: float = 3.0

    def __post_init__(self):
        if not (self.rise > 0 and self.decay > 0):
            raise KernelOutOfWindow(f"time constants must be positive, got {self.rise}, {self.decay}")
        if not self.order >= 1:
            raise KernelOutOfWindow(f"order must be at least 1, got {self.order}")

    @property
    def time_to_peak(self) -> float:
        return self.rise * math.log(1 + self.order * self.decay / self.rise)

    @property
    def onset(self) -> float:
        return self.latency - self.time_to_peak

    def with_decay(self, decay: float) -> "N1Kernel":
        """Same peak time and onset with a new decay; the rise is re-solved to match."""
        tp = self.time_to_peak
        if not self.order * decay > tp:
            raise KernelOutOfWindow(f"decay {decay:.3f} ms cannot hold a {tp:.2f} ms rise")
        f = lambda r: r * math.log(1 + self.order * decay / r) - tp
        hi = self.rise
        while f(hi) < 0:
            hi *= 2
        rise = optimize.brentq(f, 1e-9 * tp, hi, xtol=1e-12)
        return replace(self, rise=rise, decay=decay)

    def _shape(self, u):
        return np.exp(-u / self.decay) * (1 - np.exp(-u / self.rise)) ** self.order

    @property
    def _norm(self) -> float:
        return self.amplitude / float(self._shape(self.time_to_peak))

    def value(self, s):
        u = np.asarray(s, dtype=float) - self.onset
        return np.where(u > 0, self._norm * self._shape(np.maximum(u, 0.0)), 0.0)

    def slope(self, s):
        u = np.maximum(np.asarray(s, dtype=float) - self.onset, 0.0)
        er, ed = np.exp(-u / self.rise), np.exp(-u / self.decay)
        q = self.order
        g = ed * (1 - er) ** (q - 1) * (q * er / self.rise - (1 - er) / self.decay)
        return np.where(u > 0, self._norm * g, 0.0)


@dataclass(frozen=True)
class EpKernelSpec:
    """Parameters of one synthetic evoked potential (ms, microvolts)."""

    n1: N1Kernel
    p0: Lobe | None = None
    after_positivity: Lobe | None = None
    recovery: Lobe | None = None
    conduction_delay: float = 0.0
    kind: Kind = Kind.DCR
    taper: tuple[float, float] = (90.0, 105.0)

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if self.p0 is not None:
            if self.p0.amplitude < 0:
                raise KernelOutOfWindow("P0 must be positive-up")
            if not self.p0.latency < self.n1.latency:
                raise KernelOutOfWindow("P0 must peak before N1")
            if self.p0.support[0] < 0:
                raise KernelOutOfWindow("P0 starts before the pulse")
        if self.n1.onset < 0:
            raise KernelOutOfWindow(f"N1 would start {self.n1.onset:.2f} ms before the pulse")
        if not 0 < self.taper[0] < self.taper[1]:
            raise KernelOutOfWindow(f"invalid taper {self.taper}")

    @property
    def lobes(self) -> list[Lobe]:
        return [lobe for lobe in (self.p0, self.after_positivity, self.recovery) if lobe]

    @property
    def end_ms(self) -> float:
        return self.taper[1] + self.conduction_delay

    def _taper(self, s):
        a, b = self.taper
        u = np.clip((s - a) / (b - a), 0.0, 1.0)
        return 0.5 * (1 + np.cos(np.pi * u)), -0.5 * np.pi / (b - a) * np.sin(np.pi * u) * ((s > a) & (s < b))

    def value(self, t):
        """Trace value at times ``t`` (ms after the pulse)."""
        s = np.asarray(t, dtype=float) - self.conduction_delay
        raw = self.n1.value(s) + sum(lobe.value(s) for lobe in self.lobes)
        h, _ = self._taper(s)
        return raw * h

    def slope(self, t):
        """Exact time derivative, microvolts per ms."""
        s = np.asarray(t, dtype=float) - self.conduction_delay
        raw = self.n1.value(s) + sum(lobe.value(s) for lobe in self.lobes)
        draw = self.n1.slope(s) + sum(lobe.slope(s) for lobe in self.lobes)
        h, dh = self._taper(s)
        return draw * h + raw * dh

    def scaled(self, gain: float) -> "EpKernelSpec":
        def amp(x):
            return None if x is None else replace(x, amplitude=x.amplitude * gain)
        return replace(self, n1=amp(self.n1), p0=amp(self.p0),
                       after_positivity=amp(self.after_positivity), recovery=amp(self.recovery))

    def delayed(self, delay_ms: float) -> "EpKernelSpec":
        return replace(self, conduction_delay=delay_ms)

    def stretched(self, factor: float) -> "EpKernelSpec":
        """Widen the late part: N1 decay and late-lobe timing scale by ``factor``.

        N1 onset and peak stay put, so t_zc1 moves only through the changed rise.
        """
        def late(lobe):
            if lobe is None:
                return None
            return Lobe(self.n1.latency + (lobe.latency - self.n1.latency) * factor,
                        lobe.amplitude, lobe.width * factor)
        n1 = self.n1.with_decay(self.n1.decay * factor)
        return replace(self, n1=n1, after_positivity=late(self.after_positivity),
                       recovery=late(self.recovery))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = self.kind.value
        d["taper"] = list(self.taper)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EpKernelSpec":
        def lobe(x):
            return None if x is None else Lobe(**x)
        return cls(n1=N1Kernel(**d["n1"]), p0=lobe(d.get("p0")),
                   after_positivity=lobe(d.get("after_positivity")),
                   recovery=lobe(d.get("recovery")),
                   conduction_delay=d.get("conduction_delay", 0.0),
                   kind=Kind(d.get("kind", "DCR")), taper=tuple(d.get("taper", (90.0, 105.0))))


def preset(kind: str | Kind) -> EpKernelSpec:
    """Default kernels whose metrics sit near the cohort means of DCR / ACEP.

    DCR has a larger N1 with a slower decay and a broad recovery lobe that
    carries the trace back through zero near 63 ms with a monotonic slope;
    ACEP starts later, decays faster and has a strong after-positivity
    peaking inside 50-80 ms.
    """
    kind = kind if isinstance(kind, Kind) else Kind(kind.upper())
    if kind is Kind.DCR:
        return EpKernelSpec(n1=N1Kernel(17.698, -197.618, 6.755, 15.831, 4.159),
                            p0=Lobe(5.943, 20.0, 11.886), recovery=Lobe(93.533, 24.28, 170.326),
                            kind=kind)
    return EpKernelSpec(n1=N1Kernel(18.0, -150.0, 7.676, 8.742, 4.0), p0=Lobe(4.5, 20.0, 9.0),
                        after_positivity=Lobe(64.258, 42.181, 89.15), kind=kind)


def delay_probe(kind: str | Kind = Kind.ACEP) -> EpKernelSpec:
    """Kernel with a strong P0 and a steep P0/N1 crossing near 8.7 ms.

    Used for delay-recovery checks, where the onset must sit well clear of
    the excised artifact and cross zero quickly.
    """
    kind = kind if isinstance(kind, Kind) else Kind(kind.upper())
    return EpKernelSpec(n1=N1Kernel(18.0, -150.0, 5.0, 18.0, 2.0), p0=Lobe(6.5, 40.0, 8.0), kind=kind)


# --- analytic reference metrics ----------------------------------------------


@dataclass(frozen=True)
class GroundTruth:
    """Metrics of the noise-free continuous model (ms, microvolts)."""

    delay_ms: float
    n1_latency_ms: float
    n1_maxamp_uv: float
    t_zc1_ms: float | None
    t_zc2_ms: float | None
    w_n1_ms: float | None
    whq_n1_ms: float | None
    area_40_100_uvms: float
    min_slope_50_80_uv_per_ms: float
    relaxation_class: str

    def to_dict(self) -> dict:
        return asdict(self)


def _opt(x) -> float | None:
    return None if x is None else float(x)


def _refine_root(f, a: float, b: float) -> float:
    fa, fb = f(a), f(b)
    if fa == 0:
        return a
    if fb == 0:
        return b
    return optimize.brentq(f, a, b, xtol=1e-12)


def _crossings_around(spec: EpKernelSpec, level: float, peak_t: float,
                      lo: float, hi: float) -> tuple[float | None, float | None]:
    """Nearest times before / after ``peak_t`` where the trace rises above ``level``."""
    f = lambda t: float(spec.value(t)) - level
    left = np.arange(peak_t, lo - GRID_MS, -GRID_MS)
    v = spec.value(left) - level
    above = np.nonzero(v >= 0)[0]
    before = None
    if above.size:
        i = above[0]
        before = _refine_root(f, left[i], left[i - 1]) if i > 0 else float(left[0])
    right = np.arange(peak_t, hi + GRID_MS, GRID_MS)
    v = spec.value(right) - level
    above = np.nonzero(v >= 0)[0]
    after = None
    if above.size:
        j = above[0]
        after = _refine_root(f, right[j - 1], right[j]) if j > 0 else float(right[0])
    return before, after


def ground_truth(spec: EpKernelSpec, window: tuple[float, float] = DEFAULT_WINDOW_MS,
                 n1_search_ms: tuple[float, float] = N1_SEARCH_MS,
                 onset_floor_ms: float = 0.0) -> GroundTruth:
    t = np.arange(n1_search_ms[0], n1_search_ms[1] + GRID_MS, GRID_MS)
    i = int(np.argmin(spec.value(t)))
    lo, hi = t[max(i - 1, 0)], t[min(i + 1, t.size - 1)]
    res = optimize.minimize_scalar(lambda x: float(spec.value(x)), bounds=(lo, hi),
                                   method="bounded", options={"xatol": 1e-10})
    n1_t = float(res.x) if res.fun <= spec.value(t[i]) else float(t[i])
    n1_v = float(spec.value(n1_t))

    zc1, zc2 = _crossings_around(spec, 0.0, n1_t, onset_floor_ms, window[1])
    q1, q2 = _crossings_around(spec, n1_v / 4, n1_t, onset_floor_ms, window[1])
    w = zc2 - zc1 if zc1 is not None and zc2 is not None else None
    whq = q2 - q1 if q1 is not None and q2 is not None else None

    breaks = sorted({x for lobe in spec.lobes for x in lobe.support}
                    | {spec.n1.onset, *spec.taper})
    breaks = [b + spec.conduction_delay for b in breaks
              if AREA_MS[0] < b + spec.conduction_delay < AREA_MS[1]]
    area, _ = integrate.quad(lambda x: float(spec.value(x)), *AREA_MS,
                             points=breaks or None, limit=200, epsabs=1e-9, epsrel=1e-11)

    ts = np.arange(SLOPE_MS[0], SLOPE_MS[1] + GRID_MS, GRID_MS)
    ds = spec.slope(ts)
    k = int(np.argmin(ds))
    slope_min = float(ds[k])
    if 0 < k < ts.size - 1:
        res = optimize.minimize_scalar(lambda x: float(spec.slope(x)), bounds=(ts[k - 1], ts[k + 1]),
                                       method="bounded", options={"xatol": 1e-10})
        slope_min = min(slope_min, float(res.fun))
    return GroundTruth(
        delay_ms=float(spec.conduction_delay), n1_latency_ms=n1_t, n1_maxamp_uv=n1_v,
        t_zc1_ms=_opt(zc1), t_zc2_ms=_opt(zc2), w_n1_ms=_opt(w), whq_n1_ms=_opt(whq),
        area_40_100_uvms=float(area), min_slope_50_80_uv_per_ms=slope_min,
        relaxation_class="after-positivity" if slope_min < 0 else "monotonic",
    )


def fit_width(spec: EpKernelSpec, target_w_ms: float,
              bounds: tuple[float, float] = (0.4, 2.5)) -> EpKernelSpec:
    """Stretch the late part of ``spec`` until its analytic W_N1 equals the target."""
    def err(f):
        w = ground_truth(spec.stretched(f)).w_n1_ms
        return (w if w is not None else 1e3) - target_w_ms
    lo, hi = err(bounds[0]), err(bounds[1])
    if lo * hi > 0:
        raise InvalidSpec(f"W_N1 = {target_w_ms} ms is out of reach: stretch factors {bounds} "
                          f"give {lo + target_w_ms:.2f} to {hi + target_w_ms:.2f} ms")
    f = optimize.brentq(err, *bounds, xtol=1e-6)
    return spec.stretched(f)


# --- sampled traces and recordings ---------------------------------------------


@dataclass(frozen=True)
class SyntheticEP:
    ep: EvokedPotential
    truth: GroundTruth


def synth_canonical_ep(spec: EpKernelSpec, fs: float,
                       window: tuple[float, float] = DEFAULT_WINDOW_MS) -> SyntheticEP:
    """Noise-free sampled EP plus the analytic metrics of the same model."""
    peaks = [spec.n1.latency] + [lobe.latency for lobe in spec.lobes if lobe is not spec.recovery]
    for p in peaks:
        if not window[0] < p + spec.conduction_delay < window[1]:
            raise KernelOutOfWindow(f"a lobe peaking at {p + spec.conduction_delay} ms "
                                    f"falls outside {window}")
    i0 = ms_to_samples(window[0], fs)
    i1 = ms_to_samples(window[1], fs)
    t = np.arange(i0, i1) * 1000.0 / fs
    ep = EvokedPotential(spec.value(t), (float(window[0]), float(window[1])), fs, 1,
                         spec.kind, -i0)
    return SyntheticEP(ep, ground_truth(spec, window))


@dataclass(frozen=True)
class NoiseSpec:
    """Contaminants added to a synthetic recording (microvolts, radians)."""

    white_sigma: float = 0.0
    line_50hz_amp: float = 0.0
    line_phase: float = 0.0
    artifact_amp: float = 0.0
    rng_seed: int = 0
    latency_jitter_ms: float = 0.0
    line_hz: float = 50.0

    def __post_init__(self):
        for name in ("white_sigma", "line_50hz_amp", "artifact_amp", "latency_jitter_ms"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


def make_train(n_pulses: int, fs: float, f_des: float = 9.0, first_onset_ms: float = 200.0,
               pulse_width: float = 1.0, kind: str | Kind = Kind.DCR, alternate: bool = True,
               site: Sequence[float] | None = None) -> StimTrain:
    """Regular train with onsets rounded to the sample grid."""
    period = fs / f_des
    first = ms_to_samples(first_onset_ms, fs)
    onsets = first + np.round(np.arange(n_pulses) * period).astype(np.int64)
    pattern = tuple((-1) ** k if alternate else 1 for k in range(n_pulses))
    return StimTrain(onsets, f_des, pulse_width, pattern, Kind(kind),
                     None if site is None else tuple(site))


@dataclass(frozen=True)
class SyntheticRecording:
    session: Session
    truth: GroundTruth
    spec: EpKernelSpec
    noise: NoiseSpec
    pulse_delays_ms: tuple[float, ...] = ()

    def sidecar(self) -> dict:
        return {
            "delay_ms": self.spec.conduction_delay,
            "kernel": self.spec.to_dict(),
            "noise": asdict(self.noise),
            "analytic": self.truth.to_dict(),
            "pulse_delays_ms": list(self.pulse_delays_ms),
        }


def synth_recording(spec: EpKernelSpec, train: StimTrain, noise: NoiseSpec, fs: float,
                    duration: float, channels: Sequence[str] = ("ch1",),
                    gains: Sequence[float] | None = None,
                    positions: dict | None = None, patient_label: str = "synthetic") -> SyntheticRecording:
    """Full recording: EPs at each pulse + artifact stubs + line + white noise.

    ``duration`` is in seconds. Channel ``k`` carries the EP scaled by
    ``gains[k]`` (default 1 everywhere); the line component has the same
    phase on every channel.
    """
    n = int(round(duration * fs))
    rng = np.random.Generator(np.random.PCG64(noise.rng_seed))
    gains = np.ones(len(channels)) if gains is None else np.asarray(gains, dtype=float)
    if gains.size != len(channels):
        raise ValueError("one gain per channel required")

    jitter = rng.normal(0.0, noise.latency_jitter_ms, train.n_pulses) if noise.latency_jitter_ms else np.zeros(train.n_pulses)
    max_shift = max(0.0, float(np.max(jitter)))
    span = ms_to_samples(spec.end_ms + max_shift, fs) + 1
    if train.pulse_onsets[-1] + span > n:
        raise TrainTooLong(f"train needs {int(train.pulse_onsets[-1]) + span} samples, "
                           f"recording has {n}")

    clean = np.zeros(n)
    local_t = np.arange(span) * 1000.0 / fs
    for onset, dj in zip(train.pulse_onsets, jitter):
        shifted = spec.delayed(spec.conduction_delay + float(dj))
        clean[onset:onset + span] += shifted.value(local_t)

    artifact = np.zeros(n)
    if noise.artifact_amp:
        n_pw = max(ms_to_samples(train.pulse_width, fs), 1)
        half = max(n_pw // 2, 1)
        for onset, pol in zip(train.pulse_onsets, train.polarity_pattern):
            artifact[onset:onset + half] += pol * noise.artifact_amp
            artifact[onset + half:onset + n_pw] -= pol * noise.artifact_amp

    line = noise.line_50hz_amp * np.sin(2 * np.pi * noise.line_hz * np.arange(n) / fs + noise.line_phase)
    data = gains[:, None] * clean[None, :] + artifact[None, :] + line[None, :]
    if noise.white_sigma:
        data = data + rng.normal(0.0, noise.white_sigma, data.shape)

    geometry = None
    if positions:
        sites = {"train0": train.site} if train.site is not None else {}
        geometry = ElectrodeGeometry(positions, sites)
    session = Session(SignalBuffer(data, fs, tuple(channels)), (train,), geometry, patient_label)
    return SyntheticRecording(session, ground_truth(spec), spec, noise,
                              tuple(float(spec.conduction_delay + d) for d in jitter))


def write_sidecar(rec: SyntheticRecording, path: str | Path) -> None:
    Path(path).write_text(json.dumps(rec.sidecar(), indent=2) + "\n")
