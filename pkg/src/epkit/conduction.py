"""Onset delays between paired responses and the velocities they imply."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import NonPositiveDelay, NonPositiveDiameter, UndefinedOnset
from .metrics import WaveformMetrics

logger = logging.getLogger(__name__)

HURSH_FACTOR = 6.0  # m/s per micrometre of myelinated axon diameter
MAX_DIAMETER_UM = 20.0


def onset_delay(dcr: WaveformMetrics, acep: WaveformMetrics) -> float:
    """ACEP onset minus DCR onset (ms); positive when the ACEP starts later."""
    if dcr.t_zc1 is None or acep.t_zc1 is None:
        which = "DCR" if dcr.t_zc1 is None else "ACEP"
        raise UndefinedOnset(f"{which} response has no onset zero crossing")
    return float(acep.t_zc1 - dcr.t_zc1)


def velocity_from_delay(distance_mm: float, delay_ms: float) -> float:
    """Straight-line velocity; mm per ms is numerically m/s."""
    if not delay_ms > 0:
        raise NonPositiveDelay(f"delay {delay_ms} ms gives no velocity")
    if not distance_mm > 0:
        raise NonPositiveDelay(f"distance {distance_mm} mm must be positive")
    return distance_mm / delay_ms


def hursh_velocity(diameter_um: float) -> float:
    if not diameter_um > 0:
        raise NonPositiveDiameter(f"axon diameter {diameter_um} um must be positive")
    return HURSH_FACTOR * diameter_um


def hursh_predicted_delay(diameter_um: float, distance_mm: float) -> float:
    """Travel time (ms) over ``distance_mm`` for a fibre of ``diameter_um``."""
    v = hursh_velocity(diameter_um)
    if distance_mm < 0:
        raise ValueError(f"distance {distance_mm} mm must be non-negative")
    return distance_mm / v


@dataclass(frozen=True)
class FiberModel:
    diameter: float

    def __post_init__(self):
        if not 0 < self.diameter <= MAX_DIAMETER_UM:
            raise NonPositiveDiameter(f"diameter {self.diameter} um outside (0, {MAX_DIAMETER_UM}]")

    @property
    def velocity(self) -> float:
        return HURSH_FACTOR * self.diameter

    def delay(self, distance_mm: float) -> float:
        return hursh_predicted_delay(self.diameter, distance_mm)


@dataclass(frozen=True)
class ConductionEstimate:
    """One DCR/ACEP pair. ``velocity`` is None when the delay is not positive."""

    delay: float
    distance: float
    velocity: float | None
    source: tuple[str, str] = ("", "")
    patient: str = ""

    @property
    def valid(self) -> bool:
        return self.velocity is not None

    def to_record(self) -> dict:
        return {
            "patient": self.patient,
            "dcr": self.source[0],
            "acep": self.source[1],
            "distance_mm": self.distance,
            "delay_ms": self.delay,
            "velocity_mps": self.velocity,
            "valid": self.valid,
        }


def make_estimate(delay_ms: float, distance_mm: float, source: tuple[str, str] = ("", ""),
                  patient: str = "") -> ConductionEstimate:
    """Estimate that flags, rather than raises on, a non-positive delay."""
    if not math.isfinite(delay_ms):
        raise UndefinedOnset(f"delay {delay_ms} is not finite")
    try:
        v = velocity_from_delay(distance_mm, delay_ms)
    except NonPositiveDelay as exc:
        logger.warning("%s: %s", patient or "pair", exc)
        v = None
    return ConductionEstimate(float(delay_ms), float(distance_mm), v, tuple(source), patient)


def estimate_conduction(dcr: WaveformMetrics, acep: WaveformMetrics, distance_mm: float,
                        source: tuple[str, str] = ("", ""), patient: str = "") -> ConductionEstimate:
    return make_estimate(onset_delay(dcr, acep), distance_mm, source, patient)


@dataclass(frozen=True)
class VelocitySummary:
    """Aggregates of one group of estimates.

    ``mean`` and ``median`` use valid pairs only. The ``signed`` variants
    also keep negative delays (velocity = distance / delay, sign kept);
    zero delays never contribute.
    """

    n_valid: int
    n_invalid: int
    mean: float | None
    median: float | None
    signed_mean: float | None
    signed_median: float | None

    def to_record(self, **labels) -> dict:
        return {**labels, "n_valid": self.n_valid, "n_invalid": self.n_invalid,
                "mean_mps": self.mean, "median_mps": self.median,
                "signed_mean_mps": self.signed_mean, "signed_median_mps": self.signed_median}


def _stats(values: Sequence[float]) -> tuple[float | None, float | None]:
    if not values:
        return None, None
    return float(np.mean(values)), float(np.median(values))


def summarize(estimates: Iterable[ConductionEstimate]) -> VelocitySummary:
    estimates = list(estimates)
    valid = [e.velocity for e in estimates if e.valid]
    signed = [e.distance / e.delay for e in estimates if e.delay != 0]
    return VelocitySummary(len(valid), len(estimates) - len(valid), *_stats(valid), *_stats(signed))


def velocity_report(estimates: Iterable[ConductionEstimate]) -> tuple[dict[str, VelocitySummary], VelocitySummary]:
    """Per-patient summaries plus a cohort summary of the per-patient means."""
    groups: dict[str, list[ConductionEstimate]] = {}
    for e in estimates:
        groups.setdefault(e.patient, []).append(e)
    per_patient = {p: summarize(es) for p, es in sorted(groups.items())}
    means = [s.mean for s in per_patient.values() if s.mean is not None]
    signed = [s.signed_mean for s in per_patient.values() if s.signed_mean is not None]
    n_bad = sum(s.n_valid == 0 for s in per_patient.values())
    cohort = VelocitySummary(len(means), n_bad, *_stats(means), *_stats(signed))
    return per_patient, cohort
