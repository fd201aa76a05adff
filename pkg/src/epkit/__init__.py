"""Evoked-potential toolkit for direct electrical stimulation recordings."""

from .core import Kind, Session, SignalBuffer, StimTrain, load_session, save_session
from .epochs import EpochSet, EvokedPotential, average_epochs, extract_epochs
from .metrics import WaveformMetrics, compute_metrics, per_train_onsets
from .pipeline import PipelineConfig, preprocess_session

__version__ = "0.1.0"

__all__ = [
    "EpochSet", "EvokedPotential", "Kind", "PipelineConfig", "Session", "SignalBuffer",
    "StimTrain", "WaveformMetrics", "average_epochs", "compute_metrics", "extract_epochs",
    "load_session", "per_train_onsets", "preprocess_session", "save_session",
]
