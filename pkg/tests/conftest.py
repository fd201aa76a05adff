import numpy as np
import pytest

from epkit.core import Kind, SignalBuffer, StimTrain

FS = 19200.0


def rng(seed=0):
    return np.random.Generator(np.random.PCG64(seed))


@pytest.fixture
def fs():
    return FS


def regular_train(n=5, first=2000, fs=FS, f_des=9.0, pulse_width=1.0, kind=Kind.DCR, site=None):
    period = fs / f_des
    onsets = first + np.round(np.arange(n) * period).astype(np.int64)
    return StimTrain(onsets, f_des, pulse_width, tuple((-1) ** k for k in range(n)), kind, site)


def buffer_of(*rows, fs=FS, ids=None):
    rows = np.atleast_2d(np.array(rows, dtype=float))
    ids = ids or tuple(f"ch{i + 1}" for i in range(rows.shape[0]))
    return SignalBuffer(rows, fs, ids)
