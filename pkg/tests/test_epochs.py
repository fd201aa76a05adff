import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import FS, buffer_of, regular_train, rng
from epkit.core import Kind
from epkit.epochs import (EpochSet, EvokedPotential, amplitude_gate, average_epochs,
                          baseline_correct, extract_epochs, read_evoked, stability_check,
                          write_evoked)
from epkit.errors import Empty, NoValidEpochs, TooFewEpochs, WindowOutOfRange


def ep_with(values_at, artifact_ms=5.0):
    """Zero EP on the default window with chosen samples set (ms -> uV)."""
    n, onset = 2784, 768
    trace = np.zeros(n)
    for ms, v in values_at.items():
        trace[onset + int(round(ms * FS / 1000))] = v
    return EvokedPotential(trace, (-40.0, 105.0), FS, 1, Kind.DCR, onset, artifact_ms=artifact_ms)


def test_thirty_pulses_give_thirty_epochs_of_2784_samples():
    train = regular_train(30, first=2000)
    buf = buffer_of(rng(0).normal(size=int(train.pulse_onsets[-1]) + 4000))
    es = extract_epochs(buf, train, "ch1")
    assert es.epochs.shape == (30, 2784)
    assert es.onset_index == 768
    assert es.artifact_ms == 5.0 and es.pulse_ms == 1.0
    assert es.times_ms[768] == 0.0


def test_constant_baseline_removed():
    x = np.zeros(8000)
    x[4000 - 96:4000] = 7.0
    es = extract_epochs(buffer_of(x), regular_train(1, first=4000), "ch1")
    assert es.epochs[0, 768 - 96:768].mean() == 0.0
    assert es.epochs[0, 0] == -7.0


def test_out_of_range_pulses_dropped_with_warning(caplog):
    train = regular_train(4, first=500)
    buf = buffer_of(np.zeros(int(train.pulse_onsets[2]) + 2016))
    with caplog.at_level(logging.WARNING):
        es = extract_epochs(buf, train, "ch1")
    assert es.n_epochs == 2 and es.pulse_indices == (1, 2)
    assert "dropped" in caplog.text
    with pytest.raises(NoValidEpochs):
        extract_epochs(buffer_of(np.zeros(1000)), regular_train(1, first=500), "ch1")


def test_window_must_straddle_onset_and_hold_baseline():
    buf = buffer_of(np.zeros(10000))
    with pytest.raises(WindowOutOfRange):
        extract_epochs(buf, regular_train(1, first=5000), "ch1", window=(5.0, 50.0))
    with pytest.raises(WindowOutOfRange):
        extract_epochs(buf, regular_train(1, first=5000), "ch1", window=(-3.0, 50.0))


def test_identical_epochs_average_exactly():
    row = rng(1).normal(size=2784)
    row = baseline_correct(row, 768, FS)
    es = EpochSet(np.tile(row, (10, 1)), (-40.0, 105.0), FS, "ch1", Kind.DCR, 768)
    ep = average_epochs(es)
    assert np.array_equal(ep.trace, row)
    assert ep.n_averaged == 10


def test_average_of_white_noise_shrinks_by_sqrt_n():
    stds = []
    for seed in range(20):
        es = EpochSet(rng(seed).normal(size=(64, 2784)), (-40.0, 105.0), FS, "c", Kind.DCR, 768)
        stds.append(average_epochs(es).trace.std())
    assert np.mean(stds) == pytest.approx(0.125, rel=0.15)


def test_long_trains_keep_precision():
    base = 1e4 + rng(2).normal(size=2784)
    es = EpochSet(np.tile(base, (124, 1)), (-40.0, 105.0), FS, "c", Kind.DCR, 768)
    assert np.max(np.abs(average_epochs(es).trace - base) / np.abs(base)) < 1e-6


def test_empty_set():
    es = EpochSet(np.zeros((1, 2784)), (-40.0, 105.0), FS, "c", Kind.DCR, 768)
    with pytest.raises(Empty):
        average_epochs(es.subset([]))


@pytest.mark.parametrize("peak,accepted", [(250.0, True), (-250.0, True), (80.0, False),
                                           (100.0, True), (99.999, False)])
def test_amplitude_gate(peak, accepted):
    assert bool(amplitude_gate(ep_with({20.0: peak}))) is accepted


def test_gate_ignores_artifact_and_late_samples():
    ep = ep_with({3.0: 900.0, 101.0: -500.0, 50.0: 60.0})
    assert not amplitude_gate(ep)
    assert amplitude_gate(ep).peak_uv == 60.0


def test_gate_n1_mode():
    ep = ep_with({20.0: -120.0, 60.0: 300.0})
    assert amplitude_gate(ep, mode="n1").peak_uv == 120.0
    assert not amplitude_gate(ep_with({60.0: 300.0}), mode="n1")


@settings(max_examples=50, deadline=None)
@given(st.floats(-500, 500), st.floats(0, 400), st.floats(0, 400))
def test_gate_monotone_in_threshold(peak, t1, t2):
    ep = ep_with({30.0: peak})
    lo, hi = sorted((t1, t2))
    if not amplitude_gate(ep, lo):
        assert not amplitude_gate(ep, hi)


def _stability_set(rows):
    return EpochSet(rows, (-40.0, 105.0), FS, "c", Kind.DCR, 768, artifact_ms=5.0)


def test_stability_identical_halves():
    shape = np.sin(np.linspace(0, 6, 2784))
    rep = stability_check(_stability_set(np.tile(shape, (8, 1))))
    assert rep.similarity == pytest.approx(1.0) and rep.stable


def test_stability_growing_amplitude_is_stable():
    shape = np.sin(np.linspace(0, 6, 2784))
    rows = np.array([shape * g for g in np.linspace(1, 2, 20)])
    rep = stability_check(_stability_set(rows))
    assert rep.similarity == pytest.approx(1.0, abs=1e-12) and rep.stable


def test_stability_of_noise_is_low():
    low = 0
    for seed in range(40):
        rep = stability_check(_stability_set(rng(seed).normal(size=(30, 2784))))
        low += abs(rep.similarity) < 0.3 and not rep.stable
    assert low / 40 > 0.95


def test_stability_needs_four_epochs():
    with pytest.raises(TooFewEpochs):
        stability_check(_stability_set(np.zeros((3, 2784))))


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 12), st.integers(0, 2 ** 31))
def test_baseline_commutes_with_averaging(n, seed):
    raw = rng(seed).normal(50, 10, size=(n, 2784))
    a = baseline_correct(raw, 768, FS).mean(axis=0)
    b = baseline_correct(raw.mean(axis=0), 768, FS)
    assert np.allclose(a, b, rtol=1e-9, atol=1e-9 * np.abs(raw).max())
    ep = average_epochs(_stability_set(baseline_correct(raw, 768, FS)))
    assert abs(ep.trace[768 - 96:768].mean()) <= 1e-6 * np.sqrt(np.mean(ep.trace ** 2))


def test_evoked_text_roundtrip(tmp_path):
    ep = ep_with({20.0: -150.0, 60.0: 40.0})
    write_evoked(ep, tmp_path / "ep.txt")
    back = read_evoked(tmp_path / "ep.txt")
    assert back.window == ep.window and back.onset_index == 768 and back.kind is Kind.DCR
    assert np.allclose(back.trace, ep.trace, atol=1e-6)
    assert back.trace.size == round(145 * FS / 1000)
