import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import FS
from epkit.core import Kind
from epkit.epochs import average_epochs, extract_epochs
from epkit.errors import InvalidSpec, KernelOutOfWindow, TrainTooLong
from epkit.metrics import compute_metrics
from epkit.pipeline import PipelineConfig, preprocess_session
from epkit.synth import (EpKernelSpec, Lobe, N1Kernel, NoiseSpec, delay_probe, fit_width,
                         ground_truth, make_train, preset, synth_canonical_ep, synth_recording,
                         write_sidecar)


@pytest.mark.parametrize("kind", ["DCR", "ACEP"])
def test_preset_timing_ranges(kind):
    ep = synth_canonical_ep(preset(kind), FS).ep
    t = ep.times_ms
    early = (t > 0) & (t < 10)
    p0 = t[early][np.argmax(ep.trace[early])]
    n1 = t[np.argmin(ep.trace)]
    assert 3 <= p0 <= 8
    assert 10 <= n1 <= 25


def test_presets_order_widths_and_relaxation():
    dcr, acep = ground_truth(preset("DCR")), ground_truth(preset("ACEP"))
    assert preset("DCR").n1.decay > preset("ACEP").n1.decay
    assert dcr.w_n1_ms == pytest.approx(57.24, abs=0.05)
    assert acep.w_n1_ms == pytest.approx(34.58, abs=0.05)
    assert dcr.t_zc1_ms < acep.t_zc1_ms
    assert dcr.relaxation_class == "monotonic" and acep.relaxation_class == "after-positivity"
    assert preset("DCR").after_positivity is None and preset("ACEP").after_positivity is not None


def test_delay_shows_up_in_cross_correlation():
    a = synth_canonical_ep(preset("ACEP"), FS).ep.trace
    b = synth_canonical_ep(preset("ACEP").delayed(2.4), FS).ep.trace
    xc = np.correlate(b, a, mode="full")
    k = int(np.argmax(xc))
    y0, y1, y2 = xc[k - 1:k + 2]
    lag = k - (a.size - 1) + 0.5 * (y0 - y2) / (y0 - 2 * y1 + y2)
    assert k - (a.size - 1) == round(2.4 * FS / 1000)
    assert lag * 1000 / FS == pytest.approx(2.4, abs=0.01)


def test_scaling_doubles_amplitude_keeps_timing():
    a = synth_canonical_ep(preset("DCR"), FS)
    b = synth_canonical_ep(preset("DCR").scaled(2.0), FS)
    assert np.array_equal(b.ep.trace, 2 * a.ep.trace)
    assert b.truth.n1_maxamp_uv == pytest.approx(2 * a.truth.n1_maxamp_uv, rel=1e-12)
    assert b.truth.t_zc1_ms == pytest.approx(a.truth.t_zc1_ms, abs=1e-9)
    ma, mb = compute_metrics(a.ep), compute_metrics(b.ep)
    assert mb.N1_MAXAMP == pytest.approx(2 * ma.N1_MAXAMP, rel=1e-9)
    assert mb.t_zc1 == pytest.approx(ma.t_zc1, abs=1e-9)


def test_classic_double_exponential_at_order_one():
    k = N1Kernel(18.0, -150.0, 3.0, 20.0, order=1.0)
    u = np.linspace(0.01, 80, 500)
    tau = 3.0 * 20.0 / 23.0  # effective rise constant
    g = np.exp(-u / 20.0) - np.exp(-u / tau)
    tp = tau * 20.0 / (20.0 - tau) * np.log(20.0 / tau)
    assert k.time_to_peak == pytest.approx(tp, rel=1e-12)
    ref = -150.0 * g / (np.exp(-tp / 20.0) - np.exp(-tp / tau))
    assert np.allclose(k.value(k.onset + u), ref, rtol=1e-12, atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.sampled_from(["DCR", "ACEP"]), st.floats(-1.0, 4.0), st.floats(0.7, 1.4))
def test_slope_is_the_derivative(kind, delay, stretch):
    spec = preset(kind).delayed(delay).stretched(stretch)
    t = np.linspace(0.5, 104, 2000)
    h = 1e-5
    fd = (spec.value(t + h) - spec.value(t - h)) / (2 * h)
    assert np.allclose(spec.slope(t), fd, atol=1e-4)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.5, 2.0))
def test_with_decay_keeps_peak_and_onset(factor):
    k = preset("ACEP").n1
    j = k.with_decay(k.decay * factor)
    assert j.time_to_peak == pytest.approx(k.time_to_peak, rel=1e-9)
    t = np.linspace(0, 60, 60001)
    assert t[np.argmin(j.value(t))] == pytest.approx(k.latency, abs=2e-3)


@pytest.mark.parametrize("spec", [preset("DCR"), preset("ACEP"), delay_probe()],
                         ids=["DCR", "ACEP", "probe"])
def test_ground_truth_against_dense_sampling(spec):
    g = ground_truth(spec)
    t = np.linspace(0.0, 105.0, 1_050_001)  # 0.1 us grid
    y = spec.value(t)
    i = int(np.argmin(y))
    assert g.n1_latency_ms == pytest.approx(t[i], abs=1e-3)
    assert g.n1_maxamp_uv == pytest.approx(y[i], rel=1e-6)
    neg = np.nonzero(y[:i] >= 0)[0][-1]
    assert g.t_zc1_ms == pytest.approx(t[neg], abs=2e-4)
    pos = i + np.nonzero(y[i:] >= 0)[0][0]
    assert g.t_zc2_ms == pytest.approx(t[pos], abs=2e-4)
    band = (t >= 40) & (t <= 100)
    assert g.area_40_100_uvms == pytest.approx(np.trapezoid(y[band], t[band]), rel=1e-6)


@settings(max_examples=12, deadline=None)
@given(st.sampled_from(["DCR", "ACEP"]), st.floats(0.8, 1.3), st.floats(0.0, 3.0))
def test_oracle_consistency(kind, stretch, delay):
    syn = synth_canonical_ep(preset(kind).stretched(stretch).delayed(delay), FS)
    m, g = compute_metrics(syn.ep), syn.truth
    for got, want in [(m.t_zc1, g.t_zc1_ms), (m.t_zc2, g.t_zc2_ms), (m.N1_latency, g.n1_latency_ms)]:
        assert got == pytest.approx(want, abs=0.1)
    assert m.N1_MAXAMP == pytest.approx(g.n1_maxamp_uv, rel=0.01)


def test_probe_crossing_is_clear_of_the_artifact():
    g = ground_truth(delay_probe())
    assert 8.0 < g.t_zc1_ms < 9.5
    assert float(delay_probe().slope(g.t_zc1_ms)) < -20.0


def test_kernel_validation():
    with pytest.raises(KernelOutOfWindow):
        EpKernelSpec(n1=N1Kernel(18.0, -150.0, 5.0, 12.0), p0=Lobe(20.0, 20.0, 4.0))
    with pytest.raises(KernelOutOfWindow):
        EpKernelSpec(n1=N1Kernel(5.0, -150.0, 5.0, 12.0))
    with pytest.raises(KernelOutOfWindow):
        Lobe(5.0, 20.0, 0.0)
    with pytest.raises(KernelOutOfWindow):
        N1Kernel(18.0, -150.0, -1.0, 12.0)
    with pytest.raises(KernelOutOfWindow):
        synth_canonical_ep(preset("ACEP").delayed(90.0), FS)


def test_fit_width():
    for kind, w in (("DCR", 45.0), ("DCR", 80.0), ("ACEP", 28.0), ("ACEP", 50.0)):
        assert ground_truth(fit_width(preset(kind), w)).w_n1_ms == pytest.approx(w, abs=0.01)
    with pytest.raises(InvalidSpec):
        fit_width(preset("ACEP"), 10.0)


def test_spec_dict_roundtrip():
    for spec in (preset("DCR").delayed(1.5), preset("ACEP"), delay_probe("DCR")):
        assert EpKernelSpec.from_dict(json.loads(json.dumps(spec.to_dict()))) == spec


# --- recordings --------------------------------------------------------------------


def recording(spec, n=30, duration=4.0, **noise):
    train = make_train(n, FS, kind=spec.kind)
    return synth_recording(spec, train, NoiseSpec(**noise), FS, duration)


def test_artifact_stubs_at_pulse_onsets():
    with_art = recording(preset("DCR"), artifact_amp=500.0).session
    without = recording(preset("DCR")).session
    diff = with_art.buffer.samples[0] - without.buffer.samples[0]
    onsets = with_art.trains[0].pulse_onsets
    assert onsets.size == 30
    assert np.array_equal(onsets, onsets[0] + np.round(np.arange(30) * FS / 9.0))
    starts = np.nonzero((diff != 0) & (np.roll(diff, 1) == 0))[0]
    assert np.array_equal(starts, onsets)
    n_pw = round(1.0 * FS / 1000)
    for k, o in enumerate(onsets):
        sign = (-1) ** k
        assert np.all(diff[o:o + n_pw // 2] == sign * 500.0)
        assert np.all(diff[o + n_pw // 2:o + n_pw] == -sign * 500.0)
    assert np.count_nonzero(diff) == 30 * n_pw


def test_superposition_outside_stubs():
    spec = preset("ACEP")
    rec = recording(spec, artifact_amp=300.0)
    x = rec.session.buffer.samples[0]
    onsets = rec.session.trains[0].pulse_onsets
    span = round(spec.end_ms * FS / 1000) + 1
    tiled = np.zeros(x.size)
    t = np.arange(span) * 1000 / FS
    for o in onsets:
        tiled[o:o + span] += spec.value(t)
    stubs = np.zeros(x.size, bool)
    for o in onsets:
        stubs[o:o + round(FS / 1000)] = True
    assert np.array_equal(x[~stubs], tiled[~stubs])


def test_determinism_and_seed_sensitivity():
    a = recording(preset("DCR"), white_sigma=20, line_50hz_amp=50, rng_seed=7, latency_jitter_ms=0.3)
    b = recording(preset("DCR"), white_sigma=20, line_50hz_amp=50, rng_seed=7, latency_jitter_ms=0.3)
    c = recording(preset("DCR"), white_sigma=20, line_50hz_amp=50, rng_seed=8, latency_jitter_ms=0.3)
    assert a.session.buffer.samples.tobytes() == b.session.buffer.samples.tobytes()
    assert a.pulse_delays_ms == b.pulse_delays_ms
    assert not np.array_equal(a.session.buffer.samples, c.session.buffer.samples)


def test_train_too_long():
    with pytest.raises(TrainTooLong):
        recording(preset("DCR"), n=40, duration=4.0)


def test_sidecar(tmp_path):
    rec = recording(preset("ACEP").delayed(2.4), white_sigma=5, rng_seed=3)
    write_sidecar(rec, tmp_path / "truth.json")
    data = json.loads((tmp_path / "truth.json").read_text())
    assert data["delay_ms"] == 2.4
    assert data["analytic"]["t_zc1_ms"] == pytest.approx(ground_truth(preset("ACEP")).t_zc1_ms + 2.4)
    assert EpKernelSpec.from_dict(data["kernel"]) == rec.spec
    assert data["noise"]["rng_seed"] == 3


def _residual_rms(rec, session):
    es = extract_epochs(session.buffer, session.trains[0], "ch1")
    ep = average_epochs(es)
    keep = ep.times_ms >= 6.0  # past the interpolated artifact
    clean = rec.spec.value(ep.times_ms)
    return float(np.sqrt(np.mean((ep.trace - clean)[keep] ** 2))), es.n_epochs


def test_line_noise_cleaned_to_template():
    rec = recording(preset("DCR"), n=64, duration=8.0, line_50hz_amp=50.0, line_phase=0.7,
                    artifact_amp=500.0, rng_seed=1)
    rms, n = _residual_rms(rec, preprocess_session(rec.session, PipelineConfig()))
    assert n == 64
    assert rms < 5.0


def test_white_noise_averages_down():
    rms = [_residual_rms(rec, rec.session)[0] for rec in
           (recording(preset("ACEP"), n=64, duration=8.0, white_sigma=20.0, rng_seed=s) for s in range(5))]
    assert np.mean(rms) == pytest.approx(20.0 / 8.0, rel=0.2)
    assert Kind.ACEP == recording(preset("ACEP"), n=2).session.trains[0].kind
