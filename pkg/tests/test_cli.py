import json

import pytest

from epkit.cli import main, run_command
from epkit.core import load_session, save_session
from epkit.metrics import read_records, write_records


def simulate(out, *extra, preset="acep", seed=7, pulses=12):
    argv = ["simulate", "--preset", preset, "--pulses", str(pulses), "--seed", str(seed),
            "--out", str(out), *extra]
    assert run_command(argv) == 0
    return out / "session.json"


@pytest.fixture(scope="module")
def raw(tmp_path_factory):
    return simulate(tmp_path_factory.mktemp("raw"), "--delay-ms", "1.5", "--label", "p1")


def test_simulate_writes_session_and_sidecar(raw):
    folder = raw.parent
    assert {"session.json", "raw.f32", "ground_truth.json"} <= {p.name for p in folder.iterdir()}
    side = json.loads((folder / "ground_truth.json").read_text())
    assert side["delay_ms"] == 1.5
    assert side["noise"]["rng_seed"] == 7
    s = load_session(raw)
    assert s.buffer.channel_ids == ("ch1", "ch2", "ch3", "ch4")
    assert len(s.trains) == 1 and s.trains[0].n_pulses == 12
    assert s.patient_label == "p1"


def test_exit_codes(tmp_path, raw):
    assert run_command([]) == 1
    assert run_command(["frobnicate"]) == 1
    assert run_command(["metrics"]) == 1  # --session missing
    assert run_command(["simulate", "--preset", "ccep"]) == 1
    assert run_command(["metrics", "--session", str(tmp_path / "none.json")]) == 2
    assert run_command(["tfr", "--session", str(raw), "--channel", "ch1"]) == 2
    assert run_command(["epochs", "--session", str(raw), "--channel", "ch1", "--train", "5",
                        "--out", str(tmp_path / "e")]) == 2
    (tmp_path / "bad.json").write_text('{"gate_mode": "peak"}')
    assert run_command(["metrics", "--session", str(raw), "--config", str(tmp_path / "bad.json")]) == 1


def test_main_exits_with_status():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 1


def test_preprocess_then_metrics(tmp_path, raw):
    assert run_command(["preprocess", "--session", str(raw), "--out", str(tmp_path / "clean")]) == 0
    clean = load_session(tmp_path / "clean" / "session.json")
    assert clean.processing == ("excise", "line50", "bandpass")
    out = tmp_path / "m.txt"
    assert run_command(["metrics", "--session", str(tmp_path / "clean" / "session.json"),
                        "--channel", "ch3", "--out", str(out)]) == 0
    recs = read_records(out)
    assert len(recs) == 1 and recs[0]["channel"] == "ch3" and recs[0]["kind"] == "ACEP"
    truth = json.loads((raw.parent / "ground_truth.json").read_text())["analytic"]
    assert recs[0]["t_zc1_ms"] == pytest.approx(truth["t_zc1_ms"], abs=0.3)
    # a raw session is cleaned in memory; only the float32 storage step differs
    again = tmp_path / "m2.txt"
    assert run_command(["metrics", "--session", str(raw), "--channel", "ch3", "--out", str(again)]) == 0
    assert read_records(again)[0]["t_zc1_ms"] == pytest.approx(recs[0]["t_zc1_ms"], abs=0.01)


def test_flag_beats_config_beats_default(tmp_path, raw):
    def n_records(*extra):
        out = tmp_path / "m.txt"
        assert run_command(["metrics", "--session", str(raw), "--out", str(out), *extra]) == 0
        return len(read_records(out))

    # channel gains 1, 0.8, 1.2, 0.7: every channel clears the 100 uV default
    assert n_records() == 4
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"amplitude_threshold_uv": 1e4}))
    assert n_records("--config", str(cfg)) == 0
    assert n_records("--config", str(cfg), "--threshold-uv", "50") == 4
    # the config may also come before the command name
    out = tmp_path / "m.txt"
    assert run_command(["--config", str(cfg), "metrics", "--session", str(raw), "--out", str(out)]) == 0
    assert read_records(out) == []


def test_output_env_relocates_relative_paths(tmp_path, raw, monkeypatch):
    monkeypatch.setenv("EPKIT_OUT", str(tmp_path / "base"))
    assert run_command(["metrics", "--session", str(raw), "--channel", "ch1", "--out", "m.txt"]) == 0
    assert (tmp_path / "base" / "m.txt").exists()
    absolute = tmp_path / "abs.txt"
    assert run_command(["metrics", "--session", str(raw), "--channel", "ch1", "--out", str(absolute)]) == 0
    assert absolute.exists()


def test_epochs_and_tfr(tmp_path, raw):
    assert run_command(["epochs", "--session", str(raw), "--channel", "ch2", "--out", str(tmp_path / "e")]) == 0
    summary = read_records(tmp_path / "e" / "epochs_summary.txt")
    assert summary[0]["n_epochs"] == 12 and summary[0]["accepted"]
    assert (tmp_path / "e" / summary[0]["file"]).exists()
    assert run_command(["tfr", "--session", str(raw), "--channel", "ch1", "--allow-dirty",
                        "--out", str(tmp_path / "tf.txt"), "--summary", str(tmp_path / "g.txt")]) == 0
    g = read_records(tmp_path / "g.txt")[0]
    assert g["gamma_bin_hz"] == 50.0 and g["kind"] == "ACEP"


def test_velocity_and_compare_flow(tmp_path):
    """Both presets shifted 1.5 ms clear of the excised artifact, three patients."""
    dcr_recs, acep_recs = [], []
    for i in range(3):
        for kind, delay in (("dcr", "1.5"), ("acep", "1.5")):
            folder = tmp_path / f"{kind}{i}"
            simulate(folder, "--delay-ms", delay, "--label", f"p{i}", preset=kind, seed=10 + i)
            out = tmp_path / f"{kind}{i}.txt"
            assert run_command(["metrics", "--session", str(folder / "session.json"),
                                "--channel", "ch1", "--out", str(out)]) == 0
            (dcr_recs if kind == "dcr" else acep_recs).extend(read_records(out))
    write_records(dcr_recs, tmp_path / "dcr.txt")
    write_records(acep_recs, tmp_path / "acep.txt")

    assert run_command(["velocity", "--dcr", str(tmp_path / "dcr.txt"), "--acep", str(tmp_path / "acep.txt"),
                        "--out", str(tmp_path / "v.txt")]) == 0
    v = read_records(tmp_path / "v.txt")
    pairs = [r for r in v if r["record"] == "pair"]
    assert len(pairs) == 3 and all(r["valid"] for r in pairs)
    # ACEP starts about 1.8 ms later; ACEP site to ch1 is about 22 mm away
    for r in pairs:
        assert r["delay_ms"] == pytest.approx(1.8, abs=0.3)
        assert r["velocity_mps"] == pytest.approx(r["distance_mm"] / r["delay_ms"])
    assert v[-1]["record"] == "cohort" and v[-1]["n_valid"] == 3

    assert run_command(["compare", "--a", str(tmp_path / "acep.txt"), "--b", str(tmp_path / "dcr.txt"),
                        "--field", "t_zc1_ms", "--test", "paired-t", "--tails", "one",
                        "--alternative", "greater", "--out", str(tmp_path / "c.txt")]) == 0
    c = read_records(tmp_path / "c.txt")[0]
    assert c["test_name"] == "paired-t" and c["tails"] == "one" and c["df"] == 2
    assert c["field"] == "t_zc1_ms" and c["p_value"] < 0.05
    assert run_command(["compare", "--a", str(tmp_path / "acep.txt"), "--field", "w_n1_ms",
                        "--test", "shapiro", "--out", str(tmp_path / "s.txt")]) == 0
    assert run_command(["compare", "--a", str(tmp_path / "acep.txt"), "--field", "nope",
                        "--test", "shapiro"]) == 2
    assert run_command(["compare", "--a", str(tmp_path / "acep.txt"), "--field", "w_n1_ms",
                        "--test", "paired-t"]) == 1


def test_velocity_without_pairs_is_a_data_error(tmp_path, raw):
    out = tmp_path / "m.txt"
    run_command(["metrics", "--session", str(raw), "--channel", "ch1", "--out", str(out)])
    other = [dict(r, patient="someone-else") for r in read_records(out)]
    write_records(other, tmp_path / "o.txt")
    assert run_command(["velocity", "--dcr", str(out), "--acep", str(tmp_path / "o.txt")]) == 2


def test_same_command_twice_gives_same_bytes(tmp_path):
    a = simulate(tmp_path / "a", "--delay-ms", "2.4")
    b = simulate(tmp_path / "b", "--delay-ms", "2.4")
    for name in ("session.json", "raw.f32", "ground_truth.json"):
        assert (a.parent / name).read_bytes() == (b.parent / name).read_bytes()
    c = simulate(tmp_path / "c", "--delay-ms", "2.4", seed=8)
    assert (c.parent / "raw.f32").read_bytes() != (a.parent / "raw.f32").read_bytes()


def test_saved_session_reloads_identically(tmp_path, raw):
    s = load_session(raw)
    save_session(s, tmp_path / "copy")
    assert (tmp_path / "copy" / "raw.f32").read_bytes() == (raw.parent / "raw.f32").read_bytes()
