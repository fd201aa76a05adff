"""``epkit`` command line.

Settings resolve as: command-line flag, then ``--config`` JSON file, then
built-in defaults. Relative output paths are placed under ``$EPKIT_OUT``
when that variable is set. Exit status: 0 ok, 1 usage or config error,
2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path
from typing import Sequence

from . import conduction, stats
from .core import Kind, load_session, save_session
from .epochs import write_evoked
from .errors import DataError, EpkitError, InvalidManifest, UnknownCommand
from .metrics import read_records, write_records
from .pipeline import (PipelineConfig, is_clean, load_config, preprocess_session,
                       response_record, session_responses, train_response)
from .synth import NoiseSpec, make_train, preset, synth_recording, write_sidecar
from .timefreq import gamma_band_summary, stft_power_db, write_tf_map

logger = logging.getLogger("epkit")

COMMANDS = ("simulate", "preprocess", "epochs", "metrics", "tfr", "velocity", "compare")
OUT_ENV = "EPKIT_OUT"
FS_DEFAULT = 19200.0

# simulated montage: a 4-contact strip, 10 mm pitch
SIM_CHANNELS = ("ch1", "ch2", "ch3", "ch4")
SIM_GAINS = (1.0, 0.8, 1.2, 0.7)
SIM_POSITIONS = {ch: (10.0 * i, 0.0, 0.0) for i, ch in enumerate(SIM_CHANNELS)}
SIM_SITES = {Kind.DCR: (0.0, 5.0, 0.0), Kind.ACEP: (10.0, 0.0, -20.0)}


class UsageError(EpkitError):
    exit_code = 1


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _out_path(path: str | None, default: str) -> Path:
    p = Path(path if path is not None else default)
    base = os.environ.get(OUT_ENV)
    if base and not p.is_absolute():
        p = Path(base) / p
    return p


def _config(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    return cfg.updated(
        amplitude_threshold_uv=getattr(args, "threshold_uv", None),
        epoch_window_ms=getattr(args, "window_ms", None),
        invert=True if getattr(args, "invert", False) else None,
    )


def _dump(records, path: Path | None) -> None:
    if path is None:
        for r in records:
            sys.stdout.write(json.dumps(r) + "\n")
    else:
        path.parent.mkdir(parents=True, exist_ok=True)
        write_records(records, path)


# --- subcommands -------------------------------------------------------------


def cmd_simulate(args) -> int:
    spec = preset(args.preset).delayed(args.delay_ms)
    cfg = _config(args)
    train = make_train(args.pulses, args.fs, args.rate_hz, first_onset_ms=200.0,
                       pulse_width=args.pulse_width_ms, kind=spec.kind,
                       site=SIM_SITES[spec.kind])
    period_s = 1.0 / args.rate_hz
    duration = args.duration_s or round(0.2 + args.pulses * period_s + 0.4, 3)
    noise = NoiseSpec(args.white_uv, args.line_uv, args.line_phase, args.artifact_uv, args.seed,
                      args.jitter_ms)
    rec = synth_recording(spec, train, noise, args.fs, duration, SIM_CHANNELS, SIM_GAINS,
                          SIM_POSITIONS, patient_label=args.label or f"sim-{args.seed}")
    out = _out_path(args.out, cfg.output_dir)
    save_session(rec.session, out)
    write_sidecar(rec, out / "ground_truth.json")
    logger.info("wrote %s", out)
    return 0


def cmd_preprocess(args) -> int:
    cfg = _config(args)
    session = preprocess_session(load_session(args.session), cfg)
    out = _out_path(args.out, cfg.output_dir)
    save_session(session, out)
    return 0


def _load_clean(path: str, cfg: PipelineConfig):
    session = load_session(path)
    if not is_clean(session):
        logger.info("session %s is raw; preprocessing in memory", path)
        session = preprocess_session(session, cfg)
    return session


def _trains(session, selected: int | None) -> list[int]:
    if selected is None:
        return list(range(len(session.trains)))
    if not 0 <= selected < len(session.trains):
        raise DataError(f"train {selected} does not exist (session has {len(session.trains)})")
    return [selected]


def cmd_epochs(args) -> int:
    cfg = _config(args)
    session = _load_clean(args.session, cfg)
    out = _out_path(args.out, cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = []
    for i in _trains(session, args.train):
        resp = train_response(session, i, args.channel, cfg, with_metrics=False)
        name = f"evoked_{args.channel}_train{i}.txt"
        write_evoked(resp.evoked, out / name)
        summary.append({
            "channel": args.channel, "train": i, "kind": resp.evoked.kind.value,
            "n_epochs": resp.epochs.n_epochs, "file": name,
            "gate_peak_uv": resp.gate.peak_uv, "accepted": resp.gate.accepted,
            "stability_r": None if resp.stability is None else resp.stability.similarity,
            "stable": None if resp.stability is None else resp.stability.stable,
        })
    write_records(summary, out / "epochs_summary.txt")
    return 0


def cmd_metrics(args) -> int:
    cfg = _config(args)
    session = _load_clean(args.session, cfg)
    channels = [args.channel] if args.channel else list(session.buffer.channel_ids)
    records = []
    for resp in session_responses(session, channels, cfg):
        if resp.train_index not in _trains(session, args.train):
            continue
        if resp.metrics is None:
            logger.info("train %d on %s rejected: %s", resp.train_index,
                        resp.epochs.channel, "; ".join(resp.notes))
            continue
        rec = response_record(session, resp)
        try:
            rec["distance_mm"] = session.train_distance(resp.train_index, resp.epochs.channel)
        except InvalidManifest:
            rec["distance_mm"] = None
        records.append(rec)
    if not records:
        logger.warning("no response passed the amplitude gate")
    _dump(records, _out_path(args.out, "metrics.txt"))
    return 0


def cmd_tfr(args) -> int:
    cfg = _config(args)
    session = load_session(args.session)
    if not is_clean(session):
        if not args.allow_dirty:
            raise DataError("session has no line-noise cleaning; run 'epkit preprocess' "
                            "first or pass --allow-dirty")
        logger.warning("time-frequency analysis on a session without line cleaning")
    i = _trains(session, args.train)[0]
    resp = train_response(session, i, args.channel, cfg, with_metrics=False)
    tf = stft_power_db(resp.epochs, baseline_ms=cfg.tf_baseline_ms)
    out = _out_path(args.out, "tfr.txt")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_tf_map(tf, out)
    gamma = gamma_band_summary(tf, cfg.tf_centers_ms)
    rec = {"patient": session.patient_label, "channel": args.channel, "train": i,
           "kind": resp.evoked.kind.value, "gamma_bin_hz": tf.gamma_bin_hz,
           "centers_ms": list(cfg.tf_centers_ms), "gamma_db": gamma}
    _dump([rec], None if args.summary is None else _out_path(args.summary, "gamma.txt"))
    return 0


def _pair_key(rec: dict) -> tuple:
    return rec.get("patient", ""), rec.get("channel", "")


def cmd_velocity(args) -> int:
    dcr = read_records(args.dcr)
    acep = read_records(args.acep)
    by_key = {_pair_key(r): r for r in dcr}
    estimates, records = [], []
    for a in acep:
        d = by_key.get(_pair_key(a))
        if d is None:
            logger.warning("no DCR record for %s/%s", *_pair_key(a))
            continue
        distance = args.distance_mm if args.distance_mm is not None else a.get("distance_mm")
        if distance is None:
            raise DataError(f"no distance for {_pair_key(a)}; pass --distance-mm")
        if d.get("t_zc1_ms") is None or a.get("t_zc1_ms") is None:
            logger.warning("%s/%s: undefined onset, pair skipped", *_pair_key(a))
            continue
        delay = float(a["t_zc1_ms"]) - float(d["t_zc1_ms"])
        est = conduction.make_estimate(
            delay, float(distance), (f"train{d.get('train', '')}", f"train{a.get('train', '')}"),
            str(a.get("patient", "")))
        estimates.append(est)
        records.append(dict(est.to_record(), record="pair", channel=a.get("channel", "")))
    if not estimates:
        raise DataError("no DCR/ACEP pair shares a patient and channel")
    per_patient, cohort = conduction.velocity_report(estimates)
    records += [s.to_record(record="patient", patient=p) for p, s in per_patient.items()]
    records.append(cohort.to_record(record="cohort"))
    _dump(records, _out_path(args.out, "velocity.txt") if args.out else None)
    return 0


def _column(records: list[dict], field: str, path: str) -> list[float]:
    out = []
    for r in records:
        if field not in r:
            raise DataError(f"{path}: record lacks field {field!r}")
        v = r[field]
        if v is None or (isinstance(v, float) and math.isnan(v)):
            raise DataError(f"{path}: missing value of {field!r} in record {r.get('patient', '')}")
        out.append(float(v))
    return out


def _paired_columns(a: list[dict], b: list[dict], field: str, args):
    labels_a = [r.get("patient") for r in a]
    labels_b = [r.get("patient") for r in b]
    unique = (all(labels_a) and len(set(labels_a)) == len(a)
              and all(labels_b) and len(set(labels_b)) == len(b))
    if unique and set(labels_a) == set(labels_b):
        index = {r["patient"]: r for r in b}
        b = [index[p] for p in labels_a]
    return _column(a, field, args.a), _column(b, field, args.b)


def cmd_compare(args) -> int:
    a = read_records(args.a)
    b = read_records(args.b) if args.b else None
    tails = args.tails
    if args.test == "paired-t":
        if b is None:
            raise UsageError("paired-t needs --b")
        xa, xb = _paired_columns(a, b, args.field, args)
        res = stats.t_test(xa, xb, "paired", tails, args.alternative)
    elif args.test == "one-sample-t":
        res = stats.t_test(_column(a, args.field, args.a), None, "one-sample", tails,
                           args.alternative, args.popmean)
    elif args.test == "rank-sum":
        if b is None:
            raise UsageError("rank-sum needs --b")
        res = stats.rank_sum(_column(a, args.field, args.a), _column(b, args.field, args.b),
                             tails, args.alternative)
    else:
        res = stats.shapiro_wilk(_column(a, args.field, args.a))
    rec = dict(res.to_record(), field=args.field)
    _dump([rec], _out_path(args.out, "compare.txt") if args.out else None)
    return 0


# --- parser ------------------------------------------------------------------


def _window(text: str) -> tuple[float, float]:
    try:
        a, b = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'start,stop' in ms, got {text!r}") from None
    return a, b


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="epkit", description="Evoked-potential analysis of stimulation recordings.")
    p.add_argument("--config", help="JSON file of pipeline settings")
    p.add_argument("--log-level", default="WARNING")
    # the same two options are accepted after the command name too
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="JSON file of pipeline settings")
    common.add_argument("--log-level", default=argparse.SUPPRESS)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("simulate", parents=[common], help="write a synthetic session with ground truth")
    s.add_argument("--preset", choices=["dcr", "acep"], type=str.lower, default="dcr")
    s.add_argument("--delay-ms", type=float, default=0.0)
    s.add_argument("--pulses", type=int, default=30)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--fs", type=float, default=FS_DEFAULT)
    s.add_argument("--rate-hz", type=float, default=9.0)
    s.add_argument("--pulse-width-ms", type=float, default=1.0)
    s.add_argument("--duration-s", type=float)
    s.add_argument("--white-uv", type=float, default=20.0)
    s.add_argument("--line-uv", type=float, default=50.0)
    s.add_argument("--line-phase", type=float, default=0.0)
    s.add_argument("--artifact-uv", type=float, default=500.0)
    s.add_argument("--jitter-ms", type=float, default=0.0)
    s.add_argument("--label")
    s.add_argument("--out")

    s = sub.add_parser("preprocess", parents=[common], help="excise artifacts, remove 50 Hz, band-pass")
    s.add_argument("--session", required=True)
    s.add_argument("--out")

    s = sub.add_parser("epochs", parents=[common], help="average each train into an evoked-potential table")
    s.add_argument("--session", required=True)
    s.add_argument("--channel", required=True)
    s.add_argument("--train", type=int)
    s.add_argument("--window-ms", type=_window)
    s.add_argument("--threshold-uv", type=float)
    s.add_argument("--out")

    s = sub.add_parser("metrics", parents=[common], help="waveform metrics of every accepted response")
    s.add_argument("--session", required=True)
    s.add_argument("--channel")
    s.add_argument("--train", type=int)
    s.add_argument("--threshold-uv", type=float)
    s.add_argument("--invert", action="store_true")
    s.add_argument("--out")

    s = sub.add_parser("tfr", parents=[common], help="baseline-normalised time-frequency power")
    s.add_argument("--session", required=True)
    s.add_argument("--channel", required=True)
    s.add_argument("--train", type=int, default=0)
    s.add_argument("--allow-dirty", action="store_true")
    s.add_argument("--out")
    s.add_argument("--summary", help="file for the gamma summary (default: stdout)")

    s = sub.add_parser("velocity", parents=[common], help="onset delays and conduction velocities")
    s.add_argument("--dcr", required=True)
    s.add_argument("--acep", required=True)
    s.add_argument("--distance-mm", type=float)
    s.add_argument("--out")

    s = sub.add_parser("compare", parents=[common], help="statistical test on a metric field")
    s.add_argument("--a", required=True)
    s.add_argument("--b")
    s.add_argument("--field", required=True)
    s.add_argument("--test", choices=["paired-t", "one-sample-t", "rank-sum", "shapiro"],
                   default="paired-t")
    s.add_argument("--tails", choices=["one", "two"], default="two")
    s.add_argument("--alternative", choices=["greater", "less"])
    s.add_argument("--popmean", type=float, default=0.0)
    s.add_argument("--out")
    return p


HANDLERS = {
    "simulate": cmd_simulate, "preprocess": cmd_preprocess, "epochs": cmd_epochs,
    "metrics": cmd_metrics, "tfr": cmd_tfr, "velocity": cmd_velocity, "compare": cmd_compare,
}


def run_command(argv: Sequence[str]) -> int:
    argv = list(argv)
    parser = build_parser()
    try:
        if argv and not argv[0].startswith("-") and argv[0] not in COMMANDS:
            raise UnknownCommand(f"unknown command {argv[0]!r}; expected one of {', '.join(COMMANDS)}")
        args = parser.parse_args(argv)
        logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                            format="%(levelname)s %(name)s: %(message)s")
        if args.command is None:
            raise UsageError(f"a command is required: {', '.join(COMMANDS)}")
        return HANDLERS[args.command](args)
    except EpkitError as exc:
        print(f"epkit: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except ArithmeticError as exc:
        print(f"epkit: numeric failure: {exc}", file=sys.stderr)
        return 3
    except (ValueError, OSError) as exc:
        print(f"epkit: {exc}", file=sys.stderr)
        return 2


def main(argv: Sequence[str] | None = None) -> None:
    sys.exit(run_command(sys.argv[1:] if argv is None else argv))
