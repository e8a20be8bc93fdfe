"""Command-line entry point: ``opmodes <command> [options]``.

Exit codes: 0 success, 1 runtime or format error, 2 usage error.
The default data directory comes from ``OPMODES_DATA_DIR`` (else ./data).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import channel, evalharness, features, formats, rxchain
from .channel import AugRanges, RECEIVER_PRESETS, apply_plan, fixed_val_plan, linear_drift, plan_fingerprint
from .classifier import TrainConfig
from .config import HELD_OUT_TEST_SEED, DataConfig, RunConfig, desk_config
from .dsp import ParameterError
from .modes import DISTINCT_SUBSET_20, LabeledSignal, build_dataset, catalog, format_table

log = logging.getLogger("opmodes")

DATA_DIR_ENV = "OPMODES_DATA_DIR"


def default_data_dir() -> Path:
    return Path(os.environ.get(DATA_DIR_ENV, "data"))


def _emit(args, payload: dict, text: str | None = None):
    if args.json:
        print(json.dumps(payload, indent=1, sort_keys=True))
    elif text is not None:
        print(text)


def _labels(arg: str | None):
    if arg is None:
        return None
    if arg == "subset20":
        return tuple(DISTINCT_SUBSET_20)
    return tuple(s.strip() for s in arg.split(",") if s.strip())


def _floats(arg: str) -> list[float]:
    return [float(s) for s in arg.split(",") if s.strip()]


# ---------------------------------------------------------------- commands


def cmd_catalog(args) -> int:
    entries = catalog()
    if args.counts:
        n_om = len({e.om_label for e in entries})
        _emit(args, {"omp": len(entries), "om": n_om}, f"{len(entries)} OMP / {n_om} OM")
        return 0
    rows = [
        {"om": e.om_label, "param": e.param, "omp": e.omp_label, "family": e.family.value,
         "baud": e.baud, "tones": e.tones, "bandwidth_hz": e.nominal_bandwidth_hz}
        for e in entries
    ]
    _emit(args, {"entries": rows}, format_table())
    return 0


def cmd_gen(args) -> int:
    out = Path(args.out) if args.out else default_data_dir() / args.split
    out.mkdir(parents=True, exist_ok=True)
    signals = build_dataset(args.split, args.duration, args.seed, _labels(args.labels))
    entries = []
    for i, ls in enumerate(signals):
        name = f"{i:03d}_{ls.omp_label.replace(' ', '_').replace('/', '-')}" + (".f32" if args.raw else ".wav")
        formats.write_audio(out / name, ls.signal, raw=args.raw, allow_clip=args.allow_clip)
        entries.append(formats.ManifestEntry(**{**ls.entry.__dict__, "path": name}))
    formats.save_manifest(out / "manifest.json", entries)
    _emit(
        args,
        {"manifest": str(out / "manifest.json"), "entries": len(entries), "duration_s": args.duration},
        f"wrote {len(entries)} signals of {args.duration:g} s to {out}",
    )
    return 0


def _load_plan(args):
    if args.plan_json:
        return channel.plan_from_dict(json.loads(Path(args.plan_json).read_text()))
    if args.plan == "fixed":
        return fixed_val_plan(args.seed)
    rng = np.random.default_rng(args.seed)
    return channel.sample_train_plan(AugRanges(), rng)


def cmd_augment(args) -> int:
    sig = formats.read_audio(args.input)
    plan = _load_plan(args)
    out = apply_plan(sig, plan)
    formats.write_audio(args.output, out, raw=args.raw, allow_clip=args.allow_clip)
    _emit(args, {"plan": channel.plan_to_dict(plan), "fingerprint": plan_fingerprint(plan)},
          f"applied {' -> '.join(plan.op_names())} ({plan_fingerprint(plan)})")
    return 0


def _chan_cfg(args) -> rxchain.ChannelizerConfig:
    return rxchain.ChannelizerConfig(wideband_rate_hz=args.rate, carrier_offset_hz=args.offset)


def cmd_txsim(args) -> int:
    sig = formats.read_audio(args.input)
    if args.receiver:
        preset = RECEIVER_PRESETS[args.receiver]
        sig = linear_drift(sig, preset.drift_hz)
        sig = channel.add_noise_snr(sig, preset.snr_db, np.random.default_rng(args.seed))
    cfg = _chan_cfg(args)
    iq = rxchain.usb_modulate(sig, cfg)
    formats.write_iq(args.output, iq, cfg.carrier_offset_hz)
    _emit(args, {"samples": len(iq), "sample_rate_hz": iq.sample_rate_hz},
          f"wrote {len(iq)} I/Q samples at {iq.sample_rate_hz} Hz")
    return 0


def cmd_rx(args) -> int:
    iq, meta = formats.read_iq(args.input)
    cfg = rxchain.ChannelizerConfig(
        wideband_rate_hz=iq.sample_rate_hz,
        carrier_offset_hz=args.offset if args.offset is not None else float(meta.get("carrier_offset_hz", 200_000.0)),
    )
    af = rxchain.receive(iq, cfg)
    formats.write_audio(args.output, af, raw=args.raw, allow_clip=args.allow_clip)
    _emit(args, {"samples": len(af), "sample_rate_hz": af.sample_rate_hz},
          f"wrote {len(af)} audio samples at {af.sample_rate_hz} Hz")
    return 0


def cmd_featurize(args) -> int:
    sig = formats.read_audio(args.input)
    cfg = features.SpectrogramConfig(n_fft=args.n_fft, duration_s=args.duration)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    wins = features.window_slices(sig, args.duration, args.shift)
    if args.max_windows is not None:
        wins = wins[: args.max_windows]
    for i, w in enumerate(wins):
        spec = features.spectrogram(w, cfg)
        formats.export_spectrogram(out / f"win_{i:04d}.pgm", spec.values, cfg.log_floor_db)
    _emit(args, {"windows": len(wins), "shape": list(cfg.shape())},
          f"{len(wins)} spectrograms of {cfg.shape()[0]}x{cfg.shape()[1]} in {out}")
    return 0


def _run_config(args) -> RunConfig:
    if args.config:
        cfg = RunConfig.load(args.config)
    elif getattr(args, "desk", False):
        cfg = desk_config()
    else:
        cfg = RunConfig()
    changes = {}
    if args.seed is not None and args.seed_given:
        changes["seed"] = args.seed
    data = cfg.data
    if getattr(args, "labels", None):
        data = DataConfig(_labels(args.labels), data.train_s, data.val_s, data.test_s)
    if getattr(args, "train_s", None) is not None:
        data = DataConfig(data.labels, args.train_s, data.val_s, data.test_s)
    changes["data"] = data
    spec = cfg.spectrogram
    if getattr(args, "duration", None) is not None or getattr(args, "n_fft", None) is not None:
        spec = features.SpectrogramConfig(
            n_fft=args.n_fft or spec.n_fft, duration_s=args.duration or spec.duration_s, log_floor_db=spec.log_floor_db
        )
    changes["spectrogram"] = spec
    tr = cfg.train
    if getattr(args, "epochs", None) is not None:
        tr = TrainConfig(**{**tr.__dict__, "max_epochs": args.epochs})
    if getattr(args, "batch_size", None) is not None:
        tr = TrainConfig(**{**tr.__dict__, "batch_size": args.batch_size})
    changes["train"] = tr
    return cfg.replace(**changes)


def cmd_train(args) -> int:
    cfg = _run_config(args)
    res = evalharness.run_experiment(cfg, out_dir=args.out)
    r = res.report
    _emit(args, {"run_dir": str(args.out), **r.summary(), "epochs": len(res.history)},
          f"OMP {r.omp_accuracy:.2f}%  OM {r.om_accuracy:.2f}%  ({r.decisions} decisions, {len(res.history)} epochs)")
    return 0


def _test_signals(args) -> list[LabeledSignal]:
    entries = formats.load_manifest(args.manifest)
    return [LabeledSignal(e, formats.read_audio(e.path)) for e in entries]


def cmd_eval(args) -> int:
    model = evalharness.load_model(args.model)
    signals = _test_signals(args)
    if args.impair:
        signals = evalharness.impair_test_set(signals, args.seed if args.seed_given else HELD_OUT_TEST_SEED)
    duration = args.duration if args.duration is not None else model.feature_config["duration_s"]
    rep = evalharness.evaluate(model, signals, duration, args.shift, args.n_fft, args.max_windows)
    if args.out:
        evalharness.emit_report({"test": rep}, args.out)
    per = sorted(set(rep.windows_per_class.values()))
    _emit(args, {**rep.summary(), "windows_per_omp": per[0] if len(per) == 1 else rep.windows_per_class},
          f"OMP {rep.omp_accuracy:.2f}%  OM {rep.om_accuracy:.2f}%  {rep.decisions} decisions, "
          f"{'/'.join(map(str, per))} windows/OMP")
    return 0


def cmd_grid(args) -> int:
    cfg = _run_config(args)
    grid = evalharness.GridSpec(
        tuple(_floats(args.durations)), tuple(int(x) for x in _floats(args.n_ffts)), tuple(range(args.seeds))
    )
    res = evalharness.run_grid(
        grid, cfg, on_cell=lambda c, s, r: log.info("cell %s seed %d: %.2f%%", c, s, r.omp_accuracy)
    )
    reports = {f"{d:g}s/{n}/seed{i}": r for (d, n), reps in res.reports.items() for i, r in enumerate(reps)}
    evalharness.emit_report(reports, args.out, grid=res)
    table = res.table()
    lines = ["Dur\t" + "\t".join(table["columns"])]
    for row in table["rows"]:
        cells = [table["cells"][f"{row}/{c}"] for c in table["columns"]]
        lines.append(row + "\t" + "\t".join(f"{c['omp_mean']:.2f}±{c['omp_std']:.2f} / {c['om_mean']:.2f}" for c in cells))
    _emit(args, table, "\n".join(lines))
    return 0


def cmd_snr_sweep(args) -> int:
    model = evalharness.load_model(args.model)
    signals = _test_signals(args)
    curve = evalharness.run_snr_sweep(
        model, signals, _floats(args.snrs), args.shift, args.max_windows, args.seed
    )
    if args.out:
        evalharness.emit_report({}, args.out, curves={f"{curve.duration_s:g}s": curve})
    text = "\n".join(f"{s:+6.1f} dB  {a:6.2f}%" for s, a in zip(curve.snr_db, curve.omp_accuracy))
    if curve.violations():
        text += f"\nmonotonicity violations at indices {curve.violations()}"
    _emit(args, curve.to_dict(), text)
    return 0


def cmd_ablate(args) -> int:
    cfg = _run_config(args)
    rows = tuple(args.rows.split(",")) if args.rows else evalharness.ABLATION_ROWS
    reports = evalharness.run_ablation(cfg, rows, on_row=lambda r, rep: log.info("%s: %.2f%%", r, rep.omp_accuracy))
    evalharness.emit_report(reports, args.out)
    _emit(args, {r: rep.summary() for r, rep in reports.items()},
          "\n".join(f"{r:<20} OMP {rep.omp_accuracy:6.2f}%  OM {rep.om_accuracy:6.2f}%" for r, rep in reports.items()))
    return 0


def cmd_report(args) -> int:
    doc = evalharness.load_report(args.input)
    curves = None
    if "snr_curves" in doc:
        curves = {k: evalharness.SnrCurve(v["snr_db"], v["omp_accuracy"], v["om_accuracy"], v["duration_s"], v["tolerance"])
                  for k, v in doc["snr_curves"].items()}
    if args.out:
        evalharness.emit_report(doc["reports"], args.out, args.format, curves)
    _emit(args, {k: r.summary() for k, r in doc["reports"].items()},
          "\n".join(f"{k:<24} OMP {r.omp_accuracy:6.2f}%  OM {r.om_accuracy:6.2f}%  n={r.decisions}"
                    for k, r in doc["reports"].items()))
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="global seed (default 0)")
    common.add_argument("--json", action="store_true", help="machine-readable output")
    common.add_argument("-v", "--verbose", action="store_true")

    io_flags = argparse.ArgumentParser(add_help=False)
    io_flags.add_argument("--raw", action="store_true", help="write float32 raw + sidecar instead of WAVE")
    io_flags.add_argument("--allow-clip", action="store_true", help="clip instead of failing on overload")

    run_flags = argparse.ArgumentParser(add_help=False)
    run_flags.add_argument("--config", help="RunConfig JSON (defaults: full-scale recipe)")
    run_flags.add_argument("--desk", action="store_true", help="desk-scale preset: 20-class subset, 60 s train, batch 64 (ignored with --config)")
    run_flags.add_argument("--labels", help="comma-separated OMP labels or 'subset20'")
    run_flags.add_argument("--train-s", type=float)
    run_flags.add_argument("--duration", type=float)
    run_flags.add_argument("--n-fft", type=int)
    run_flags.add_argument("--epochs", type=int)
    run_flags.add_argument("--batch-size", type=int)

    p = argparse.ArgumentParser(prog="opmodes", description="Digital-mode synthesis, channel simulation and classification.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("catalog", parents=[common], help="list the OMP catalog")
    s.add_argument("--counts", action="store_true")
    s.set_defaults(func=cmd_catalog)

    s = sub.add_parser("gen", parents=[common, io_flags], help="synthesize a split and its manifest")
    s.add_argument("--split", choices=("train", "val", "test"), required=True)
    s.add_argument("--duration", type=float, help="seconds per OMP (split default if omitted)")
    s.add_argument("--labels")
    s.add_argument("--out")
    s.set_defaults(func=cmd_gen)

    s = sub.add_parser("augment", parents=[common, io_flags], help="apply an augmentation plan to an audio file")
    s.add_argument("input")
    s.add_argument("output")
    s.add_argument("--plan", choices=("fixed", "train"), default="fixed")
    s.add_argument("--plan-json")
    s.set_defaults(func=cmd_augment)

    s = sub.add_parser("txsim", parents=[common], help="USB-modulate audio into wideband I/Q")
    s.add_argument("input")
    s.add_argument("output")
    s.add_argument("--rate", type=int, default=1_000_000)
    s.add_argument("--offset", type=float, default=200_000.0)
    s.add_argument("--receiver", choices=sorted(RECEIVER_PRESETS), help="apply a receiver preset's SNR and drift")
    s.set_defaults(func=cmd_txsim)

    s = sub.add_parser("rx", parents=[common, io_flags], help="channelize and demodulate wideband I/Q")
    s.add_argument("input")
    s.add_argument("output")
    s.add_argument("--offset", type=float)
    s.set_defaults(func=cmd_rx)

    s = sub.add_parser("featurize", parents=[common], help="export windowed spectrograms (PGM + .npy)")
    s.add_argument("input")
    s.add_argument("--out", required=True)
    s.add_argument("--duration", type=float, default=2.0)
    s.add_argument("--n-fft", type=int, default=128)
    s.add_argument("--shift", type=float, default=0.5)
    s.add_argument("--max-windows", type=int)
    s.set_defaults(func=cmd_featurize)

    s = sub.add_parser("train", parents=[common, run_flags], help="train and evaluate one run")
    s.add_argument("--out", required=True, help="run directory")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", parents=[common], help="evaluate a trained model on a manifest")
    s.add_argument("--model", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--duration", type=float)
    s.add_argument("--n-fft", type=int)
    s.add_argument("--shift", type=float, default=0.5)
    s.add_argument("--max-windows", type=int)
    s.add_argument("--impair", action="store_true", help="apply the fixed impairment plan with a held-out seed")
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("grid", parents=[common, run_flags], help="duration x n_fft grid")
    s.add_argument("--durations", default="1,2,3,4")
    s.add_argument("--n-ffts", default="64,128,256")
    s.add_argument("--seeds", type=int, default=3)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_grid)

    s = sub.add_parser("snr-sweep", parents=[common], help="accuracy versus SNR")
    s.add_argument("--model", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--snrs", default=",".join(str(x) for x in evalharness.DEFAULT_SNRS_DB))
    s.add_argument("--shift", type=float, default=0.5)
    s.add_argument("--max-windows", type=int)
    s.add_argument("--out")
    s.set_defaults(func=cmd_snr_sweep)

    s = sub.add_parser("ablate", parents=[common, run_flags], help="augmentation ablation table")
    s.add_argument("--rows", help="comma-separated subset of the ablation rows")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("report", parents=[common], help="re-emit or summarize a report.json")
    s.add_argument("input")
    s.add_argument("--format", choices=("table", "plot", "both"), default="both")
    s.add_argument("--out")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    args.seed_given = args.seed is not None
    if args.seed is None:
        args.seed = 0
    try:
        return args.func(args)
    except (ParameterError, formats.FormatError, OSError, KeyError) as exc:
        print(f"opmodes {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
