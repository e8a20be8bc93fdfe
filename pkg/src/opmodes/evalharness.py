"""Training pipeline and evaluation protocols.

Windowed decisions at a 0.5 s shift, OMP to OM rollup, confusion matrices,
the duration x n_fft grid, augmentation ablations and SNR sweeps. The
impaired test condition is synthetic: the clean test split passed through the
fixed validation impairments with a held-out noise seed.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import classifier as clf
from .channel import AugRanges, apply_plan, derive_seed, expand_training_set, fixed_val_plan, scaled_noise
from .config import DataConfig, RunConfig
from .dsp import ParameterError
from .features import (
    DURATIONS_S,
    N_FFTS,
    SpectrogramConfig,
    featurize_batch,
    window_count,
    window_matrix,
)
from .modes import LabeledSignal, build_dataset, om_labels, rollup_om

log = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = 1
DEFAULT_SNRS_DB = tuple(range(-6, 28, 3))
ABLATION_ROWS = (
    "with all Augs.",
    "-Amplify",
    "-FreqShift",
    "-SimTone1",
    "-SimTone1/2",
    "-Noise",
    "without all Augs.",
)


# ---------------------------------------------------------------- reports


@dataclass
class EvalReport:
    class_labels: list[str]
    true_idx: np.ndarray
    pred_idx: np.ndarray
    duration_s: float = 0.0
    n_fft: int = 0
    shift_s: float = 0.5
    omp_accuracy: float = field(init=False)
    om_accuracy: float = field(init=False)
    confusion_omp: np.ndarray = field(init=False)
    confusion_om: np.ndarray = field(init=False)
    per_class_accuracy: dict = field(init=False)
    windows_per_class: dict = field(init=False)

    def __post_init__(self):
        self.true_idx = np.asarray(self.true_idx, dtype=np.int64)
        self.pred_idx = np.asarray(self.pred_idx, dtype=np.int64)
        if self.true_idx.shape != self.pred_idx.shape:
            raise ParameterError("decision arrays differ in length")
        n = len(self.class_labels)
        true_om = [rollup_om(self.class_labels[i]) for i in self.true_idx]
        pred_om = [rollup_om(self.class_labels[i]) for i in self.pred_idx]
        total = max(len(self.true_idx), 1)
        self.omp_accuracy = 100.0 * float(np.sum(self.true_idx == self.pred_idx)) / total
        self.om_accuracy = 100.0 * sum(t == p for t, p in zip(true_om, pred_om)) / total
        counts = np.zeros((n, n))
        np.add.at(counts, (self.true_idx, self.pred_idx), 1)
        self.confusion_omp = _row_normalize(counts)
        oms = om_labels()
        pos = {o: i for i, o in enumerate(oms)}
        om_counts = np.zeros((len(oms), len(oms)))
        for t, p in zip(true_om, pred_om):
            om_counts[pos[t], pos[p]] += 1
        self.confusion_om = _row_normalize(om_counts)
        rows = counts.sum(axis=1)
        self.per_class_accuracy = {
            lab: 100.0 * counts[i, i] / rows[i] for i, lab in enumerate(self.class_labels) if rows[i] > 0
        }
        self.windows_per_class = {lab: int(rows[i]) for i, lab in enumerate(self.class_labels) if rows[i] > 0}

    @property
    def decisions(self) -> int:
        return int(len(self.true_idx))

    def summary(self) -> dict:
        return {
            "decisions": self.decisions,
            "duration_s": self.duration_s,
            "n_fft": self.n_fft,
            "om_accuracy": self.om_accuracy,
            "omp_accuracy": self.omp_accuracy,
            "shift_s": self.shift_s,
        }

    def to_dict(self) -> dict:
        return {
            **self.summary(),
            "class_labels": list(self.class_labels),
            "om_labels": om_labels(),
            "confusion_om": self.confusion_om.tolist(),
            "confusion_omp": self.confusion_omp.tolist(),
            "per_class_accuracy": self.per_class_accuracy,
            "windows_per_class": self.windows_per_class,
            "true_idx": self.true_idx.tolist(),
            "pred_idx": self.pred_idx.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(d["class_labels"], d["true_idx"], d["pred_idx"], d["duration_s"], d["n_fft"], d["shift_s"])


def _row_normalize(m: np.ndarray) -> np.ndarray:
    s = m.sum(axis=1, keepdims=True)
    return np.divide(m, s, out=np.zeros_like(m), where=s > 0)


# ---------------------------------------------------------------- data preparation


def impair_test_set(signals: Sequence[LabeledSignal], plan_seed: int) -> list[LabeledSignal]:
    """Fixed validation impairments with a per-signal noise seed derived from ``plan_seed``."""
    out = []
    for ls in signals:
        plan = fixed_val_plan(derive_seed(plan_seed, ls.omp_label))
        out.append(LabeledSignal(ls.entry, apply_plan(ls.signal, plan)))
    return out


def windows_and_labels(
    signals: Sequence[LabeledSignal],
    class_index: dict[str, int],
    duration_s: float,
    shift_s: float,
    max_windows: int | None = None,
) -> tuple[list[np.ndarray], np.ndarray]:
    mats, labels = [], []
    for ls in signals:
        m = window_matrix(ls.signal, duration_s, shift_s, max_windows)
        mats.append(m)
        labels.append(np.full(len(m), class_index[ls.omp_label]))
    return mats, np.concatenate(labels)


def featurize_signals(
    signals: Sequence[LabeledSignal],
    class_index: dict[str, int],
    spec: SpectrogramConfig,
    shift_s: float,
    max_windows: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    mats, y = windows_and_labels(signals, class_index, spec.duration_s, shift_s, max_windows)
    return np.concatenate([featurize_batch(m, spec) for m in mats]), y


class OnlineTrainingSource:
    """Per-epoch training images: random crops, each expanded to 5 augmented copies plus itself.

    Crop positions and augmentation plans derive from (seed, epoch, signal,
    crop), so every epoch sees new data and reruns reproduce it exactly.
    With ``online=False`` the epoch-1 draw is reused for every epoch.
    """

    def __init__(
        self,
        signals: Sequence[LabeledSignal],
        class_index: dict[str, int],
        spec: SpectrogramConfig,
        ranges: AugRanges,
        crops_per_signal: int,
        seed: int,
        online: bool = True,
    ):
        if not signals:
            raise ParameterError("training set is empty")
        self.signals = list(signals)
        self.class_index = class_index
        self.spec = spec
        self.ranges = ranges
        self.crops = crops_per_signal
        self.seed = seed
        self.online = online
        self._cache = None

    def __call__(self, epoch: int) -> tuple[np.ndarray, np.ndarray]:
        if not self.online:
            if self._cache is None:
                self._cache = self._draw(1)
            return self._cache
        return self._draw(epoch)

    def _draw(self, epoch: int) -> tuple[np.ndarray, np.ndarray]:
        width = self.spec.window_samples
        epoch_seed = derive_seed(self.seed, "epoch", epoch)
        xs, ys = [], []
        for ls in self.signals:
            n = len(ls.signal)
            if n < width:
                raise ParameterError(f"{ls.omp_label}: training signal shorter than one window")
            rng = np.random.default_rng(derive_seed(epoch_seed, "crop", ls.omp_label))
            starts = rng.integers(0, n - width + 1, size=self.crops)
            items = [(ls.signal.with_samples(ls.signal.samples[s : s + width]), 0) for s in starts]
            ids = [(ls.omp_label, k) for k in range(self.crops)]
            expanded = expand_training_set(items, self.ranges, epoch_seed, ids)
            xs.append(featurize_batch(np.stack([s.samples for s, _ in expanded]), self.spec))
            ys.append(np.full(len(expanded), self.class_index[ls.omp_label]))
        return np.concatenate(xs), np.concatenate(ys)


@dataclass
class Splits:
    train: list[LabeledSignal]
    val: list[LabeledSignal]
    test: list[LabeledSignal]

    @property
    def labels(self) -> list[str]:
        return [ls.omp_label for ls in self.train]


def build_splits(data: DataConfig, seed: int) -> Splits:
    labels = list(data.labels) if data.labels is not None else None
    return Splits(
        build_dataset("train", data.train_s, seed, labels),
        build_dataset("val", data.val_s, seed, labels),
        build_dataset("test", data.test_s, seed, labels),
    )


# ---------------------------------------------------------------- train + evaluate


@dataclass
class RunResult:
    config: RunConfig
    model: clf.CompactCnn
    history: list[dict]
    report: EvalReport | None = None


def train_model(
    cfg: RunConfig,
    splits: Splits | None = None,
    on_epoch: Callable[[dict], None] | None = None,
) -> RunResult:
    splits = splits if splits is not None else build_splits(cfg.data, cfg.seed)
    labels = splits.labels
    index = {lab: i for i, lab in enumerate(labels)}
    clf.set_repro_mode(cfg.train.repro)
    model = clf.CompactCnn(
        clf.CompactCnnConfig(cfg.model_channels, cfg.model_strides, len(labels)),
        seed=derive_seed(cfg.seed, "init") % 2**63,
    )
    model.class_labels = labels
    model.feature_config = {"duration_s": cfg.spectrogram.duration_s, "n_fft": cfg.spectrogram.n_fft}
    source = OnlineTrainingSource(
        splits.train, index, cfg.spectrogram, cfg.augment, cfg.crops_per_signal, cfg.seed, cfg.online_augment
    )
    val_signals = [
        LabeledSignal(ls.entry, apply_plan(ls.signal, fixed_val_plan(derive_seed(cfg.seed, "val", ls.omp_label))))
        for ls in splits.val
    ]
    val_shift = cfg.eval.val_shift_s or cfg.spectrogram.duration_s
    val = featurize_signals(val_signals, index, cfg.spectrogram, val_shift)
    _, history = clf.train(model, source, val, cfg.train, on_epoch)
    return RunResult(cfg, model, history)


def _check_model_cell(model: clf.CompactCnn, duration_s: float, n_fft: int | None):
    fc = model.feature_config
    if fc and (fc["duration_s"] != duration_s or (n_fft is not None and fc["n_fft"] != n_fft)):
        raise ParameterError(
            f"model was trained for {fc['duration_s']} s / n_fft {fc['n_fft']}, "
            f"asked to evaluate {duration_s} s / n_fft {n_fft}"
        )


def evaluate(
    model: clf.CompactCnn,
    test_set: Sequence[LabeledSignal],
    duration_s: float,
    shift_s: float = 0.5,
    n_fft: int | None = None,
    max_windows: int | None = None,
) -> EvalReport:
    """One decision per window of every test signal."""
    _check_model_cell(model, duration_s, n_fft)
    n_fft = n_fft if n_fft is not None else model.feature_config.get("n_fft", 128)
    spec = SpectrogramConfig(n_fft=n_fft, duration_s=duration_s)
    labels = model.class_labels
    index = {lab: i for i, lab in enumerate(labels)}
    mats, y = windows_and_labels(test_set, index, duration_s, shift_s, max_windows)
    preds = []
    for m in mats:
        p = clf.predict_proba(model, featurize_batch(m, spec))
        preds.append(clf.argmax_lowest(p))
    return EvalReport(labels, y, np.concatenate(preds), duration_s, n_fft, shift_s)


def impaired_condition(cfg: RunConfig, test: Sequence[LabeledSignal]) -> list[LabeledSignal]:
    return impair_test_set(test, cfg.eval.test_plan_seed) if cfg.eval.impair_test else list(test)


def run_experiment(cfg: RunConfig, splits: Splits | None = None, out_dir=None) -> RunResult:
    """Train, evaluate on the test condition, and optionally archive the run."""
    splits = splits if splits is not None else build_splits(cfg.data, cfg.seed)
    res = train_model(cfg, splits)
    res.report = evaluate(
        res.model,
        impaired_condition(cfg, splits.test),
        cfg.spectrogram.duration_s,
        cfg.eval.shift_s,
        cfg.spectrogram.n_fft,
        cfg.eval.max_windows,
    )
    if out_dir is not None:
        archive_run(res, out_dir)
    return res


def archive_run(res: RunResult, out_dir) -> Path:
    """Run directory: config.json, weights.bin, history.json, report files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    res.config.save(out / "config.json")
    clf.save_weights(
        out / "weights.bin",
        clf.get_weights(res.model),
        {"class_labels": res.model.class_labels, "feature_config": res.model.feature_config,
         "channels": list(res.model.cfg.channels), "strides": list(res.model.cfg.strides)},
    )
    hist = [{k: v for k, v in h.items() if k != "seconds"} for h in res.history]
    (out / "history.json").write_text(json.dumps(hist, indent=1, sort_keys=True) + "\n")
    if res.report is not None:
        emit_report({"test": res.report}, out)
    return out


def load_model(path) -> clf.CompactCnn:
    weights, meta = clf.load_weights(path)
    cfg = clf.CompactCnnConfig(tuple(meta["channels"]), tuple(meta["strides"]), len(meta["class_labels"]))
    model = clf.CompactCnn(cfg)
    clf.set_weights(model, weights)
    model.class_labels = list(meta["class_labels"])
    model.feature_config = dict(meta["feature_config"])
    return model.eval()


# ---------------------------------------------------------------- grid


@dataclass(frozen=True)
class GridSpec:
    durations_s: tuple[float, ...] = DURATIONS_S
    n_ffts: tuple[int, ...] = N_FFTS
    seeds: tuple[int, ...] = (0, 1, 2)

    def __post_init__(self):
        if not self.durations_s or not self.n_ffts or not self.seeds:
            raise ParameterError("grid axes must be non-empty")

    def cells(self) -> list[tuple[float, int]]:
        return [(d, n) for d in self.durations_s for n in self.n_ffts]


@dataclass
class GridResult:
    grid: GridSpec
    reports: dict  # (duration, n_fft) -> list of EvalReport, one per seed

    def table(self) -> dict:
        """Rows '4s'..'1s', columns '256'..'64'; OMP and OM mean and spread in percent."""
        out = {"rows": [], "columns": [str(n) for n in sorted(self.grid.n_ffts, reverse=True)], "cells": {}}
        for d in sorted(self.grid.durations_s, reverse=True):
            row = f"{d:g}s"
            out["rows"].append(row)
            for n in sorted(self.grid.n_ffts, reverse=True):
                reps = self.reports[(d, n)]
                omp = np.array([r.omp_accuracy for r in reps])
                om = np.array([r.om_accuracy for r in reps])
                out["cells"][f"{row}/{n}"] = {
                    "omp_mean": float(omp.mean()),
                    "omp_std": float(omp.std()),
                    "om_mean": float(om.mean()),
                    "om_std": float(om.std()),
                    "decisions": reps[0].decisions,
                }
        return out

    def duration_trend(self) -> dict:
        """Soft check: for each n_fft, whether the longest duration beats the shortest (reported only)."""
        lo, hi = min(self.grid.durations_s), max(self.grid.durations_s)
        res = {}
        for n in self.grid.n_ffts:
            a = np.mean([r.omp_accuracy for r in self.reports[(hi, n)]])
            b = np.mean([r.omp_accuracy for r in self.reports[(lo, n)]])
            res[str(n)] = bool(a >= b)
        return res


def run_grid(grid: GridSpec, base: RunConfig, on_cell: Callable[[tuple, int, EvalReport], None] | None = None) -> GridResult:
    """One independently trained model per (duration, n_fft, seed).

    All cells make the same number of decisions: each test signal contributes
    as many windows as the longest duration allows.
    """
    max_windows = window_count(base.data.test_s, max(grid.durations_s), base.eval.shift_s)
    if base.eval.max_windows is not None:
        max_windows = min(max_windows, base.eval.max_windows)
    reports: dict = {c: [] for c in grid.cells()}
    for seed in grid.seeds:
        splits = build_splits(base.data, seed)
        for d, n in grid.cells():
            cfg = base.replace(
                seed=seed,
                spectrogram=SpectrogramConfig(n_fft=n, duration_s=d, log_floor_db=base.spectrogram.log_floor_db),
                eval=_replace(base.eval, max_windows=max_windows),
            )
            rep = run_experiment(cfg, splits).report
            reports[(d, n)].append(rep)
            if on_cell is not None:
                on_cell((d, n), seed, rep)
    return GridResult(grid, reports)


def _replace(obj, **kw):
    import dataclasses

    return dataclasses.replace(obj, **kw)


# ---------------------------------------------------------------- ablation


def ablation_ranges(base: AugRanges) -> dict[str, AugRanges]:
    none = _replace(base, use_amplify=False, use_freq_shift=False, n_sim_tones=0, use_noise=False)
    return {
        "with all Augs.": base,
        "-Amplify": base.without("Amplify"),
        "-FreqShift": base.without("FreqShift"),
        "-SimTone1": base.without("SimTone1"),
        "-SimTone1/2": base.without("SimTone12"),
        "-Noise": base.without("Noise"),
        "without all Augs.": none,
    }


def run_ablation(
    base: RunConfig,
    rows: Sequence[str] = ABLATION_ROWS,
    splits: Splits | None = None,
    on_row: Callable[[str, EvalReport], None] | None = None,
) -> dict[str, EvalReport]:
    """Full train + eval per condition on the impaired test condition."""
    variants = ablation_ranges(base.augment)
    unknown = set(rows) - set(variants)
    if unknown:
        raise ParameterError(f"unknown ablation rows {sorted(unknown)}")
    splits = splits if splits is not None else build_splits(base.data, base.seed)
    out = {}
    for row in rows:
        rep = run_experiment(base.replace(augment=variants[row]), splits).report
        out[row] = rep
        if on_row is not None:
            on_row(row, rep)
    return out


# ---------------------------------------------------------------- SNR sweep


@dataclass
class SnrCurve:
    snr_db: list[float]
    omp_accuracy: list[float]
    om_accuracy: list[float]
    duration_s: float
    tolerance: float = 2.0

    def violations(self) -> list[int]:
        """Indices where accuracy falls more than ``tolerance`` below an earlier (lower-SNR) point."""
        acc = np.asarray(self.omp_accuracy)
        best = np.maximum.accumulate(acc)
        return [i for i in range(len(acc)) if acc[i] < best[i] - self.tolerance]

    def to_dict(self) -> dict:
        return {
            "duration_s": self.duration_s,
            "om_accuracy": self.om_accuracy,
            "omp_accuracy": self.omp_accuracy,
            "snr_db": self.snr_db,
            "tolerance": self.tolerance,
            "violations": self.violations(),
        }


def run_snr_sweep(
    model: clf.CompactCnn,
    test_set: Sequence[LabeledSignal],
    snr_list: Sequence[float] = DEFAULT_SNRS_DB,
    shift_s: float = 0.5,
    max_windows: int | None = None,
    noise_seed: int = 0,
) -> SnrCurve:
    """Accuracy per SNR with calibrated noise added to the clean test signals.

    Each signal gets one fixed unit-noise draw that is rescaled per SNR, so
    the points differ only in noise level.
    """
    dur = model.feature_config["duration_s"]
    base_noise = {
        ls.omp_label: np.random.default_rng(derive_seed(noise_seed, "sweep", ls.omp_label)).standard_normal(len(ls.signal))
        for ls in test_set
    }
    omp, om = [], []
    for snr in snr_list:
        noisy = [
            LabeledSignal(ls.entry, ls.signal.with_samples(ls.signal.samples + scaled_noise(ls.signal, snr, base_noise[ls.omp_label])))
            for ls in test_set
        ]
        rep = evaluate(model, noisy, dur, shift_s, max_windows=max_windows)
        omp.append(rep.omp_accuracy)
        om.append(rep.om_accuracy)
    return SnrCurve([float(s) for s in snr_list], omp, om, dur)


# ---------------------------------------------------------------- output


def _dump(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def _matrix_csv(labels: Sequence[str], m: np.ndarray) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["true\\pred", *labels])
    for lab, row in zip(labels, m):
        w.writerow([lab, *(repr(float(v)) for v in row)])
    return buf.getvalue()


def emit_report(
    reports: dict,
    out_dir,
    fmt: str = "both",
    curves: dict[str, SnrCurve] | None = None,
    grid: GridResult | None = None,
) -> list[Path]:
    """Write ``report.json`` (structured table) and/or CSV plot data; returns written paths.

    ``fmt`` is 'table', 'plot' or 'both'. Output bytes depend only on the inputs.
    """
    if fmt not in ("table", "plot", "both"):
        raise ParameterError(f"format must be table, plot or both, got {fmt!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if fmt in ("table", "both"):
        doc = {
            "schema_version": REPORT_SCHEMA_VERSION,
            "reports": {k: r.to_dict() for k, r in reports.items()},
        }
        if curves:
            doc["snr_curves"] = {k: c.to_dict() for k, c in curves.items()}
        if grid is not None:
            doc["grid"] = grid.table()
            doc["grid_duration_trend"] = grid.duration_trend()
        p = out / "report.json"
        p.write_text(_dump(doc))
        written.append(p)
    if fmt in ("plot", "both"):
        for key, r in reports.items():
            safe = key.replace("/", "_").replace(" ", "_")
            for kind, labels, m in (("om", om_labels(), r.confusion_om), ("omp", r.class_labels, r.confusion_omp)):
                p = out / f"confusion_{kind}_{safe}.csv"
                p.write_text(_matrix_csv(labels, m))
                written.append(p)
        if curves:
            buf = io.StringIO()
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(["curve", "snr_db", "omp_accuracy", "om_accuracy"])
            for key, c in curves.items():
                for s, a, b in zip(c.snr_db, c.omp_accuracy, c.om_accuracy):
                    w.writerow([key, repr(s), repr(a), repr(b)])
            p = out / "snr_curves.csv"
            p.write_text(buf.getvalue())
            written.append(p)
    return written


def load_report(path) -> dict:
    """Parse ``report.json`` back into EvalReports (and raw extra sections)."""
    doc = json.loads(Path(path).read_text())
    if doc.get("schema_version") != REPORT_SCHEMA_VERSION:
        raise ParameterError(f"unsupported report schema {doc.get('schema_version')}")
    doc["reports"] = {k: EvalReport.from_dict(v) for k, v in doc["reports"].items()}
    return doc
