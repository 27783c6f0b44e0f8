"""Subcommand front end chaining parse, signal extraction, attack
injection, training, calibration, detection and evaluation.

Settings come from an optional JSON config file; command-line flags win
over config values, which win over the built-in defaults (the defaults
reproduce the training protocol: window 20, batch 128, 100 epochs, lr
1e-4, patience 10, 85/15 split). Every invocation writes a manifest.json
listing each input and emitted artifact with its sha256 digest.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import __version__, attackgen, canlog, detector, evalkit, sigmap

log = logging.getLogger(__name__)

SUBCOMMANDS = (
    "parse", "extract-signals", "inject", "train", "calibrate",
    "detect", "evaluate", "pipeline",
)
OUT_DIR_ENV = "CANTCN_OUT_DIR"


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        super().__init__(f"[{stage}] {cause}")


@dataclass
class RunConfig:
    input: str | None = None
    test_input: str | None = None
    layout: str | None = None
    attack_spec: str | None = None
    model_dir: str | None = None
    ground_truth: str | None = None
    out: str | None = None
    seed: int = 0
    window: int = 20
    batch: int = 128
    epochs: int = 100
    lr: float = 1e-4
    patience: int = 10
    split: float = 0.85
    ids: list | None = None
    format: str = "csv"
    attack_class: str | None = None
    log_level: str = "INFO"

    def train_config(self, seed: int) -> detector.TrainConfig:
        return detector.TrainConfig(
            window=self.window, batch_size=self.batch, epochs=self.epochs,
            lr=self.lr, patience=self.patience, split=self.split, seed=seed,
        )

    def out_dir(self) -> Path:
        out = self.out or os.environ.get(OUT_DIR_ENV) or "cantcn_out"
        path = Path(out)
        path.mkdir(parents=True, exist_ok=True)
        return path

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def load_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    if args.config:
        doc = json.loads(Path(args.config).read_text())
        known = {f.name for f in fields(RunConfig)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        for key, value in doc.items():
            setattr(cfg, key, value)
    overrides = {
        "input": args.input, "test_input": args.test_input, "layout": args.layout,
        "attack_spec": args.attack_spec, "out": args.out, "seed": args.seed,
        "window": args.window, "batch": args.batch, "epochs": args.epochs,
        "lr": args.lr, "patience": args.patience, "split": args.split,
        "format": args.format, "attack_class": args.attack_class,
    }
    for key, value in overrides.items():
        if value is not None:
            setattr(cfg, key, value)
    if args.ids is not None:
        cfg.ids = [part.strip() for part in args.ids.split(",") if part.strip()]
    return cfg


def _sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _derive_seed(base: int, msg_id) -> int:
    digest = hashlib.sha256(f"{base}:{msg_id}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


def detect_format(path) -> str:
    """Sniff candump text vs signal CSV from the first non-blank line."""
    with open(path) as f:
        for line in f:
            if line.strip():
                return canlog.CANDUMP_FORMAT if line.lstrip().startswith("(") \
                    else canlog.SYNCAN_FORMAT
    raise ValueError(f"{path} is empty")


def load_log(path) -> canlog.CanLog:
    fmt = detect_format(path)
    with open(path) as f:
        if fmt == canlog.CANDUMP_FORMAT:
            return canlog.parse_candump(f)
        return canlog.parse_syncan_csv(f)


def _parse_id_token(token: str):
    """--ids tokens: bare ints/hex match frame IDs, anything else matches
    record IDs verbatim."""
    try:
        return int(token, 0)
    except ValueError:
        return token


def _select_ids(parts: dict, wanted: list | None) -> dict:
    if wanted is None:
        return parts
    keys = []
    for token in wanted:
        key = _parse_id_token(token)
        if key not in parts:
            raise ValueError(f"message ID {token} not present in the input")
        keys.append(key)
    return {k: parts[k] for k in keys}


def _load_layouts(cfg: RunConfig, parts: dict) -> dict:
    """Layouts per ID from --layout (file or directory of layout_*.json)."""
    if cfg.layout is None:
        raise ValueError("this input format requires --layout")
    path = Path(cfg.layout)
    layouts = {}
    if path.is_dir():
        for p in sorted(path.glob("layout_*.json")):
            layout = sigmap.SignalLayout.load(p)
            layouts[layout.msg_id] = layout
    else:
        layout = sigmap.SignalLayout.load(path)
        layouts[layout.msg_id] = layout
    missing = [k for k in parts if k not in layouts]
    if missing:
        raise ValueError(f"no layout for IDs {missing}")
    return layouts


def _frame_series(frames: list, layout: sigmap.SignalLayout):
    ts = np.array([f.timestamp for f in frames], dtype=np.float64)
    series = sigmap.decode_series(frames, layout)
    return ts, series


def _id_tag(msg_id) -> str:
    return f"{msg_id:X}" if isinstance(msg_id, int) else str(msg_id)


def _write(path: Path, text: str) -> Path:
    path.write_text(text)
    return path


def cmd_parse(cfg: RunConfig) -> list:
    if cfg.input is None:
        raise ValueError("parse requires --input")
    logbook = load_log(cfg.input)
    parts = canlog.split_by_id(logbook)
    summary = {
        "input": str(cfg.input),
        "format": logbook.source_format,
        "records": len(logbook),
        "skipped_blank_lines": logbook.skipped_blanks,
        "warnings": logbook.warnings,
        "ids": {_id_tag(k): len(v) for k, v in sorted(parts.items(), key=lambda kv: str(kv[0]))},
        "time_span": [logbook[0].timestamp, logbook[-1].timestamp] if len(logbook) else None,
    }
    out = cfg.out_dir() / "parse_summary.json"
    return [_write(out, json.dumps(summary, indent=2, sort_keys=True) + "\n")]


def cmd_extract_signals(cfg: RunConfig) -> list:
    if cfg.input is None:
        raise ValueError("extract-signals requires --input")
    logbook = load_log(cfg.input)
    if logbook.source_format != canlog.CANDUMP_FORMAT:
        raise ValueError("signal extraction needs raw frames (candump input)")
    parts = _select_ids(canlog.split_by_id(logbook), cfg.ids)
    artifacts = []
    out_dir = cfg.out_dir()
    for msg_id, frames in parts.items():
        stats = sigmap.compute_bit_stats(frames)
        layout = sigmap.infer_signal_layout(stats)
        tag = _id_tag(msg_id)
        artifacts.append(_write(out_dir / f"layout_{tag}.json", layout.to_json()))
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["bit", "flip_rate", "constant"])
        for bit in range(stats.dlc * 8):
            writer.writerow([bit, repr(float(stats.flip_rate[bit])),
                             int(stats.constant_mask[bit])])
        artifacts.append(_write(out_dir / f"bitstats_{tag}.csv", buf.getvalue()))
        log.info("ID %s: %d signals, %d static fields", tag, layout.n_signals,
                 len(layout.static_fields))
    return artifacts


def cmd_inject(cfg: RunConfig) -> list:
    if cfg.input is None or cfg.attack_spec is None:
        raise ValueError("inject requires --input and --attack-spec")
    logbook = load_log(cfg.input)
    if logbook.source_format != canlog.CANDUMP_FORMAT:
        raise ValueError("attack injection needs raw frames (candump input)")
    spec = attackgen.AttackSpec.load(cfg.attack_spec)
    layouts = _load_layouts(cfg, {spec.msg_id: None})
    mutated, truth = attackgen.inject_attack(logbook, layouts[spec.msg_id], spec)
    out_dir = cfg.out_dir()
    attacked = _write(out_dir / "attacked.log", canlog.write_candump(mutated))
    truth_path = out_dir / "ground_truth.csv"
    attackgen.write_ground_truth_csv(truth, mutated, truth_path)
    return [attacked, truth_path]


def _per_id_series(cfg: RunConfig, logbook: canlog.CanLog,
                   layouts: dict | None = None) -> tuple[dict, dict]:
    """({msg_id: (timestamps, labels or None, raw signal series)}, layouts)."""
    parts = _select_ids(canlog.split_by_id(logbook), cfg.ids)
    out = {}
    if logbook.source_format == canlog.SYNCAN_FORMAT:
        for msg_id, records in parts.items():
            ts, labels, series = canlog.record_series(records)
            out[msg_id] = (ts, labels, series)
        return out, {}
    if layouts is None or any(k not in layouts or layouts[k] is None for k in parts):
        layouts = _load_layouts(cfg, parts)
    for msg_id, frames in parts.items():
        ts, series = _frame_series(frames, layouts[msg_id])
        out[msg_id] = (ts, None, series)
    return out, layouts


def cmd_train(cfg: RunConfig) -> list:
    if cfg.input is None:
        raise ValueError("train requires --input")
    logbook = load_log(cfg.input)
    artifacts = []
    out_dir = cfg.out_dir()
    series_by_id, layouts = _per_id_series(cfg, logbook)
    for msg_id, (ts, labels, series) in series_by_id.items():
        tag = _id_tag(msg_id)
        seed = _derive_seed(cfg.seed, msg_id)
        train_cfg = cfg.train_config(seed)
        normalizer = sigmap.Normalizer.fit(series)
        normalized = normalizer.apply(series)
        digest = hashlib.sha256(np.ascontiguousarray(normalized).tobytes()).hexdigest()
        log.info("training ID %s on %d messages (seed %d)", tag, len(series), seed)
        model, history = detector.train(normalized, train_cfg)
        n_windows = series.shape[0] - train_cfg.window + 1
        val_start = int(n_windows * train_cfg.split)
        thresholds = detector.calibrate_thresholds(
            model, normalized[val_start:], train_cfg.window
        )
        bundle = detector.DetectorBundle(
            msg_id=msg_id, model=model, normalizer=normalizer,
            thresholds=thresholds, config=train_cfg, seed=seed,
            data_digest=digest, history=history, layout=layouts.get(msg_id),
        )
        artifacts.extend(detector.save_bundle(bundle, out_dir / f"id_{tag}"))
        artifacts.append(
            _write(out_dir / f"history_{tag}.json",
                   json.dumps(history, indent=2, sort_keys=True) + "\n")
        )
    return artifacts


def _load_bundles(cfg: RunConfig) -> dict:
    bundle_dir = Path(cfg.model_dir) if cfg.model_dir else cfg.out_dir()
    bundles = {}
    for sidecar in sorted(bundle_dir.glob("*.bundle.json")):
        prefix = sidecar.with_name(sidecar.name[: -len(".bundle.json")])
        bundle = detector.load_bundle(prefix)
        bundles[bundle.msg_id] = bundle
    if not bundles:
        raise ValueError(f"no trained bundles under {bundle_dir}")
    return bundles


def cmd_calibrate(cfg: RunConfig) -> list:
    """Recompute thresholds from the validation tail of --input.

    With the training input and an unchanged split this reproduces the
    thresholds computed at training time; a different benign capture
    recalibrates the detector without retraining.
    """
    if cfg.input is None:
        raise ValueError("calibrate requires --input")
    logbook = load_log(cfg.input)
    bundles = _load_bundles(cfg)
    artifacts = []
    out_dir = cfg.out_dir()
    bundle_layouts = {k: b.layout for k, b in bundles.items()}
    series_by_id, _ = _per_id_series(cfg, logbook, bundle_layouts)
    for msg_id, (ts, labels, series) in series_by_id.items():
        if msg_id not in bundles:
            raise ValueError(f"no trained bundle for ID {_id_tag(msg_id)}")
        bundle = bundles[msg_id]
        normalized = bundle.normalizer.apply(series)
        n_windows = len(series) - bundle.config.window + 1
        val_start = int(n_windows * cfg.split)
        bundle.thresholds = detector.calibrate_thresholds(
            bundle.model, normalized[val_start:], bundle.config.window
        )
        artifacts.extend(detector.save_bundle(bundle, out_dir / f"id_{_id_tag(msg_id)}"))
    return artifacts


def _sibling_ground_truth(cfg: RunConfig, test_path: Path) -> attackgen.GroundTruth | None:
    if cfg.ground_truth:
        return attackgen.read_ground_truth_csv(cfg.ground_truth)
    candidate = test_path.parent / "ground_truth.csv"
    if candidate.exists():
        return attackgen.read_ground_truth_csv(candidate)
    return None


def cmd_detect(cfg: RunConfig) -> list:
    if cfg.input is None:
        raise ValueError("detect requires --input")
    test_path = Path(cfg.input)
    logbook = load_log(test_path)
    bundles = _load_bundles(cfg)
    parts = _select_ids(canlog.split_by_id(logbook), cfg.ids)
    positions = {}
    for pos, rec in enumerate(logbook.frames):
        key = rec.can_id if isinstance(rec, canlog.CanFrame) else rec.msg_id
        positions.setdefault(key, []).append(pos)
    truth_full = None
    if logbook.source_format == canlog.CANDUMP_FORMAT:
        truth_full = _sibling_ground_truth(cfg, test_path)
    artifacts = []
    out_dir = cfg.out_dir()
    bundle_layouts = {k: b.layout for k, b in bundles.items()}
    series_by_id, _ = _per_id_series(cfg, logbook, bundle_layouts)
    for msg_id, (ts, labels, series) in series_by_id.items():
        if msg_id not in bundles:
            raise ValueError(f"no trained bundle for ID {_id_tag(msg_id)}")
        bundle = bundles[msg_id]
        if bundle.thresholds is None:
            raise ValueError(f"bundle for ID {_id_tag(msg_id)} is not calibrated")
        tag = _id_tag(msg_id)
        scores = detector.score_messages(
            bundle.model, bundle.normalizer, series, bundle.config.window
        )
        verdicts = detector.classify(scores, bundle.thresholds, ts)
        verdict_path = out_dir / f"verdicts_{tag}.csv"
        detector.write_verdicts_csv(verdicts, verdict_path)
        artifacts.append(verdict_path)
        artifacts.append(
            _write(out_dir / f"traces_{tag}.csv",
                   evalkit.emit_score_traces(tag, verdicts))
        )
        if labels is None and truth_full is not None:
            labels = truth_full.labels[positions[msg_id]]
        if labels is not None:
            buf = io.StringIO()
            writer = csv.writer(buf)
            writer.writerow(["index", "label"])
            for i, lbl in enumerate(labels):
                writer.writerow([i, int(lbl)])
            artifacts.append(_write(out_dir / f"truth_{tag}.csv", buf.getvalue()))
        flagged = int(verdicts.labels.sum())
        log.info("ID %s: flagged %d of %d messages", tag, flagged, len(verdicts.labels))
    return artifacts


def cmd_evaluate(cfg: RunConfig) -> list:
    """Pair verdicts_<id>.csv with truth_<id>.csv and emit the metrics
    table."""
    src = Path(cfg.input) if cfg.input else cfg.out_dir()
    if not src.is_dir():
        raise ValueError("evaluate expects --input pointing at a detect output directory")
    report = evalkit.MetricsReport()
    for verdict_path in sorted(src.glob("verdicts_*.csv")):
        tag = verdict_path.stem[len("verdicts_"):]
        truth_path = src / f"truth_{tag}.csv"
        if not truth_path.exists():
            raise ValueError(f"no ground truth for ID {tag} (missing {truth_path.name})")
        verdicts = detector.read_verdicts_csv(verdict_path)
        truth_rows = list(csv.DictReader(truth_path.open()))
        truth = np.array([int(r["label"]) for r in truth_rows], dtype=np.int64)
        attack_class = cfg.attack_class or ("attack" if truth.any() else "normal")
        report.add(tag, attack_class, evalkit.evaluate(verdicts.labels, truth))
    if not report.cells:
        raise ValueError(f"no verdict files under {src}")
    out_dir = cfg.out_dir()
    ext = "json" if cfg.format == "json" else "csv"
    return [_write(out_dir / f"metrics.{ext}", evalkit.emit_report(report, ext))]


def cmd_pipeline(cfg: RunConfig) -> list:
    if cfg.input is None:
        raise ValueError("pipeline requires --input (training data)")
    artifacts = []
    train_format = detect_format(cfg.input)
    if train_format == canlog.CANDUMP_FORMAT and cfg.layout is None:
        artifacts += _stage("extract-signals", cmd_extract_signals, cfg)
        cfg.layout = str(cfg.out_dir())
    artifacts += _stage("train", cmd_train, cfg)

    test_input = cfg.test_input or cfg.input
    if cfg.attack_spec is not None:
        inject_cfg = _clone(cfg, input=test_input)
        artifacts += _stage("inject", cmd_inject, inject_cfg)
        test_input = str(cfg.out_dir() / "attacked.log")
        if cfg.attack_class is None:
            cfg.attack_class = attackgen.AttackSpec.load(cfg.attack_spec).kind
    detect_cfg = _clone(cfg, input=test_input, model_dir=str(cfg.out_dir()))
    artifacts += _stage("detect", cmd_detect, detect_cfg)
    eval_cfg = _clone(cfg, input=str(cfg.out_dir()))
    artifacts += _stage("evaluate", cmd_evaluate, eval_cfg)
    return artifacts


def _clone(cfg: RunConfig, **changes) -> RunConfig:
    doc = cfg.to_dict()
    doc.update(changes)
    clone = RunConfig()
    for key, value in doc.items():
        setattr(clone, key, value)
    return clone


def _stage(name: str, fn, cfg: RunConfig) -> list:
    try:
        return fn(cfg)
    except StageError:
        raise
    except Exception as e:
        raise StageError(name, e) from e


def _write_manifest(cfg: RunConfig, subcommand: str, artifacts: list) -> Path:
    inputs = {}
    for path in (cfg.input, cfg.test_input, cfg.attack_spec, cfg.layout):
        if path and Path(path).is_file():
            inputs[str(path)] = _sha256(Path(path))
    manifest = {
        "toolkit_version": __version__,
        "subcommand": subcommand,
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "inputs": inputs,
        "artifacts": {p.name: _sha256(p) for p in sorted(artifacts, key=lambda p: p.name)},
    }
    path = cfg.out_dir() / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


COMMANDS = {
    "parse": cmd_parse,
    "extract-signals": cmd_extract_signals,
    "inject": cmd_inject,
    "train": cmd_train,
    "calibrate": cmd_calibrate,
    "detect": cmd_detect,
    "evaluate": cmd_evaluate,
    "pipeline": cmd_pipeline,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cantcn",
        description="CAN bus intrusion detection via TCN signal reconstruction",
    )
    parser.add_argument("--version", action="version", version=f"cantcn {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, help=f"run the {name} stage")
        p.add_argument("--config", help="JSON config file; flags override it")
        p.add_argument("--input", help="input log / data path")
        p.add_argument("--test-input", help="test trace for the pipeline")
        p.add_argument("--layout", help="signal layout JSON file or directory")
        p.add_argument("--attack-spec", help="attack specification JSON")
        p.add_argument("--out", help=f"output directory (default ${OUT_DIR_ENV} or ./cantcn_out)")
        p.add_argument("--seed", type=int, help="base RNG seed")
        p.add_argument("--window", type=int, help="rolling window length (default 20)")
        p.add_argument("--batch", type=int, help="batch size (default 128)")
        p.add_argument("--epochs", type=int, help="epoch cap (default 100)")
        p.add_argument("--lr", type=float, help="learning rate (default 1e-4)")
        p.add_argument("--patience", type=int, help="early-stop patience (default 10)")
        p.add_argument("--split", type=float, help="train fraction (default 0.85)")
        p.add_argument("--ids", help="comma-separated message IDs to process")
        p.add_argument("--format", choices=("csv", "json"), help="metrics table format")
        p.add_argument("--attack-class", help="label for the evaluated attack class")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
    except (OSError, ValueError) as e:
        print(f"cantcn: config error: {e}", file=sys.stderr)
        return 2
    logging.basicConfig(level=getattr(logging, str(cfg.log_level).upper(), logging.INFO),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        artifacts = _stage(args.subcommand, COMMANDS[args.subcommand], cfg)
        _write_manifest(cfg, args.subcommand, artifacts)
    except StageError as e:
        print(f"cantcn: {e}", file=sys.stderr)
        return 1
    for path in artifacts:
        log.info("wrote %s", path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
