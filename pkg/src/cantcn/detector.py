"""Per-ID training, threshold calibration, and streaming classification.

A rolling window (default 20 messages, stride 1) turns one ID's normalized
signal series into reconstruction samples. Training uses a chronological
85/15 train/validation split of the windows, shuffles only the training
windows each epoch, and stops early once the validation loss has not
strictly improved for ``patience`` consecutive epochs, restoring the best
epoch's weights.

The intrusion score of message t is the squared error between each signal
value and its reconstruction at the last position of the window ending at
t; messages before the first full window score 0 (warm-up) and count as
benign. Per-signal thresholds are the 99.9th percentile (linear
interpolation between closest ranks) of those last-position validation
errors, and a message is flagged as soon as any signal's score strictly
exceeds its own threshold.
"""

from __future__ import annotations

import json
import logging
import warnings as _warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import neuralnet as nn
from .sigmap import InsufficientDataError, Normalizer, SignalLayout

log = logging.getLogger(__name__)

SCORE_BATCH = 4096
THRESHOLD_PERCENTILE = 99.9


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite during training."""


@dataclass
class TrainConfig:
    """Training protocol defaults; change them only deliberately."""

    window: int = 20
    batch_size: int = 128
    epochs: int = 100
    lr: float = 1e-4
    patience: int = 10
    split: float = 0.85
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.split < 1.0:
            raise ValueError(f"split must be in (0, 1), got {self.split}")
        if self.window < 1 or self.batch_size < 1 or self.epochs < 1 or self.patience < 1:
            raise ValueError("window, batch_size, epochs and patience must be >= 1")

    def to_dict(self) -> dict:
        return {
            "window": self.window,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "lr": self.lr,
            "patience": self.patience,
            "split": self.split,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        return cls(**doc)


@dataclass
class WindowedDataset:
    """Stride-1 window views over a series; window i covers rows
    [i, i+window-1]."""

    windows: np.ndarray  # (N - w + 1, w, n_signals), a view where possible
    window: int


def make_windows(series: np.ndarray, window: int) -> WindowedDataset:
    series = _as_series(series)
    n = series.shape[0]
    if n < window:
        raise InsufficientDataError(f"series of {n} rows is shorter than window {window}")
    views = np.lib.stride_tricks.sliding_window_view(series, window, axis=0)
    return WindowedDataset(windows=views.transpose(0, 2, 1), window=window)


def _as_series(series) -> np.ndarray:
    arr = np.asarray(series, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError(f"expected (N, n_signals) series, got shape {arr.shape}")
    return arr


class EarlyStopper:
    """Stop after ``patience`` epochs without strict improvement."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = np.inf
        self.best_epoch = 0
        self.stale = 0

    def update(self, epoch: int, value: float) -> bool:
        """Record one epoch's validation loss; True means stop now."""
        if value < self.best:
            self.best = value
            self.best_epoch = epoch
            self.stale = 0
            return False
        self.stale += 1
        return self.stale >= self.patience


def _batched_forward_last(model, windows, batch=SCORE_BATCH) -> np.ndarray:
    """Reconstruction at each window's last position; (n_windows, n_signals)."""
    out = np.empty((windows.shape[0], windows.shape[2]), dtype=np.float64)
    for i in range(0, windows.shape[0], batch):
        chunk = np.ascontiguousarray(windows[i : i + batch])
        out[i : i + batch] = nn.tcn_forward(chunk, model)[:, -1, :]
    return out


def _validation_loss(model, windows, batch=SCORE_BATCH) -> float:
    sse = 0.0
    count = 0
    for i in range(0, windows.shape[0], batch):
        chunk = np.ascontiguousarray(windows[i : i + batch])
        diff = nn.tcn_forward(chunk, model) - chunk
        sse += float(np.sum(diff * diff))
        count += diff.size
    return sse / count


def train(series: np.ndarray, config: TrainConfig):
    """Train a reconstruction model on one ID's normalized series.

    Returns (model, history); history holds per-epoch train/validation
    losses, the 1-based best epoch, and whether early stopping fired. The
    returned model carries the best epoch's weights.
    """
    series = _as_series(series)
    windows = make_windows(series, config.window).windows
    n_windows = windows.shape[0]
    n_train = int(n_windows * config.split)
    n_val = n_windows - n_train
    if n_train < 1 or n_val < 1:
        raise InsufficientDataError(
            f"{n_windows} windows cannot be split {config.split:.0%}/"
            f"{1 - config.split:.0%} with at least one window on each side"
        )
    train_windows = windows[:n_train]
    val_windows = windows[n_train:]

    model = nn.init_model(series.shape[1], config.seed)
    params = model.parameters()
    state = nn.AdamState.init(params, lr=config.lr)
    shuffle_rng = np.random.default_rng([config.seed, 1])
    stopper = EarlyStopper(config.patience)
    best_params = model.copy_parameters()
    history = {"train_loss": [], "val_loss": [], "best_epoch": 0, "epochs_run": 0,
               "stopped_early": False}

    for epoch in range(1, config.epochs + 1):
        perm = shuffle_rng.permutation(n_train)
        sse = 0.0
        for start in range(0, n_train, config.batch_size):
            idx = perm[start : start + config.batch_size]
            batch = np.ascontiguousarray(train_windows[idx])
            loss, grads = nn.backward(model, batch, batch)
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, batch starting {start}"
                )
            nn.adam_step(params, grads, state)
            sse += loss * batch.shape[0]
        train_loss = sse / n_train
        val_loss = _validation_loss(model, val_windows)
        if not np.isfinite(val_loss):
            raise TrainingDivergedError(f"non-finite validation loss at epoch {epoch}")
        history["train_loss"].append(train_loss)
        history["val_loss"].append(val_loss)
        history["epochs_run"] = epoch
        improved = val_loss < stopper.best
        stop = stopper.update(epoch, val_loss)
        if improved:
            best_params = model.copy_parameters()
        log.info("epoch %d/%d train=%.6g val=%.6g", epoch, config.epochs,
                 train_loss, val_loss)
        if stop:
            history["stopped_early"] = True
            break

    history["best_epoch"] = stopper.best_epoch
    model.load_parameters(best_params)
    return model, history


@dataclass
class ThresholdSet:
    """Per-signal intrusion thresholds plus calibration metadata."""

    tau: np.ndarray
    percentile: float = THRESHOLD_PERCENTILE
    n_validation: int = 0

    def to_dict(self) -> dict:
        return {
            "tau": self.tau.tolist(),
            "percentile": self.percentile,
            "n_validation": self.n_validation,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ThresholdSet":
        return cls(
            tau=np.asarray(doc["tau"], dtype=np.float64),
            percentile=doc["percentile"],
            n_validation=doc["n_validation"],
        )


def calibrate_thresholds(model, series: np.ndarray, window: int) -> ThresholdSet:
    """Per-signal 99.9th percentile of last-position squared errors over the
    validation series' windows."""
    series = _as_series(series)
    if series.shape[0] < window:
        raise InsufficientDataError(
            f"validation series of {series.shape[0]} rows yields no window of {window}"
        )
    windows = make_windows(series, window).windows
    recon = _batched_forward_last(model, windows)
    errors = (series[window - 1 :] - recon) ** 2
    tau = np.percentile(errors, THRESHOLD_PERCENTILE, axis=0)
    return ThresholdSet(tau=tau, n_validation=windows.shape[0])


def score_messages(model, normalizer: Normalizer | None, series: np.ndarray,
                   window: int = 20) -> np.ndarray:
    """Per-message per-signal squared reconstruction errors, shape (N, S).

    ``series`` is the raw decoded signal series; it is normalized here with
    the training normalizer (pass None if already normalized). The first
    window-1 messages score 0 on every signal.
    """
    series = _as_series(series)
    x = normalizer.apply(series) if normalizer is not None else series
    n = x.shape[0]
    scores = np.zeros_like(x)
    if n < window:
        _warnings.warn(
            f"series of {n} messages is shorter than the window {window}; "
            "all messages are warm-up and score 0"
        )
        return scores
    windows = make_windows(x, window).windows
    recon = _batched_forward_last(model, windows)
    scores[window - 1 :] = (x[window - 1 :] - recon) ** 2
    return scores


@dataclass
class Verdicts:
    """Vectorized per-message classification results."""

    indices: np.ndarray
    timestamps: np.ndarray
    scores: np.ndarray  # (N, n_signals)
    labels: np.ndarray  # (N,), 0/1


def classify(scores: np.ndarray, thresholds: ThresholdSet,
             timestamps: np.ndarray | None = None) -> Verdicts:
    """Label 1 iff any signal's score strictly exceeds its threshold."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2 or scores.shape[1] != thresholds.tau.shape[0]:
        raise ValueError(
            f"scores for {scores.shape[-1] if scores.ndim == 2 else '?'} signals do not "
            f"match {thresholds.tau.shape[0]} thresholds"
        )
    labels = (scores > thresholds.tau).any(axis=1).astype(np.int64)
    n = scores.shape[0]
    if timestamps is None:
        timestamps = np.zeros(n, dtype=np.float64)
    return Verdicts(
        indices=np.arange(n, dtype=np.int64),
        timestamps=np.asarray(timestamps, dtype=np.float64),
        scores=scores,
        labels=labels,
    )


def write_verdicts_csv(verdicts: Verdicts, out) -> None:
    close = False
    if isinstance(out, (str, Path)):
        out = open(out, "w", newline="")
        close = True
    try:
        n_sig = verdicts.scores.shape[1]
        out.write("index,timestamp," + ",".join(f"score_{s}" for s in range(n_sig))
                  + ",label\n")
        for i in range(len(verdicts.labels)):
            cells = [str(int(verdicts.indices[i])), f"{verdicts.timestamps[i]:.6f}"]
            cells += [repr(float(v)) for v in verdicts.scores[i]]
            cells.append(str(int(verdicts.labels[i])))
            out.write(",".join(cells) + "\n")
    finally:
        if close:
            out.close()


def read_verdicts_csv(source) -> Verdicts:
    if isinstance(source, (str, Path)):
        text = Path(source).read_text()
    else:
        text = source.read()
    lines = text.strip().splitlines()
    header = lines[0].split(",")
    score_cols = [i for i, h in enumerate(header) if h.startswith("score_")]
    rows = [line.split(",") for line in lines[1:]]
    return Verdicts(
        indices=np.array([int(r[0]) for r in rows], dtype=np.int64),
        timestamps=np.array([float(r[1]) for r in rows], dtype=np.float64),
        scores=np.array([[float(r[c]) for c in score_cols] for r in rows]),
        labels=np.array([int(r[-1]) for r in rows], dtype=np.int64),
    )


@dataclass
class DetectorBundle:
    """Everything needed to score one message ID's traffic.

    ``layout`` is present when the training data were raw frames, so detect
    runs on a candump capture need no separate layout file.
    """

    msg_id: object
    model: nn.TcnModel
    normalizer: Normalizer
    thresholds: ThresholdSet | None
    config: TrainConfig
    seed: int
    data_digest: str = ""
    history: dict = field(default_factory=dict)
    layout: object = None


def save_bundle(bundle: DetectorBundle, prefix) -> list:
    """Write <prefix>.tcn.bin plus <prefix>.bundle.json; returns the paths."""
    prefix = Path(prefix)
    model_path = prefix.parent / (prefix.name + ".tcn.bin")
    sidecar_path = prefix.parent / (prefix.name + ".bundle.json")
    nn.save_model(bundle.model, model_path)
    sidecar = {
        "format_version": 1,
        "msg_id": bundle.msg_id,
        "model_file": model_path.name,
        "architecture": {
            "n_signals": bundle.model.n_signals,
            "filters": bundle.model.blocks[0].conv1.c_out,
            "kernel": bundle.model.blocks[0].conv1.kernel,
            "dilations": [b.conv1.dilation for b in bundle.model.blocks],
            "receptive_field": bundle.model.receptive_field,
        },
        "normalizer": bundle.normalizer.to_dict(),
        "thresholds": bundle.thresholds.to_dict() if bundle.thresholds else None,
        "train_config": bundle.config.to_dict(),
        "seed": bundle.seed,
        "training_data_digest": bundle.data_digest,
        "history": bundle.history,
        "layout": bundle.layout.to_dict() if bundle.layout is not None else None,
    }
    sidecar_path.write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    return [model_path, sidecar_path]


def load_bundle(prefix) -> DetectorBundle:
    prefix = Path(prefix)
    sidecar = json.loads((prefix.parent / (prefix.name + ".bundle.json")).read_text())
    model = nn.load_model(prefix.parent / sidecar["model_file"])
    return DetectorBundle(
        msg_id=sidecar["msg_id"],
        model=model,
        normalizer=Normalizer.from_dict(sidecar["normalizer"]),
        thresholds=(
            ThresholdSet.from_dict(sidecar["thresholds"])
            if sidecar["thresholds"] is not None
            else None
        ),
        config=TrainConfig.from_dict(sidecar["train_config"]),
        seed=sidecar["seed"],
        data_digest=sidecar["training_data_digest"],
        history=sidecar.get("history", {}),
        layout=(
            SignalLayout.from_dict(sidecar["layout"])
            if sidecar.get("layout") is not None
            else None
        ),
    )
