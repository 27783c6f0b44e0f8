"""Message-modification attack injection with per-message ground truth.

Seven mutation kinds operate on one decoded signal of one message ID, over
an index or time range, leaving frame count, order, timestamps and all
other payload bits untouched:

* change_to_constant   - value := param
* change_to_random     - value := seeded uniform draw over the field range
* modify_with_delta    - value := value + param
* modify_with_increment - value := value + i * param
* modify_with_decrement - value := value - i * param
* change_to_increment  - value := first_value + i * param
* change_to_decrement  - value := first_value - i * param

i counts in-range messages starting at 1; results are rounded to the
nearest integer and clamped to the signal's representable range so a
mutation can never spill into neighbouring bits. Every in-range message is
labeled 1 even if the mutation happens to reproduce the original value.
"""

from __future__ import annotations

import csv
import io
import json
import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .canlog import CanFrame, CanLog
from .sigmap import SignalLayout, decode_signal_ints, encode_signal

ATTACK_KINDS = (
    "change_to_constant",
    "change_to_random",
    "modify_with_delta",
    "modify_with_increment",
    "modify_with_decrement",
    "change_to_increment",
    "change_to_decrement",
)


def normalize_kind(kind: str) -> str:
    """Accept snake_case or CamelCase spellings of the seven kinds."""
    flat = re.sub(r"[^a-z]", "", kind.lower())
    for canonical in ATTACK_KINDS:
        if flat == canonical.replace("_", ""):
            return canonical
    raise ValueError(f"unknown attack kind {kind!r}")


@dataclass(frozen=True)
class AttackRange:
    """Inclusive attack window: 1-based per-ID message indices, or
    timestamps."""

    unit: str  # "index" or "time"
    start: float
    end: float

    def __post_init__(self):
        if self.unit not in ("index", "time"):
            raise ValueError(f"range unit must be 'index' or 'time', got {self.unit!r}")
        if self.end < self.start:
            raise ValueError(f"empty range: start {self.start} > end {self.end}")


@dataclass(frozen=True)
class AttackSpec:
    kind: str
    msg_id: object
    signal_index: int
    range: AttackRange
    param: float = 0.0
    rng_seed: int | None = None

    @classmethod
    def from_json(cls, text: str) -> "AttackSpec":
        doc = json.loads(text)
        rng = doc["range"]
        return cls(
            kind=normalize_kind(doc["kind"]),
            msg_id=doc["msg_id"],
            signal_index=int(doc["signal_index"]),
            range=AttackRange(rng["unit"], rng["start"], rng["end"]),
            param=float(doc.get("param", 0.0)),
            rng_seed=doc.get("rng_seed"),
        )

    @classmethod
    def load(cls, path) -> "AttackSpec":
        return cls.from_json(Path(path).read_text())


@dataclass
class GroundTruth:
    """Per-message labels aligned with the mutated log's frame order.

    ``attacked_signal[i]`` is the mutated signal's index for label-1
    messages and -1 otherwise.
    """

    labels: np.ndarray
    attacked_signal: np.ndarray


def inject_attack(log: CanLog, layout: SignalLayout, spec: AttackSpec):
    """Apply one attack; returns the mutated log and its ground truth."""
    kind = normalize_kind(spec.kind)
    if not 0 <= spec.signal_index < layout.n_signals:
        raise ValueError(
            f"layout for {layout.msg_id} has no signal {spec.signal_index}"
        )
    sig = layout.specs[spec.signal_index]

    positions = []  # (log position, per-ID 1-based ordinal)
    ordinal = 0
    for pos, frame in enumerate(log.frames):
        if not isinstance(frame, CanFrame):
            raise ValueError("attack injection requires a raw-frame log")
        if frame.can_id != spec.msg_id:
            continue
        ordinal += 1
        if spec.range.unit == "index":
            hit = spec.range.start <= ordinal <= spec.range.end
        else:
            hit = spec.range.start <= frame.timestamp <= spec.range.end
        if hit:
            positions.append(pos)
    if ordinal == 0:
        raise ValueError(f"log contains no frames with ID {spec.msg_id}")
    if not positions:
        raise ValueError("attack range selects no messages")

    rng = None
    if kind == "change_to_random":
        if spec.rng_seed is None:
            raise ValueError("change_to_random requires rng_seed")
        rng = np.random.default_rng(spec.rng_seed)

    base = decode_signal_ints(log.frames[positions[0]], layout)[spec.signal_index]
    frames = list(log.frames)
    labels = np.zeros(len(frames), dtype=np.int64)
    attacked = np.full(len(frames), -1, dtype=np.int64)
    for i, pos in enumerate(positions, start=1):
        frame = frames[pos]
        value = decode_signal_ints(frame, layout)[spec.signal_index]
        if kind == "change_to_constant":
            new = spec.param
        elif kind == "change_to_random":
            new = int(rng.integers(0, sig.max_value + 1))
        elif kind == "modify_with_delta":
            new = value + spec.param
        elif kind == "modify_with_increment":
            new = value + i * spec.param
        elif kind == "modify_with_decrement":
            new = value - i * spec.param
        elif kind == "change_to_increment":
            new = base + i * spec.param
        else:  # change_to_decrement
            new = base - i * spec.param
        clamped = min(max(int(round(new)), 0), sig.max_value)
        frames[pos] = CanFrame(
            timestamp=frame.timestamp,
            channel=frame.channel,
            can_id=frame.can_id,
            payload=encode_signal(frame.payload, sig, clamped),
        )
        labels[pos] = 1
        attacked[pos] = spec.signal_index
    mutated = CanLog(frames, log.source_format)
    return mutated, GroundTruth(labels=labels, attacked_signal=attacked)


def plateau_preset(log: CanLog, layout: SignalLayout, msg_id, signal_index: int):
    """Freeze one signal over the second half of its ID's trace.

    The constant is the signal's value at the midpoint message (per-ID
    index ceil(N/2)); messages ceil(N/2)+1 .. N are attacked. Timing is
    untouched.
    """
    frames = [f for f in log.frames if isinstance(f, CanFrame) and f.can_id == msg_id]
    if not frames:
        raise ValueError(f"log contains no frames with ID {msg_id}")
    n = len(frames)
    mid = math.ceil(n / 2)
    if mid + 1 > n:
        raise ValueError(f"trace of {n} message(s) has no second half to attack")
    if not 0 <= signal_index < layout.n_signals:
        raise ValueError(f"layout for {layout.msg_id} has no signal {signal_index}")
    constant = decode_signal_ints(frames[mid - 1], layout)[signal_index]
    spec = AttackSpec(
        kind="change_to_constant",
        msg_id=msg_id,
        signal_index=signal_index,
        range=AttackRange("index", mid + 1, n),
        param=float(constant),
    )
    return inject_attack(log, layout, spec)


def write_ground_truth_csv(truth: GroundTruth, log: CanLog, out) -> None:
    """CSV columns: message index (0-based log position), timestamp, label,
    attacked_signal (blank when benign)."""
    close = False
    if isinstance(out, (str, Path)):
        out = open(out, "w", newline="")
        close = True
    try:
        writer = csv.writer(out)
        writer.writerow(["index", "timestamp", "label", "attacked_signal"])
        for i, frame in enumerate(log.frames):
            sig = truth.attacked_signal[i]
            writer.writerow(
                [i, f"{frame.timestamp:.6f}", int(truth.labels[i]), "" if sig < 0 else int(sig)]
            )
    finally:
        if close:
            out.close()


def read_ground_truth_csv(source) -> GroundTruth:
    if isinstance(source, (str, Path)):
        text = Path(source).read_text()
    else:
        text = source.read()
    labels = []
    attacked = []
    for row in csv.DictReader(io.StringIO(text)):
        labels.append(int(row["label"]))
        cell = row.get("attacked_signal", "")
        attacked.append(int(cell) if cell not in ("", None) else -1)
    return GroundTruth(
        labels=np.array(labels, dtype=np.int64),
        attacked_signal=np.array(attacked, dtype=np.int64),
    )
