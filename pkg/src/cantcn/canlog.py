"""CAN traffic log ingestion and serialization.

Two external formats are supported:

* candump text, one frame per line::

    (1600000000.000100) can0 123#0011223344556677

  Timestamp in parentheses (seconds, microsecond resolution), interface
  name, hex arbitration ID, ``#``, then 0-16 hex digits of payload.

* SynCAN-style signal CSV: a header row followed by
  ``Label,Time,ID,Signal1,...`` rows. Training files may omit the leading
  label column; empty trailing signal cells mean the signal is absent.

Parsers keep records in file order and enforce non-decreasing timestamps;
all parse errors carry 1-based line numbers.
"""

from __future__ import annotations

import csv
import io
import re
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Union

import numpy as np

MAX_CAN_ID = 1 << 29  # 29-bit extended identifier space
MAX_PAYLOAD = 8  # classic CAN only, no CAN-FD

CANDUMP_FORMAT = "candump"
SYNCAN_FORMAT = "syncan_csv"


class LogParseError(ValueError):
    """Malformed input line/row. ``line_no`` is 1-based."""

    def __init__(self, line_no: int, message: str, text: str = ""):
        self.line_no = line_no
        self.text = text
        detail = f"line {line_no}: {message}"
        if text:
            detail += f" ({text!r})"
        super().__init__(detail)


class UnsupportedFormatError(ValueError):
    """Operation does not apply to this log's record kind."""


@dataclass(frozen=True)
class CanFrame:
    """One raw CAN message."""

    timestamp: float
    channel: str
    can_id: int
    payload: bytes

    def __post_init__(self):
        if not 0 <= self.can_id < MAX_CAN_ID:
            raise ValueError(f"can_id {self.can_id:#x} outside 29-bit range")
        if len(self.payload) > MAX_PAYLOAD:
            raise ValueError(f"payload of {len(self.payload)} bytes exceeds 8")
        if self.timestamp < 0:
            raise ValueError("negative timestamp")

    @property
    def dlc(self) -> int:
        return len(self.payload)


@dataclass(frozen=True)
class SignalRecord:
    """One decoded-signal row of a SynCAN-style CSV."""

    timestamp: float
    msg_id: str
    label: int
    signals: tuple[float, ...]

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label}")
        if not self.signals:
            raise ValueError("record carries no signals")


Record = Union[CanFrame, SignalRecord]


@dataclass
class CanLog:
    """An ordered, homogeneous sequence of CanFrame or SignalRecord.

    ``skipped_blanks`` and ``warnings`` are parse metadata; both are empty
    for logs built programmatically.
    """

    frames: list
    source_format: str
    skipped_blanks: int = 0
    warnings: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.frames)

    def __iter__(self) -> Iterator[Record]:
        return iter(self.frames)

    def __getitem__(self, i):
        return self.frames[i]


# (<ts>) <channel> <ID-hex>#<DATA-hex>
_CANDUMP_RE = re.compile(
    r"^\((?P<ts>\d+(?:\.\d+)?)\)\s+(?P<chan>\S+)\s+"
    r"(?P<id>[0-9A-Fa-f]{1,8})#(?P<data>[0-9A-Fa-f]*)\s*$"
)


def _as_lines(stream) -> Iterable[str]:
    if isinstance(stream, str):
        return io.StringIO(stream)
    return stream


def parse_candump(stream, allow_decreasing: bool = False) -> CanLog:
    """Parse candump text into a CanLog of CanFrame records.

    Blank lines are skipped and counted in ``log.skipped_blanks``; any other
    unmatched line raises LogParseError. A timestamp lower than its
    predecessor is an error unless ``allow_decreasing`` is set, in which
    case the original order is kept and a warning recorded on the log.
    """
    frames: list[CanFrame] = []
    skipped = 0
    warnings: list[str] = []
    prev_ts = None
    for line_no, line in enumerate(_as_lines(stream), start=1):
        if not line.strip():
            skipped += 1
            continue
        m = _CANDUMP_RE.match(line)
        if m is None:
            raise LogParseError(line_no, "not a candump frame", line.strip())
        data = m.group("data")
        if len(data) % 2 != 0:
            raise LogParseError(line_no, "odd number of payload hex digits", line.strip())
        if len(data) > 2 * MAX_PAYLOAD:
            raise LogParseError(line_no, "payload exceeds 8 bytes", line.strip())
        can_id = int(m.group("id"), 16)
        if can_id >= MAX_CAN_ID:
            raise LogParseError(line_no, f"can_id {can_id:#x} outside 29-bit range")
        ts = float(m.group("ts"))
        if prev_ts is not None and ts < prev_ts:
            if not allow_decreasing:
                raise LogParseError(line_no, f"timestamp {ts} decreases below {prev_ts}")
            warnings.append(f"line {line_no}: timestamp {ts} decreases below {prev_ts}")
        prev_ts = ts
        frames.append(
            CanFrame(
                timestamp=ts,
                channel=m.group("chan"),
                can_id=can_id,
                payload=bytes.fromhex(data),
            )
        )
    return CanLog(frames, CANDUMP_FORMAT, skipped_blanks=skipped, warnings=warnings)


def write_candump(log: CanLog) -> str:
    """Serialize a CanFrame log back to candump text.

    Timestamps are written with 6 decimal places; IDs are padded to 3 hex
    digits (8 for extended IDs), matching socketcan convention, so
    parse_candump(write_candump(log)) reproduces the log frame for frame.
    """
    lines = []
    for rec in log.frames:
        if not isinstance(rec, CanFrame):
            raise UnsupportedFormatError("write_candump only handles CanFrame logs")
        id_hex = f"{rec.can_id:08X}" if rec.can_id > 0x7FF else f"{rec.can_id:03X}"
        lines.append(
            f"({rec.timestamp:.6f}) {rec.channel} {id_hex}#{rec.payload.hex().upper()}"
        )
    if not lines:
        return ""
    return "\n".join(lines) + "\n"


def _parse_float(cell: str, line_no: int, what: str) -> float:
    try:
        return float(cell)
    except ValueError:
        raise LogParseError(line_no, f"non-numeric {what}", cell) from None


def parse_syncan_csv(stream, allow_decreasing: bool = False) -> CanLog:
    """Parse a SynCAN-style CSV into a CanLog of SignalRecord rows.

    Columns are positional: an optional label column (present when the
    first header cell is "Label", case-insensitive), then time, message ID,
    and up to four signal columns. Header text beyond that is ignored since
    published variants of the dataset disagree on column names. Missing
    label column defaults every label to 0.
    """
    records: list[SignalRecord] = []
    warnings: list[str] = []
    prev_ts = None
    sig_counts: dict[str, int] = {}
    reader = csv.reader(_as_lines(stream))
    has_label = None
    for line_no, row in enumerate(reader, start=1):
        if not row or all(not c.strip() for c in row):
            continue
        if has_label is None:  # header row
            has_label = row[0].strip().lower() == "label"
            continue
        if has_label:
            if len(row) < 3:
                raise LogParseError(line_no, "row too short")
            label_cell, time_cell, id_cell = row[0], row[1], row[2]
            sig_cells = row[3:]
            if label_cell.strip() not in ("0", "1"):
                raise LogParseError(line_no, "invalid label", label_cell)
            label = int(label_cell)
        else:
            if len(row) < 2:
                raise LogParseError(line_no, "row too short")
            time_cell, id_cell = row[0], row[1]
            sig_cells = row[2:]
            label = 0
        ts = _parse_float(time_cell, line_no, "time")
        msg_id = id_cell.strip()
        if not msg_id:
            raise LogParseError(line_no, "empty message ID")
        signals: list[float] = []
        seen_empty = False
        for cell in sig_cells:
            if not cell.strip():
                seen_empty = True
                continue
            if seen_empty:
                raise LogParseError(line_no, "signal value after an empty cell", cell)
            signals.append(_parse_float(cell, line_no, "signal"))
        if not signals:
            raise LogParseError(line_no, "row carries no signals")
        expected = sig_counts.setdefault(msg_id, len(signals))
        if expected != len(signals):
            raise LogParseError(
                line_no,
                f"{msg_id} has {len(signals)} signals here but {expected} earlier",
            )
        if prev_ts is not None and ts < prev_ts:
            if not allow_decreasing:
                raise LogParseError(line_no, f"timestamp {ts} decreases below {prev_ts}")
            warnings.append(f"line {line_no}: timestamp {ts} decreases below {prev_ts}")
        prev_ts = ts
        records.append(
            SignalRecord(timestamp=ts, msg_id=msg_id, label=label, signals=tuple(signals))
        )
    return CanLog(records, SYNCAN_FORMAT, warnings=warnings)


def split_by_id(log: CanLog) -> dict:
    """Partition a log per message ID, preserving relative order.

    Keys are ``can_id`` ints for frame logs and ``msg_id`` strings for
    signal-record logs.
    """
    parts: dict = {}
    for rec in log.frames:
        key = rec.can_id if isinstance(rec, CanFrame) else rec.msg_id
        parts.setdefault(key, []).append(rec)
    return parts


def record_series(records: list) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack one ID's SignalRecords into (timestamps, labels, signals) arrays.

    ``signals`` has shape (N, n_signals); the per-ID constant signal count
    is enforced at parse time.
    """
    if not records:
        raise ValueError("no records")
    ts = np.array([r.timestamp for r in records], dtype=np.float64)
    labels = np.array([r.label for r in records], dtype=np.int64)
    signals = np.array([r.signals for r in records], dtype=np.float64)
    return ts, labels, signals
