"""Payload bit statistics, signal boundary inference, and signal codecs.

Bit positions are numbered MSB-first across the payload: bit 0 is the most
significant bit of byte 0, bit 63 the least significant bit of byte 7.
Signals are unsigned big-endian bit fields; signedness, Intel byte order
and scale/offset recovery are out of scope.

Boundary inference rests on one observation: inside a single physical
value, lower-order bits flip at least as often as higher-order bits, so a
DROP in flip rate while scanning MSB to LSB marks the most significant bit
of a new value.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .canlog import CanFrame

BITS = 64  # full classic-CAN payload, 8 bytes


class InsufficientDataError(ValueError):
    """Not enough frames/samples to compute the requested statistic."""


@dataclass
class BitStats:
    """Per-bit transition statistics for one message ID.

    ``flip_rate[i]`` counts value changes between consecutive frames at bit
    i divided by (frame_count - 1). Positions beyond the observed DLC have
    rate 0 and are marked constant.
    """

    msg_id: object
    frame_count: int
    dlc: int
    flip_rate: np.ndarray  # (64,), values in [0, 1]
    constant_mask: np.ndarray  # (64,), bool


@dataclass(frozen=True)
class SignalSpec:
    """One unsigned big-endian bit field inside a payload."""

    msg_id: object
    signal_index: int
    start_bit: int
    bit_length: int

    def __post_init__(self):
        if not 0 <= self.start_bit < BITS:
            raise ValueError(f"start_bit {self.start_bit} outside 0..63")
        if not 1 <= self.bit_length <= BITS:
            raise ValueError(f"bit_length {self.bit_length} outside 1..64")
        if self.start_bit + self.bit_length > BITS:
            raise ValueError("signal extends past bit 63")

    @property
    def max_value(self) -> int:
        return (1 << self.bit_length) - 1


@dataclass
class SignalLayout:
    """Signals plus constant regions tiling one ID's payload bits."""

    msg_id: object
    dlc: int
    specs: list = field(default_factory=list)
    static_fields: list = field(default_factory=list)  # (start_bit, bit_length) pairs

    @property
    def n_signals(self) -> int:
        return len(self.specs)

    def to_dict(self) -> dict:
        return {
            "msg_id": self.msg_id,
            "signals": [
                {"start_bit": s.start_bit, "bit_length": s.bit_length} for s in self.specs
            ],
            "static_fields": [
                {"start_bit": b, "bit_length": n} for b, n in self.static_fields
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SignalLayout":
        specs = [
            SignalSpec(doc["msg_id"], i, s["start_bit"], s["bit_length"])
            for i, s in enumerate(doc["signals"])
        ]
        statics = [(s["start_bit"], s["bit_length"]) for s in doc["static_fields"]]
        regions = sorted(
            [(s.start_bit, s.bit_length) for s in specs] + statics
        )
        total_bits = sum(n for _, n in regions)
        if total_bits % 8 != 0:
            raise ValueError(f"layout covers {total_bits} bits, not a whole byte count")
        pos = 0
        for start, length in regions:
            if start != pos:
                raise ValueError(
                    f"layout regions must tile the payload; gap or overlap at bit {start}"
                )
            pos = start + length
        if [s.start_bit for s in specs] != sorted(s.start_bit for s in specs):
            raise ValueError("signals must be listed in start_bit order")
        return cls(doc["msg_id"], total_bits // 8, specs, statics)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "SignalLayout":
        return cls.from_dict(json.loads(text))

    def save(self, path):
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "SignalLayout":
        return cls.from_json(Path(path).read_text())


def _bit_matrix(frames, dlc: int) -> np.ndarray:
    """Frames -> (n, dlc*8) uint8 matrix of payload bits, MSB-first."""
    raw = np.frombuffer(b"".join(f.payload for f in frames), dtype=np.uint8)
    return np.unpackbits(raw.reshape(len(frames), dlc))


def compute_bit_stats(frames: list) -> BitStats:
    """Count per-bit transitions between consecutive frames of one ID."""
    if len(frames) < 2:
        raise InsufficientDataError(f"need at least 2 frames, got {len(frames)}")
    ids = {f.can_id for f in frames}
    if len(ids) != 1:
        raise ValueError(f"frames span multiple IDs: {sorted(ids)}")
    dlcs = {f.dlc for f in frames}
    if len(dlcs) != 1:
        raise ValueError(f"mixed DLC within one ID: {sorted(dlcs)}")
    dlc = dlcs.pop()
    flip_rate = np.zeros(BITS, dtype=np.float64)
    if dlc > 0:
        bits = _bit_matrix(frames, dlc).reshape(len(frames), dlc * 8)
        flips = (bits[1:] != bits[:-1]).sum(axis=0, dtype=np.int64)
        flip_rate[: dlc * 8] = flips / (len(frames) - 1)
    return BitStats(
        msg_id=ids.pop(),
        frame_count=len(frames),
        dlc=dlc,
        flip_rate=flip_rate,
        constant_mask=flip_rate == 0.0,
    )


def infer_signal_layout(stats: BitStats) -> SignalLayout:
    """Split the observed payload bits into signals and static fields.

    Scanning bit 0 to dlc*8 - 1: maximal runs of never-flipping bits become
    static fields; inside a flipping run, a new signal starts wherever the
    flip rate drops below its left neighbour. An all-constant payload
    yields a layout with no signals.
    """
    nbits = stats.dlc * 8
    layout = SignalLayout(stats.msg_id, stats.dlc)
    rate = stats.flip_rate
    const = stats.constant_mask
    i = 0
    while i < nbits:
        j = i
        if const[i]:
            while j < nbits and const[j]:
                j += 1
            layout.static_fields.append((i, j - i))
        else:
            while j < nbits and not const[j]:
                j += 1
            start = i
            for b in range(i + 1, j):
                if rate[b] < rate[b - 1]:
                    layout.specs.append(
                        SignalSpec(stats.msg_id, len(layout.specs), start, b - start)
                    )
                    start = b
            layout.specs.append(
                SignalSpec(stats.msg_id, len(layout.specs), start, j - start)
            )
        i = j
    return layout


def decode_signal_ints(frame: CanFrame, layout: SignalLayout) -> list[int]:
    """Extract each signal's raw unsigned integer value from one frame."""
    nbits = frame.dlc * 8
    word = int.from_bytes(frame.payload, "big")
    values = []
    for spec in layout.specs:
        if spec.start_bit + spec.bit_length > nbits:
            raise ValueError(
                f"signal {spec.signal_index} (bits {spec.start_bit}+{spec.bit_length}) "
                f"extends past the {frame.dlc}-byte payload"
            )
        shift = nbits - spec.start_bit - spec.bit_length
        values.append((word >> shift) & spec.max_value)
    return values


def decode_signals(frame: CanFrame, layout: SignalLayout) -> np.ndarray:
    """Signal values of one frame as a float vector."""
    return np.array(decode_signal_ints(frame, layout), dtype=np.float64)


def decode_series(frames: list, layout: SignalLayout) -> np.ndarray:
    """Decode a whole run of frames into an (N, n_signals) float matrix."""
    if not frames:
        return np.zeros((0, layout.n_signals))
    dlc = frames[0].dlc
    bits = _bit_matrix(frames, dlc).reshape(len(frames), dlc * 8).astype(np.uint64)
    out = np.empty((len(frames), layout.n_signals), dtype=np.float64)
    for spec in layout.specs:
        if spec.start_bit + spec.bit_length > dlc * 8:
            raise ValueError(
                f"signal {spec.signal_index} extends past the {dlc}-byte payload"
            )
        sl = bits[:, spec.start_bit : spec.start_bit + spec.bit_length]
        weights = (1 << np.arange(spec.bit_length - 1, -1, -1, dtype=np.uint64)).astype(
            np.uint64
        )
        out[:, spec.signal_index] = (sl * weights).sum(axis=1, dtype=np.uint64)
    return out


def encode_signal(payload: bytes, spec: SignalSpec, value: int) -> bytes:
    """Insert ``value`` into its bit field; all other bits untouched.

    Out-of-range values raise rather than truncate.
    """
    if not 0 <= value <= spec.max_value:
        raise ValueError(
            f"value {value} does not fit in {spec.bit_length} bits (max {spec.max_value})"
        )
    nbits = len(payload) * 8
    if spec.start_bit + spec.bit_length > nbits:
        raise ValueError(
            f"signal {spec.signal_index} extends past the {len(payload)}-byte payload"
        )
    shift = nbits - spec.start_bit - spec.bit_length
    mask = spec.max_value << shift
    word = (int.from_bytes(payload, "big") & ~mask) | (value << shift)
    return word.to_bytes(len(payload), "big")


@dataclass
class Normalizer:
    """Per-signal min/max scaling to the unit interval.

    ``apply`` does not clamp, so values outside the training range map
    outside [0, 1]. A constant signal (min == max) maps to 0.0 everywhere;
    ``invert`` is exact only where max > min.
    """

    vmin: np.ndarray
    vmax: np.ndarray

    @classmethod
    def fit(cls, series) -> "Normalizer":
        arr = np.asarray(series, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.shape[0] == 0:
            raise InsufficientDataError("cannot fit a normalizer on an empty series")
        return cls(vmin=arr.min(axis=0), vmax=arr.max(axis=0))

    def _span(self) -> np.ndarray:
        return self.vmax - self.vmin

    def apply(self, values) -> np.ndarray:
        arr = np.asarray(values, dtype=np.float64)
        span = self._span()
        safe = np.where(span > 0, span, 1.0)
        out = (arr - self.vmin) / safe
        return np.where(span > 0, out, 0.0)

    def invert(self, values) -> np.ndarray:
        arr = np.asarray(values, dtype=np.float64)
        return arr * self._span() + self.vmin

    def to_dict(self) -> dict:
        return {"min": self.vmin.tolist(), "max": self.vmax.tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> "Normalizer":
        return cls(
            vmin=np.asarray(doc["min"], dtype=np.float64),
            vmax=np.asarray(doc["max"], dtype=np.float64),
        )
