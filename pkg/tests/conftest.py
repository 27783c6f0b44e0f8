"""Shared generators for randomized and end-to-end tests."""

from __future__ import annotations

import math

import numpy as np

from cantcn.canlog import CanFrame, CanLog, CANDUMP_FORMAT
from cantcn.sigmap import SignalLayout, SignalSpec, encode_signal


def random_frames(rng: np.random.Generator, n: int, *, can_id=None, dlc=None,
                  channel="can0") -> list:
    """Frames with microsecond-exact, non-decreasing timestamps."""
    micros = np.cumsum(rng.integers(0, 20000, size=n)) + 1_000_000
    frames = []
    for i in range(n):
        this_dlc = dlc if dlc is not None else int(rng.integers(0, 9))
        frames.append(
            CanFrame(
                timestamp=micros[i] / 1e6,
                channel=channel,
                can_id=int(rng.integers(0, 0x800)) if can_id is None else can_id,
                payload=bytes(rng.integers(0, 256, size=this_dlc, dtype=np.uint8)),
            )
        )
    return frames


def random_log(rng: np.random.Generator, n: int, **kw) -> CanLog:
    return CanLog(random_frames(rng, n, **kw), CANDUMP_FORMAT)


def three_signal_layout(msg_id=0x123) -> SignalLayout:
    """Three 16-bit signals over a 6-byte payload."""
    specs = [SignalSpec(msg_id, i, 16 * i, 16) for i in range(3)]
    return SignalLayout(msg_id, dlc=6, specs=specs, static_fields=[])


def correlated_sines(rng: np.random.Generator, n: int, *, period=150.0,
                     noise=0.01, phase0=0.0) -> np.ndarray:
    """Three correlated sinusoidal signals in [0, 1], shape (n, 3)."""
    theta = phase0 + 2 * math.pi * np.arange(n) / period
    clean = np.stack(
        [
            0.5 + 0.42 * np.sin(theta),
            0.5 + 0.42 * np.cos(theta),
            0.5 + 0.28 * np.sin(theta) + 0.12 * np.cos(2 * theta),
        ],
        axis=1,
    )
    noisy = clean + rng.normal(0.0, noise, size=clean.shape)
    return np.clip(noisy, 0.0, 1.0)


def encode_sines(series01: np.ndarray, layout: SignalLayout, *, msg_id=0x123,
                 dt=0.01, t0=1.0, channel="can0") -> CanLog:
    """Quantize unit-interval signals to 16-bit fields and emit frames."""
    n = series01.shape[0]
    frames = []
    for i in range(n):
        payload = bytes(layout.dlc)
        for spec in layout.specs:
            raw = int(round(series01[i, spec.signal_index] * spec.max_value))
            payload = encode_signal(payload, spec, raw)
        frames.append(
            CanFrame(
                timestamp=round(t0 + i * dt, 6),
                channel=channel,
                can_id=msg_id,
                payload=payload,
            )
        )
    return CanLog(frames, CANDUMP_FORMAT)
