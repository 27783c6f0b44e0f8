#!/usr/bin/env python3
"""Reverse engineer signal boundaries from payload bit statistics.

Builds a trace whose 3-byte payload holds a constant header nibble, a
12-bit sensor value and an 8-bit rolling counter, then recovers exactly
that structure from per-bit flip rates alone.

The boundary rule assumes flip rates grow monotonically toward the LSB
inside one value, which holds for counter-like data (steps of +-1); the
sensor here is a slow random walk for that reason.
"""

import numpy as np

from cantcn.canlog import CanFrame
from cantcn.sigmap import (
    SignalLayout,
    SignalSpec,
    compute_bit_stats,
    decode_signals,
    encode_signal,
    infer_signal_layout,
)

# ground-truth layout used only to synthesize the trace
header = SignalSpec(0x310, 0, 0, 4)      # constant 0xA
sensor = SignalSpec(0x310, 1, 4, 12)     # random-walk sensor, 12 bits
counter = SignalSpec(0x310, 2, 16, 8)    # free-running counter
truth = SignalLayout(0x310, 3, [header, sensor, counter], [])

rng = np.random.default_rng(4)
frames = []
value = 2048
for i in range(4096):
    value = min(max(value + int(rng.choice([-1, 1])), 0), 4095)
    payload = bytes(3)
    payload = encode_signal(payload, header, 0xA)
    payload = encode_signal(payload, sensor, value)
    payload = encode_signal(payload, counter, i % 256)
    frames.append(CanFrame(i * 0.01, "can0", 0x310, payload))

stats = compute_bit_stats(frames)
print("== per-bit flip rates (bit 0 = MSB of byte 0) ==")
for byte in range(stats.dlc):
    row = " ".join(f"{stats.flip_rate[8 * byte + b]:.3f}" for b in range(8))
    print(f"  byte {byte}: {row}")
print("drops in the rate mark a new value's most significant bit")

layout = infer_signal_layout(stats)
print("\n== inferred layout ==")
for spec in layout.specs:
    print(f"  signal {spec.signal_index}: bits {spec.start_bit}.."
          f"{spec.start_bit + spec.bit_length - 1}")
for start, length in layout.static_fields:
    print(f"  static field: bits {start}..{start + length - 1}")

expected = [(s.start_bit, s.bit_length) for s in truth.specs if s.signal_index > 0]
got = [(s.start_bit, s.bit_length) for s in layout.specs]
print(f"\nrecovered {got}, constructed {expected} plus the constant header")

print("\n== decoding one frame with the inferred layout ==")
print(f"  payload {frames[100].payload.hex().upper()} ->",
      decode_signals(frames[100], layout))
