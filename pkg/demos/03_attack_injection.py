#!/usr/bin/env python3
"""Inject each of the seven message-modification attacks into one trace.

Every variant mutates only the target signal's bits over the chosen range,
leaves timestamps untouched, and yields per-message ground-truth labels.
"""

from cantcn.attackgen import (
    ATTACK_KINDS,
    AttackRange,
    AttackSpec,
    inject_attack,
    plateau_preset,
)
from cantcn.canlog import CanFrame, CanLog, CANDUMP_FORMAT
from cantcn.sigmap import SignalLayout, SignalSpec, decode_signal_ints, encode_signal

spec8 = SignalSpec(0x42, 0, 0, 8)
layout = SignalLayout(0x42, 1, [spec8], [])
values = [10, 20, 30, 40, 50, 60, 70, 80]
frames = [
    CanFrame(i * 0.1, "can0", 0x42, encode_signal(bytes(1), spec8, v))
    for i, v in enumerate(values)
]
log = CanLog(frames, CANDUMP_FORMAT)
print(f"original signal: {values}")
print(f"attack range: messages 4..8 (1-based), param 5, seed 7\n")

for kind in ATTACK_KINDS:
    attack = AttackSpec(kind, 0x42, 0, AttackRange("index", 4, 8), param=5.0, rng_seed=7)
    mutated, truth = inject_attack(log, layout, attack)
    out = [decode_signal_ints(f, layout)[0] for f in mutated.frames]
    print(f"  {kind:22s} -> {out}  labels={truth.labels.tolist()}")

print("\n== plateau preset (freeze second half at the midpoint value) ==")
mutated, truth = plateau_preset(log, layout, 0x42, 0)
out = [decode_signal_ints(f, layout)[0] for f in mutated.frames]
print(f"  {out}  labels={truth.labels.tolist()}")

same_timing = [f.timestamp for f in mutated.frames] == [f.timestamp for f in frames]
print(f"\ntimestamps preserved exactly: {same_timing}")
