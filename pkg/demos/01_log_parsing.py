#!/usr/bin/env python3
"""Walk through the two supported log formats.

Parses a candump capture, partitions it per message ID, serializes it back
out byte-identically, and reads a SynCAN-style labeled signal CSV.
"""

from cantcn.canlog import parse_candump, parse_syncan_csv, split_by_id, write_candump

CANDUMP_TEXT = """\
(1600000000.000100) can0 123#0011223344556677
(1600000000.010200) can0 2A0#DEAD
(1600000000.020300) can0 123#0011223344556688

(1600000000.030400) can0 2A0#BEEF
"""

SYNCAN_TEXT = """\
Label,Time,ID,Signal1,Signal2,Signal3,Signal4
0,0.00,id2,0.50,0.25,0.125,
0,0.01,id3,0.90,0.10,,
0,0.02,id2,0.52,0.24,0.120,
1,0.03,id2,0.99,0.24,0.121,
"""

print("== candump ingestion ==")
log = parse_candump(CANDUMP_TEXT)
print(f"parsed {len(log)} frames, skipped {log.skipped_blanks} blank line(s)")
for frame in log:
    print(f"  t={frame.timestamp:.6f} id={frame.can_id:03X} "
          f"payload={frame.payload.hex().upper()}")

print("\n== per-ID partition ==")
for msg_id, frames in split_by_id(log).items():
    print(f"  ID {msg_id:03X}: {len(frames)} frames")

print("\n== round trip ==")
text = write_candump(log)
assert write_candump(parse_candump(text)) == text
print("parse -> write -> parse -> write is byte-identical")

print("\n== SynCAN-style CSV ==")
records = parse_syncan_csv(SYNCAN_TEXT)
for rec in records:
    flag = "ATTACK" if rec.label else "benign"
    print(f"  t={rec.timestamp:.2f} {rec.msg_id} {flag} signals={rec.signals}")
print("note: trailing empty cells mean the signal is absent for that ID")
