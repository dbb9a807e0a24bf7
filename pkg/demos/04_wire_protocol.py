"""Control packets on the wire.

One compact packet per breathing cycle carries everything a client needs:
volume bounds, the PV control constants, force coefficients and elasticity
coefficients.  The codec is bit-exact, little-endian, CRC-protected.
"""

import numpy as np

from breathsync import ControlPacketObject, decode_cpo, encode_cpo
from breathsync.protocol import (
    ChecksumMismatch,
    Truncated,
    cpo_wire_length,
    decode_message,
)

cpo = ControlPacketObject(
    sequence=42,
    cycle_start_ns=12_500_000_000,
    flags=0,
    frc=2.4, tv=0.5, pr=20.0, rate=12.0,
    cp=np.array([0.0, 0.25, 0.5, 0.75, 1.0]),
    f=np.array([1.7724538509055159, 1.0233267079464885, 0.0, 0.0]),
    t=np.array([0.02, 0.005, 0.005, 0.005]))

wire = encode_cpo(cpo)
print(f"encoded {len(wire)} bytes "
      f"(header 64 + 8*{cpo.cp.size + cpo.f.size + cpo.t.size} + crc 4 = "
      f"{cpo_wire_length(cpo.cp.size, cpo.f.size, cpo.t.size)})")

# hex dump, 16 bytes per row
for row in range(0, len(wire), 16):
    chunk = wire[row:row + 16]
    print(f"  {row:04x}  {chunk.hex(' ')}")

back = decode_cpo(wire)
print("\nround trip equal:", back == cpo)

# -- every corruption is caught, none is fatal --------------------------------

flipped = bytearray(wire)
flipped[80] ^= 0x01
try:
    decode_cpo(bytes(flipped))
except ChecksumMismatch as exc:
    print("flipped payload bit ->", exc)

try:
    decode_cpo(wire[:30])
except Truncated as exc:
    print("truncated packet    ->", exc)

try:
    decode_message(b"random junk from the network")
except Exception as exc:
    print("junk datagram       ->", type(exc).__name__, "-", exc)
