"""Binary codecs for control packets and clock-sync messages.

All multi-byte fields are little-endian; floats are IEEE-754 binary64; the
trailing checksum is CRC-32 (IEEE 802.3 polynomial, reflected, init and
final xor 0xFFFFFFFF) over every preceding byte.

Control packet, 64-byte fixed header then vectors then CRC:

    magic "CPO1"   4s   | version u16 = 1 | flags u16
    sequence u64        | cycle_start_ns i64
    frc f64 | tv f64 | pr f64 | rate f64
    n_cp u16 | n_f u16 | n_t u16 | pad u16 = 0
    cp f64[n_cp] | f f64[n_f] | t f64[n_t]
    crc32 u32

    total length = 64 + 8 * (n_cp + n_f + n_t) + 4

Sync message, 36 bytes:

    magic "SYN1" 4s | version u16 = 1 | kind u8 | pad u8
    t0 i64 | t1 i64 | t2 i64 | crc32 u32
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from enum import IntEnum
from zlib import crc32

import numpy as np

CPO_MAGIC = b"CPO1"
SYNC_MAGIC = b"SYN1"
WIRE_VERSION = 1
MAX_VECTOR_LEN = 65535

FLAG_PARAM_CHANGE = 0x0001

_CPO_HEADER = struct.Struct("<4sHHQqddddHHHH")
_SYNC_BODY = struct.Struct("<4sHBBqqq")
_CRC = struct.Struct("<I")

CPO_HEADER_LEN = _CPO_HEADER.size          # 64
SYNC_MESSAGE_LEN = _SYNC_BODY.size + 4     # 36


def cpo_wire_length(n_cp: int, n_f: int, n_t: int) -> int:
    """Exact encoded length for the given vector counts."""
    return CPO_HEADER_LEN + 8 * (n_cp + n_f + n_t) + 4

_U64_MAX = 2 ** 64 - 1
_I64_MIN, _I64_MAX = -(2 ** 63), 2 ** 63 - 1


class ProtocolError(Exception):
    """Base for every encode/decode failure."""


class EncodeError(ProtocolError):
    """The object violates wire invariants and cannot be serialized."""


class DecodeError(ProtocolError):
    """Base for every rejection of an incoming byte sequence."""


class BadMagic(DecodeError):
    pass


class UnsupportedVersion(DecodeError):
    pass


class Truncated(DecodeError):
    pass


class TrailingData(DecodeError):
    pass


class ChecksumMismatch(DecodeError):
    pass


class NonFiniteField(DecodeError):
    pass


class InvariantViolation(DecodeError):
    pass


class SyncKind(IntEnum):
    PING = 1
    PONG = 2


@dataclass
class ControlPacketObject:
    """One cycle's worth of breathing and deformation parameters."""

    sequence: int
    cycle_start_ns: int
    flags: int
    frc: float
    tv: float
    pr: float
    rate: float
    cp: np.ndarray = field(repr=False)
    f: np.ndarray = field(repr=False)
    t: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.cp = np.asarray(self.cp, dtype=float)
        self.f = np.asarray(self.f, dtype=float)
        self.t = np.asarray(self.t, dtype=float)

    def check(self) -> list[str]:
        """Invariant violations as human-readable strings (empty if valid)."""
        problems = []
        if not (0 <= self.sequence <= _U64_MAX):
            problems.append("sequence outside u64 range")
        if not (_I64_MIN <= self.cycle_start_ns <= _I64_MAX):
            problems.append("cycle_start_ns outside i64 range")
        if not (0 <= self.flags <= 0xFFFF):
            problems.append("flags outside u16 range")
        for name in ("frc", "tv", "pr", "rate"):
            v = getattr(self, name)
            if not math.isfinite(v):
                problems.append(f"{name} is not finite")
            elif v <= 0.0:
                problems.append(f"{name} must be positive")
        if self.cp.size == 0:
            problems.append("cp must be non-empty")
        for name in ("cp", "f", "t"):
            vec = getattr(self, name)
            if vec.size > MAX_VECTOR_LEN:
                problems.append(f"{name} exceeds {MAX_VECTOR_LEN} entries")
            if not np.all(np.isfinite(vec)):
                problems.append(f"{name} contains a non-finite entry")
        return problems

    @property
    def param_change(self) -> bool:
        return bool(self.flags & FLAG_PARAM_CHANGE)

    def __eq__(self, other):
        if not isinstance(other, ControlPacketObject):
            return NotImplemented
        return (self.sequence == other.sequence
                and self.cycle_start_ns == other.cycle_start_ns
                and self.flags == other.flags
                and (self.frc, self.tv, self.pr, self.rate)
                == (other.frc, other.tv, other.pr, other.rate)
                and np.array_equal(self.cp, other.cp)
                and np.array_equal(self.f, other.f)
                and np.array_equal(self.t, other.t))


@dataclass(frozen=True)
class SyncMessage:
    """Ping/pong carrier for the four-timestamp delay exchange.

    t0 is the requester's send time; t1 and t2 are the responder's receive
    and send times (zero in a PING).
    """

    kind: SyncKind
    t0: int
    t1: int = 0
    t2: int = 0

    def check(self) -> list[str]:
        problems = []
        if self.kind not in (SyncKind.PING, SyncKind.PONG):
            problems.append(f"unknown sync kind {self.kind}")
        for name in ("t0", "t1", "t2"):
            v = getattr(self, name)
            if not (0 <= v <= _I64_MAX):
                problems.append(f"{name} must be a non-negative i64")
        if self.kind == SyncKind.PING and (self.t1 != 0 or self.t2 != 0):
            problems.append("PING must carry t1 = t2 = 0")
        return problems


def _require_valid_for_encode(problems: list[str]) -> None:
    if problems:
        raise EncodeError("; ".join(problems))


def encode_cpo(cpo: ControlPacketObject) -> bytes:
    """Serialize a control packet; raises EncodeError on invariant violations."""
    _require_valid_for_encode(cpo.check())
    header = _CPO_HEADER.pack(
        CPO_MAGIC, WIRE_VERSION, cpo.flags, cpo.sequence, cpo.cycle_start_ns,
        cpo.frc, cpo.tv, cpo.pr, cpo.rate,
        cpo.cp.size, cpo.f.size, cpo.t.size, 0)
    body = (header
            + cpo.cp.astype("<f8").tobytes()
            + cpo.f.astype("<f8").tobytes()
            + cpo.t.astype("<f8").tobytes())
    return body + _CRC.pack(crc32(body))


def decode_cpo(buf: bytes) -> ControlPacketObject:
    """Parse and validate a control packet; never raises anything but DecodeError."""
    buf = bytes(buf)
    if len(buf) < 4:
        raise Truncated(f"{len(buf)} bytes is too short for a magic header")
    if buf[:4] != CPO_MAGIC:
        raise BadMagic(f"expected {CPO_MAGIC!r}, got {buf[:4]!r}")
    if len(buf) < CPO_HEADER_LEN:
        raise Truncated(f"{len(buf)} bytes is shorter than the fixed header")
    (_, version, flags, sequence, cycle_start_ns,
     frc, tv, pr, rate, n_cp, n_f, n_t, _pad) = _CPO_HEADER.unpack_from(buf)
    if version != WIRE_VERSION:
        raise UnsupportedVersion(f"version {version} is not supported")
    expected = CPO_HEADER_LEN + 8 * (n_cp + n_f + n_t) + 4
    if len(buf) < expected:
        raise Truncated(f"counts imply {expected} bytes, got {len(buf)}")
    if len(buf) > expected:
        raise TrailingData(f"counts imply {expected} bytes, got {len(buf)}")
    (crc_stored,) = _CRC.unpack_from(buf, expected - 4)
    crc_actual = crc32(buf[:expected - 4])
    if crc_stored != crc_actual:
        raise ChecksumMismatch(
            f"stored {crc_stored:#010x}, computed {crc_actual:#010x}")
    offset = CPO_HEADER_LEN
    cp = np.frombuffer(buf, dtype="<f8", count=n_cp, offset=offset).copy()
    offset += 8 * n_cp
    f = np.frombuffer(buf, dtype="<f8", count=n_f, offset=offset).copy()
    offset += 8 * n_f
    t = np.frombuffer(buf, dtype="<f8", count=n_t, offset=offset).copy()
    cpo = ControlPacketObject(sequence=sequence, cycle_start_ns=cycle_start_ns,
                              flags=flags, frc=frc, tv=tv, pr=pr, rate=rate,
                              cp=cp, f=f, t=t)
    problems = cpo.check()
    non_finite = [p for p in problems if "finite" in p]
    if non_finite:
        raise NonFiniteField("; ".join(non_finite))
    if problems:
        raise InvariantViolation("; ".join(problems))
    return cpo


def encode_sync(msg: SyncMessage) -> bytes:
    """Serialize a sync message (fixed 36 bytes)."""
    _require_valid_for_encode(msg.check())
    body = _SYNC_BODY.pack(SYNC_MAGIC, WIRE_VERSION, int(msg.kind), 0,
                           msg.t0, msg.t1, msg.t2)
    return body + _CRC.pack(crc32(body))


def decode_sync(buf: bytes) -> SyncMessage:
    """Parse and validate a sync message."""
    buf = bytes(buf)
    if len(buf) < 4:
        raise Truncated(f"{len(buf)} bytes is too short for a magic header")
    if buf[:4] != SYNC_MAGIC:
        raise BadMagic(f"expected {SYNC_MAGIC!r}, got {buf[:4]!r}")
    if len(buf) < SYNC_MESSAGE_LEN:
        raise Truncated(f"sync messages are {SYNC_MESSAGE_LEN} bytes, got {len(buf)}")
    if len(buf) > SYNC_MESSAGE_LEN:
        raise TrailingData(f"sync messages are {SYNC_MESSAGE_LEN} bytes, got {len(buf)}")
    _, version, kind_raw, _pad, t0, t1, t2 = _SYNC_BODY.unpack_from(buf)
    if version != WIRE_VERSION:
        raise UnsupportedVersion(f"version {version} is not supported")
    (crc_stored,) = _CRC.unpack_from(buf, _SYNC_BODY.size)
    crc_actual = crc32(buf[:_SYNC_BODY.size])
    if crc_stored != crc_actual:
        raise ChecksumMismatch(
            f"stored {crc_stored:#010x}, computed {crc_actual:#010x}")
    try:
        kind = SyncKind(kind_raw)
    except ValueError as exc:
        raise InvariantViolation(f"unknown sync kind {kind_raw}") from exc
    msg = SyncMessage(kind=kind, t0=t0, t1=t1, t2=t2)
    problems = msg.check()
    if problems:
        raise InvariantViolation("; ".join(problems))
    return msg


def decode_message(buf: bytes) -> ControlPacketObject | SyncMessage:
    """Route an incoming datagram to the right decoder by its magic."""
    buf = bytes(buf)
    if len(buf) >= 4 and buf[:4] == SYNC_MAGIC:
        return decode_sync(buf)
    return decode_cpo(buf)
