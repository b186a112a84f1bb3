"""Type-length-value primitives: big-endian u16 type, u32 length, value."""

from __future__ import annotations

import struct
from typing import Iterator, Optional

from .errors import BadFieldLength, MalformedField, OversizeField, TrailingBytes, Truncated

HEADER = struct.Struct(">HI")
MAX_LENGTH = 2**32 - 1


def pack(type_code: int, value: bytes) -> bytes:
    if len(value) > MAX_LENGTH:
        raise OversizeField(f"field 0x{type_code:04x} is {len(value)} bytes")
    return HEADER.pack(type_code, len(value)) + value


def pack_u8(type_code: int, value: int) -> bytes:
    return pack(type_code, struct.pack(">B", value))


def pack_u16(type_code: int, value: int) -> bytes:
    return pack(type_code, struct.pack(">H", value))


def pack_u64(type_code: int, value: int) -> bytes:
    return pack(type_code, struct.pack(">Q", value))


def pack_str(type_code: int, value: str) -> bytes:
    return pack(type_code, value.encode("utf-8"))


def check_size(what: str, value: bytes, size: Optional[int] = None, minimum: int = 0) -> bytes:
    if size is not None and len(value) != size:
        raise BadFieldLength(f"{what}: expected {size} bytes, got {len(value)}")
    if len(value) < minimum:
        raise BadFieldLength(f"{what}: expected at least {minimum} bytes, got {len(value)}")
    return value


def read_one(data: bytes, pos: int = 0) -> tuple[int, bytes, int]:
    """Read one TLV at ``pos``; returns ``(type, value, next_pos)``."""
    if len(data) - pos < HEADER.size:
        raise Truncated("incomplete TLV header")
    type_code, length = HEADER.unpack_from(data, pos)
    start = pos + HEADER.size
    if len(data) - start < length:
        raise Truncated(f"TLV 0x{type_code:04x} claims {length} bytes, {len(data) - start} left")
    return type_code, bytes(data[start : start + length]), start + length


def iter_tlvs(data: bytes) -> Iterator[tuple[int, bytes]]:
    pos = 0
    while pos < len(data):
        type_code, value, pos = read_one(data, pos)
        yield type_code, value


def unpack_single(data: bytes) -> tuple[int, bytes]:
    """Exactly one TLV, nothing after it."""
    type_code, value, end = read_one(data)
    if end != len(data):
        raise TrailingBytes(f"{len(data) - end} bytes after TLV 0x{type_code:04x}")
    return type_code, value


class FieldReader:
    """Sequential reader over the fields of one composite value."""

    def __init__(self, data: bytes, context: str) -> None:
        self.data = data
        self.pos = 0
        self.context = context

    def peek_type(self) -> Optional[int]:
        if len(self.data) - self.pos < HEADER.size:
            return None
        return HEADER.unpack_from(self.data, self.pos)[0]

    def take(self, type_code: int, size: Optional[int] = None, minimum: int = 0) -> bytes:
        got, value, self.pos = read_one(self.data, self.pos)
        if got != type_code:
            raise MalformedField(f"{self.context}: expected field 0x{type_code:04x}, got 0x{got:04x}")
        return check_size(f"{self.context} field 0x{type_code:04x}", value, size, minimum)

    def optional(self, type_code: int, size: Optional[int] = None, minimum: int = 0) -> Optional[bytes]:
        if self.peek_type() != type_code:
            return None
        return self.take(type_code, size, minimum)

    def take_u8(self, type_code: int) -> int:
        return self.take(type_code, 1)[0]

    def take_u16(self, type_code: int) -> int:
        return struct.unpack(">H", self.take(type_code, 2))[0]

    def take_u64(self, type_code: int) -> int:
        return struct.unpack(">Q", self.take(type_code, 8))[0]

    def take_str(self, type_code: int, minimum: int = 0) -> str:
        raw = self.take(type_code, minimum=minimum)
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedField(f"{self.context}: field 0x{type_code:04x} is not UTF-8") from exc

    def finish(self) -> None:
        if self.pos != len(self.data):
            raise TrailingBytes(f"{self.context}: {len(self.data) - self.pos} unparsed bytes")
