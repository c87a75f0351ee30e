"""Big-endian, length-prefixed binary layouts shared by every canonical encoding."""

from __future__ import annotations

import struct
from typing import List

from .errors import MalformedEncoding


class ByteWriter:
    def __init__(self) -> None:
        self._parts: List[bytes] = []

    def raw(self, data: bytes) -> "ByteWriter":
        self._parts.append(bytes(data))
        return self

    def u8(self, value: int) -> "ByteWriter":
        return self.raw(struct.pack(">B", value))

    def u16(self, value: int) -> "ByteWriter":
        return self.raw(struct.pack(">H", value))

    def u32(self, value: int) -> "ByteWriter":
        return self.raw(struct.pack(">I", value))

    def u64(self, value: int) -> "ByteWriter":
        return self.raw(struct.pack(">Q", value))

    def blob16(self, data: bytes) -> "ByteWriter":
        if len(data) > 0xFFFF:
            raise ValueError(f"Field of {len(data)} bytes does not fit a 16-bit length")
        return self.u16(len(data)).raw(data)

    def blob32(self, data: bytes) -> "ByteWriter":
        return self.u32(len(data)).raw(data)

    def getvalue(self) -> bytes:
        return b"".join(self._parts)


class ByteReader:
    def __init__(self, data: bytes, *, what: str = "message") -> None:
        self.data = bytes(data)
        self.pos = 0
        self.what = what

    @property
    def remaining(self) -> int:
        return len(self.data) - self.pos

    def take(self, length: int) -> bytes:
        if length < 0 or self.pos + length > len(self.data):
            raise MalformedEncoding(
                f"Truncated {self.what}: needed {length} bytes at offset {self.pos}, "
                f"{self.remaining} available",
                self.pos,
            )
        chunk = self.data[self.pos : self.pos + length]
        self.pos += length
        return chunk

    def u8(self) -> int:
        return struct.unpack(">B", self.take(1))[0]

    def u16(self) -> int:
        return struct.unpack(">H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack(">I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack(">Q", self.take(8))[0]

    def blob16(self) -> bytes:
        return self.take(self.u16())

    def blob32(self) -> bytes:
        return self.take(self.u32())

    def expect(self, literal: bytes) -> None:
        start = self.pos
        found = self.take(len(literal))
        if found != literal:
            raise MalformedEncoding(
                f"Expected {literal!r} at offset {start} of {self.what}, found {found!r}",
                start,
            )

    def expect_end(self) -> None:
        if self.remaining:
            raise MalformedEncoding(
                f"{self.remaining} trailing bytes after {self.what} at offset {self.pos}",
                self.pos,
            )
