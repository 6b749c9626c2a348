"""Little-endian primitives for the package's binary containers.

All containers start with an 8-byte magic string and a uint32 format version.
Everything after that is little-endian; float arrays are raw IEEE-754 doubles
in C (row-major) order.
"""

from __future__ import annotations

import struct
from typing import BinaryIO

import numpy as np


class FormatError(ValueError):
    """Base class for unreadable container files."""


class CorruptHeaderError(FormatError):
    pass


class TruncatedFileError(FormatError):
    pass


class VersionMismatchError(FormatError):
    pass


class Writer:
    def __init__(self, fh: BinaryIO):
        self.fh = fh

    def magic(self, magic: bytes, version: int) -> None:
        assert len(magic) == 8
        self.fh.write(magic)
        self.u32(version)

    def u32(self, v: int) -> None:
        self.fh.write(struct.pack("<I", int(v)))

    def u64(self, v: int) -> None:
        self.fh.write(struct.pack("<Q", int(v)))

    def f64(self, v: float) -> None:
        self.fh.write(struct.pack("<d", float(v)))

    def text(self, s: str) -> None:
        raw = s.encode("utf-8")
        self.u32(len(raw))
        self.fh.write(raw)

    def raw(self, data: bytes) -> None:
        self.fh.write(data)

    def array(self, a: np.ndarray, dtype: str = "<f8") -> None:
        self.fh.write(np.ascontiguousarray(a, dtype=dtype).tobytes())


class Reader:
    def __init__(self, data: bytes, what: str = "file"):
        self.data = memoryview(data)
        self.pos = 0
        self.what = what

    def _take(self, n: int, header: bool) -> memoryview:
        if self.pos + n > len(self.data):
            err = CorruptHeaderError if header else TruncatedFileError
            raise err(f"{self.what}: unexpected end of data at byte {self.pos} (need {n} more)")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def magic(self, magic: bytes, version: int) -> int:
        got = bytes(self._take(8, True))
        if got != magic:
            raise CorruptHeaderError(f"{self.what}: bad magic {got!r}, expected {magic!r}")
        v = self.u32()
        if v != version:
            raise VersionMismatchError(f"{self.what}: format version {v}, this build reads {version}")
        return v

    def u32(self, header: bool = True) -> int:
        return struct.unpack("<I", self._take(4, header))[0]

    def u64(self, header: bool = True) -> int:
        return struct.unpack("<Q", self._take(8, header))[0]

    def f64(self, header: bool = True) -> float:
        return struct.unpack("<d", self._take(8, header))[0]

    def text(self, limit: int = 1 << 20) -> str:
        n = self.u32()
        if n > limit:
            raise CorruptHeaderError(f"{self.what}: implausible string length {n}")
        try:
            return bytes(self._take(n, True)).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CorruptHeaderError(f"{self.what}: undecodable text field") from exc

    def array(self, shape: tuple, dtype: str = "<f8", header: bool = False) -> np.ndarray:
        count = int(np.prod(shape)) if shape else 1
        itemsize = np.dtype(dtype).itemsize
        raw = self._take(count * itemsize, header)
        return np.frombuffer(raw, dtype=dtype).astype(dtype.replace("<", "="), copy=True).reshape(shape)

    def raw(self, n: int, header: bool = False) -> bytes:
        return bytes(self._take(n, header))

    def done(self) -> None:
        if self.pos != len(self.data):
            raise CorruptHeaderError(f"{self.what}: {len(self.data) - self.pos} trailing bytes")
