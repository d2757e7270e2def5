"""Packed bit sequences (LSB-first within each byte) and their file format.

File layout: an 8-byte little-endian unsigned bit count followed by
``ceil(count / 8)`` packed bytes whose trailing pad bits are zero.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

HEADER_BYTES = 8


class BitStream:
    __slots__ = ("data", "length")

    def __init__(self, data, length=None):
        data = np.frombuffer(bytes(data), dtype=np.uint8) if isinstance(data, (bytes, bytearray, memoryview)) \
            else np.ascontiguousarray(data, dtype=np.uint8)
        if length is None:
            length = data.size * 8
        length = int(length)
        nbytes = (length + 7) // 8
        if length < 0 or data.size < nbytes:
            raise ValueError("length exceeds the available bytes")
        data = data[:nbytes].copy()
        if length % 8:
            data[-1] &= (1 << (length % 8)) - 1
        self.data = data
        self.length = length

    @classmethod
    def from_bits(cls, bits) -> "BitStream":
        b = np.asarray(bits, dtype=np.uint8).ravel()
        if b.size and b.max() > 1:
            raise ValueError("bits must be 0 or 1")
        return cls(np.packbits(b, bitorder="little"), b.size)

    @classmethod
    def zeros(cls, length) -> "BitStream":
        return cls(np.zeros((length + 7) // 8, np.uint8), length)

    def to_bits(self) -> np.ndarray:
        return np.unpackbits(self.data, count=self.length, bitorder="little")

    def __len__(self):
        return self.length

    def __eq__(self, other):
        if not isinstance(other, BitStream):
            return NotImplemented
        return self.length == other.length and np.array_equal(self.data, other.data)

    def __xor__(self, other):
        if self.length != other.length:
            raise ValueError("length mismatch")
        return BitStream(self.data ^ other.data, self.length)

    def __getitem__(self, item):
        if isinstance(item, slice):
            return BitStream.from_bits(self.to_bits()[item])
        return int(self.to_bits()[item])

    def __repr__(self):
        head = "".join(map(str, self.to_bits()[:32]))
        return f"BitStream(len={self.length}, bits={head}{'...' if self.length > 32 else ''})"

    def tobytes(self) -> bytes:
        return self.data.tobytes()

    @staticmethod
    def concat(streams) -> "BitStream":
        streams = list(streams)
        if all(s.length % 8 == 0 for s in streams[:-1]):
            data = np.concatenate([s.data for s in streams]) if streams else np.zeros(0, np.uint8)
            return BitStream(data, sum(s.length for s in streams))
        return BitStream.from_bits(np.concatenate([s.to_bits() for s in streams]))


def write_bits(stream: BitStream, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        fh.write(np.uint64(stream.length).astype("<u8").tobytes())
        fh.write(stream.tobytes())
    return path


def read_bits(path) -> BitStream:
    raw = Path(path).read_bytes()
    if len(raw) < HEADER_BYTES:
        raise ValueError("truncated bit file")
    length = int(np.frombuffer(raw[:HEADER_BYTES], dtype="<u8")[0])
    body = np.frombuffer(raw[HEADER_BYTES:], dtype=np.uint8)
    if body.size != (length + 7) // 8:
        raise ValueError("bit file body does not match its length header")
    return BitStream(body, length)


def export_ascii(stream: BitStream, path, line_width=0) -> Path:
    """ASCII '0'/'1' text, the input form most external test suites read."""
    text = (stream.to_bits() + ord("0")).astype(np.uint8).tobytes()
    if line_width:
        text = b"\n".join(text[i:i + line_width] for i in range(0, len(text), line_width))
    Path(path).write_bytes(text + b"\n")
    return Path(path)


def export_binary_msb(stream: BitStream, path) -> Path:
    """Headerless bytes, MSB-first, as read by the reference NIST suite in binary mode.

    A trailing partial byte is zero padded.
    """
    Path(path).write_bytes(np.packbits(stream.to_bits(), bitorder="big").tobytes())
    return Path(path)
