"""The ``.glvc`` container.

Header (little-endian, 13 bytes)::

    b"GLVC" | u8 version=1 | u16 width | u16 height | u16 frame_count | u8 qp | u8 reserved

followed by one chunk per latent slot: ``u32 z_len, z bytes, u32 y_len, y bytes``.
The slot count is fixed by the header: ``frame_count = 4K + 1`` implies K + 1.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

MAGIC = b"GLVC"
VERSION = 1
_HEADER = struct.Struct("<4sBHHHBB")
HEADER_SIZE = _HEADER.size


class BitstreamError(ValueError):
    pass


def slots_for_frames(frame_count: int) -> int:
    if frame_count < 1 or (frame_count - 1) % 4:
        raise BitstreamError(f"frame_count {frame_count} is not of the form 4K+1")
    return (frame_count - 1) // 4 + 1


@dataclass
class Bitstream:
    width: int
    height: int
    frame_count: int
    qp: int
    chunks: list[tuple[bytes, bytes]] = field(default_factory=list)
    version: int = VERSION

    def validate(self) -> None:
        if self.version != VERSION:
            raise BitstreamError(f"unsupported version {self.version}")
        if not 0 <= self.qp <= 31:
            raise BitstreamError(f"qp {self.qp} outside [0, 31]")
        if self.width % 8 or self.height % 8 or self.width <= 0 or self.height <= 0:
            raise BitstreamError(f"dimensions {self.width}x{self.height} not positive multiples of 8")
        expected = slots_for_frames(self.frame_count)
        if len(self.chunks) != expected:
            raise BitstreamError(
                f"frame_count {self.frame_count} needs {expected} latent chunks, found {len(self.chunks)}"
            )

    @property
    def num_slots(self) -> int:
        return slots_for_frames(self.frame_count)

    def payload_bits(self) -> list[tuple[int, int]]:
        """Per-slot (z bits, y bits) of the coded payloads, framing excluded."""
        return [(8 * len(z), 8 * len(y)) for z, y in self.chunks]


def serialize(bs: Bitstream) -> bytes:
    bs.validate()
    parts = [_HEADER.pack(MAGIC, bs.version, bs.width, bs.height, bs.frame_count, bs.qp, 0)]
    for z, y in bs.chunks:
        parts.append(struct.pack("<I", len(z)))
        parts.append(z)
        parts.append(struct.pack("<I", len(y)))
        parts.append(y)
    return b"".join(parts)


def deserialize(data: bytes) -> Bitstream:
    if len(data) < HEADER_SIZE:
        raise BitstreamError("file shorter than the header")
    magic, version, width, height, frames, qp, _ = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise BitstreamError(f"bad magic {magic!r}")
    if version != VERSION:
        raise BitstreamError(f"unsupported version {version}")
    expected = slots_for_frames(frames)
    pos = HEADER_SIZE
    chunks = []
    for slot in range(expected):
        pieces = []
        for what in ("z", "y"):
            if pos + 4 > len(data):
                raise BitstreamError(
                    f"slot {slot}: missing {what} chunk (header promises {expected} slots, stream holds {slot})"
                )
            (n,) = struct.unpack_from("<I", data, pos)
            pos += 4
            if pos + n > len(data):
                raise BitstreamError(f"slot {slot}: {what} payload truncated")
            pieces.append(bytes(data[pos : pos + n]))
            pos += n
        chunks.append((pieces[0], pieces[1]))
    if pos != len(data):
        raise BitstreamError(f"{len(data) - pos} trailing bytes after slot {expected - 1} (chunk-count mismatch)")
    bs = Bitstream(width, height, frames, qp, chunks, version)
    bs.validate()
    return bs
