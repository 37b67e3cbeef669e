"""Datagram wire format: camera updates upstream, chunked LZ4-compressed
visibility bitmaps downstream.

Both packet types are little-endian and bit-exact for interop:

  CameraUpdatePacket (46 bytes)
    magic   4s   "DHRC"
    version u8   1
    type    u8   0x01
    frame   u32
    position 3 x f32
    target   3 x f32
    up       3 x f32

  VisibilityChunkPacket (20-byte header + payload, payload <= 1200 bytes)
    magic            4s  "DHRC"
    version          u8  1
    type             u8  0x02
    frame            u32
    chunk_index      u16
    chunk_count      u16
    uncompressed_len u32
    payload_len      u16

Concatenating every chunk payload of a frame (by chunk_index) restores one
LZ4 block of the bitmap's raw words. No retransmission, no FEC: a frame
with any chunk missing is simply never completed.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import lz4block
from .camera import CameraPose
from .errors import ContractViolation, WireDecodeError
from .visibility import VisibilityBitmap

MAGIC = b"DHRC"
VERSION = 1
TYPE_CAMERA = 0x01
TYPE_CHUNK = 0x02
CHUNK_PAYLOAD_MAX = 1200  # fits a 1500-byte MTU with headroom

_CAMERA = struct.Struct("<4sBBI9f")
_CHUNK = struct.Struct("<4sBBIHHIH")

CAMERA_PACKET_SIZE = _CAMERA.size
CHUNK_HEADER_SIZE = _CHUNK.size


@dataclass(frozen=True)
class CameraUpdatePacket:
    frame: int
    position: tuple[float, float, float]
    target: tuple[float, float, float]
    up: tuple[float, float, float]

    @classmethod
    def from_pose(cls, pose: CameraPose) -> "CameraUpdatePacket":
        f32 = lambda v: float(np.float32(v))
        return cls(frame=pose.frame_index,
                   position=tuple(f32(v) for v in pose.position),
                   target=tuple(f32(v) for v in pose.target),
                   up=tuple(f32(v) for v in pose.up))

    def to_pose(self) -> CameraPose:
        return CameraPose(position=np.asarray(self.position, dtype=np.float64),
                          target=np.asarray(self.target, dtype=np.float64),
                          up=np.asarray(self.up, dtype=np.float64),
                          frame_index=self.frame)

    def encode(self) -> bytes:
        return _CAMERA.pack(MAGIC, VERSION, TYPE_CAMERA, self.frame,
                            *self.position, *self.target, *self.up)


@dataclass(frozen=True)
class VisibilityChunkPacket:
    frame: int
    chunk_index: int
    chunk_count: int
    uncompressed_len: int
    payload: bytes

    def __post_init__(self):
        if not (0 <= self.chunk_index < self.chunk_count):
            raise ContractViolation("chunk_index must be < chunk_count")
        if len(self.payload) > CHUNK_PAYLOAD_MAX:
            raise ContractViolation(
                f"chunk payload {len(self.payload)} exceeds {CHUNK_PAYLOAD_MAX}")

    def encode(self) -> bytes:
        return _CHUNK.pack(MAGIC, VERSION, TYPE_CHUNK, self.frame,
                           self.chunk_index, self.chunk_count,
                           self.uncompressed_len, len(self.payload)) + self.payload


def packet_type(data: bytes) -> int:
    """Type byte of a raw datagram; raises WireDecodeError on junk."""
    if len(data) < 6 or data[:4] != MAGIC:
        raise WireDecodeError("bad magic")
    if data[4] != VERSION:
        raise WireDecodeError(f"unsupported version {data[4]}")
    return data[5]


def decode_camera(data: bytes) -> CameraUpdatePacket:
    if len(data) != _CAMERA.size:
        raise WireDecodeError(f"camera packet is {len(data)} bytes, expected {_CAMERA.size}")
    magic, version, ptype, frame, *floats = _CAMERA.unpack(data)
    if magic != MAGIC or version != VERSION or ptype != TYPE_CAMERA:
        raise WireDecodeError("not a camera update packet")
    return CameraUpdatePacket(frame=frame,
                              position=tuple(floats[0:3]),
                              target=tuple(floats[3:6]),
                              up=tuple(floats[6:9]))


def decode_chunk(data: bytes) -> VisibilityChunkPacket:
    if len(data) < _CHUNK.size:
        raise WireDecodeError("chunk packet shorter than its header")
    magic, version, ptype, frame, idx, cnt, ulen, plen = _CHUNK.unpack_from(data)
    if magic != MAGIC or version != VERSION or ptype != TYPE_CHUNK:
        raise WireDecodeError("not a visibility chunk packet")
    payload = data[_CHUNK.size:]
    if len(payload) != plen:
        raise WireDecodeError(f"chunk payload is {len(payload)} bytes, header says {plen}")
    return VisibilityChunkPacket(frame=frame, chunk_index=idx, chunk_count=cnt,
                                 uncompressed_len=ulen, payload=payload)


# ---------------------------------------------------------------------------
# bitmap codec

def compress_bitmap(bitmap: VisibilityBitmap) -> bytes:
    """One LZ4 block over the bitmap's raw words. Dimensions and frame
    number travel in the chunk headers, not in the stream."""
    return lz4block.compress_block(bitmap.to_bytes())


def decompress_bitmap(data: bytes, width: int, height: int, num_lights: int,
                      frame: int) -> VisibilityBitmap:
    from .visibility import words_per_pixel

    expected = width * height * words_per_pixel(num_lights) * 4
    raw = lz4block.decompress_block(data, expected)
    return VisibilityBitmap.from_bytes(raw, width, height, num_lights, frame)


def chunk_frame(compressed: bytes, frame: int) -> list[VisibilityChunkPacket]:
    """Split one compressed bitmap into datagram-sized chunks."""
    total = len(compressed)
    count = max(1, (total + CHUNK_PAYLOAD_MAX - 1) // CHUNK_PAYLOAD_MAX)
    return [
        VisibilityChunkPacket(
            frame=frame, chunk_index=i, chunk_count=count, uncompressed_len=total,
            payload=compressed[i * CHUNK_PAYLOAD_MAX:(i + 1) * CHUNK_PAYLOAD_MAX])
        for i in range(count)
    ]


def reassemble(packets: list[VisibilityChunkPacket]) -> bytes | None:
    """Rebuild a frame's compressed payload from its chunks, in any order,
    tolerating duplicates. None while chunks are missing."""
    if not packets:
        return None
    frame = packets[0].frame
    count = packets[0].chunk_count
    slots: list[bytes | None] = [None] * count
    for p in packets:
        if p.frame != frame:
            raise ContractViolation("reassemble() got packets from multiple frames")
        if p.chunk_count != count:
            raise WireDecodeError("inconsistent chunk_count within a frame")
        slots[p.chunk_index] = p.payload
    if any(s is None for s in slots):
        return None
    return b"".join(slots)  # type: ignore[arg-type]


class Reassembler:
    """Receive-side chunk table. Single-owner: only the receive path may
    mutate it. Incomplete frames older than a completed one are dropped,
    and partial state expires after ``timeout_ms`` to bound memory."""

    def __init__(self, timeout_ms: float = 250.0):
        self.timeout_ms = timeout_ms
        self._partial: dict[int, dict] = {}

    def add(self, packet: VisibilityChunkPacket, now_ms: float) -> tuple[int, bytes, int] | None:
        """Feed one chunk. Returns (frame, compressed, uncompressed_len)
        when this chunk completes its frame, else None."""
        entry = self._partial.get(packet.frame)
        if entry is None:
            entry = {
                "count": packet.chunk_count,
                "uncompressed_len": packet.uncompressed_len,
                "slots": {},
                "first_seen": now_ms,
            }
            self._partial[packet.frame] = entry
        if packet.chunk_count != entry["count"] or packet.uncompressed_len != entry["uncompressed_len"]:
            raise WireDecodeError(f"frame {packet.frame}: inconsistent chunk metadata")
        entry["slots"].setdefault(packet.chunk_index, packet.payload)
        if len(entry["slots"]) == entry["count"]:
            del self._partial[packet.frame]
            data = b"".join(entry["slots"][i] for i in range(entry["count"]))
            return packet.frame, data, entry["uncompressed_len"]
        return None

    def discard_older_than(self, frame: int) -> None:
        """Drop partial frames at or below ``frame`` (a newer complete
        frame supersedes them)."""
        for f in [f for f in self._partial if f <= frame]:
            del self._partial[f]

    def expire(self, now_ms: float) -> None:
        for f in [f for f, e in self._partial.items()
                  if now_ms - e["first_seen"] > self.timeout_ms]:
            del self._partial[f]

    @property
    def pending_frames(self) -> list[int]:
        return sorted(self._partial)
