"""Packed per-pixel, per-light visibility bitmaps and the server-side
shadow trace that fills them.

Packing law: bit i of a pixel lives in 32-bit word ``i // 32`` at bit
position ``i % 32``; words are row-major, per-pixel contiguous, and
little-endian on disk and on the wire. Bits at positions >= num_lights
stay zero.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .camera import CameraPose, Intrinsics, camera_basis
from .errors import ContractViolation, WireDecodeError
from .scene import Scene

DUMP_HEADER = struct.Struct("<IIII")  # width, height, num_lights, frame


def words_per_pixel(num_lights: int) -> int:
    return (num_lights + 31) // 32


def full_mask_words(num_lights: int) -> np.ndarray:
    """Words with the low num_lights bits set (a fully lit pixel)."""
    words = words_per_pixel(num_lights)
    out = np.zeros(words, dtype=np.uint32)
    for w in range(words):
        bits = min(32, num_lights - 32 * w)
        out[w] = np.uint32(0xFFFFFFFF) if bits == 32 else np.uint32((1 << bits) - 1)
    return out


@dataclass
class VisibilityBitmap:
    width: int
    height: int
    num_lights: int
    frame_index: int
    data: np.ndarray  # (H, W, words) uint32

    def __post_init__(self):
        words = words_per_pixel(self.num_lights)
        if self.data.shape != (self.height, self.width, words):
            raise ContractViolation(
                f"bitmap data shape {self.data.shape} does not match "
                f"{self.height}x{self.width}x{words}")
        if self.data.dtype != np.uint32:
            raise ContractViolation("bitmap data must be uint32")

    @classmethod
    def zeros(cls, width: int, height: int, num_lights: int, frame_index: int = 0):
        return cls(width, height, num_lights, frame_index,
                   np.zeros((height, width, words_per_pixel(num_lights)), dtype=np.uint32))

    def _check(self, x: int, y: int, light: int):
        if not (0 <= x < self.width and 0 <= y < self.height):
            raise ContractViolation(f"pixel ({x}, {y}) outside {self.width}x{self.height}")
        if not (0 <= light < self.num_lights):
            raise ContractViolation(f"light {light} out of range (num_lights={self.num_lights})")

    def get_bit(self, x: int, y: int, light: int) -> bool:
        self._check(x, y, light)
        return bool((self.data[y, x, light // 32] >> np.uint32(light % 32)) & np.uint32(1))

    def set_bit(self, x: int, y: int, light: int, value: bool = True) -> None:
        self._check(x, y, light)
        mask = np.uint32(1) << np.uint32(light % 32)
        if value:
            self.data[y, x, light // 32] |= mask
        else:
            self.data[y, x, light // 32] &= ~mask

    def to_bytes(self) -> bytes:
        """Raw little-endian words, row-major, per-pixel contiguous."""
        return self.data.astype("<u4", copy=False).tobytes()

    @classmethod
    def from_bytes(cls, raw: bytes, width: int, height: int, num_lights: int,
                   frame_index: int) -> "VisibilityBitmap":
        words = words_per_pixel(num_lights)
        expected = width * height * words * 4
        if len(raw) != expected:
            raise WireDecodeError(
                f"bitmap payload is {len(raw)} bytes, expected {expected}")
        data = np.frombuffer(raw, dtype="<u4").reshape(height, width, words).astype(np.uint32)
        return cls(width, height, num_lights, frame_index, data)

    def crop(self, x0: int, y0: int, width: int, height: int) -> "VisibilityBitmap":
        if x0 < 0 or y0 < 0 or x0 + width > self.width or y0 + height > self.height:
            raise ContractViolation("crop region outside bitmap")
        return VisibilityBitmap(width, height, self.num_lights, self.frame_index,
                                self.data[y0:y0 + height, x0:x0 + width].copy())

    def display_region(self, intr: Intrinsics) -> "VisibilityBitmap":
        """Central display-resolution crop of a guard-enlarged bitmap."""
        return self.crop(intr.guard_x // 2, intr.guard_y // 2,
                         intr.display_width, intr.display_height)


def trace_visibility(scene: Scene, pose: CameraPose, intr: Intrinsics,
                     enlarged: bool = True) -> VisibilityBitmap:
    """Shadow-trace the per-light visibility bitmap over the (by default
    guard-enlarged) buffer. Pixels without a primary hit get every light
    bit set so stray reads fail toward fully lit."""
    bw, bh = intr.buffer_size(enlarged)
    x_axis, y_axis, z_axis = camera_basis(pose)
    n0, n1, n2, albedo = scene.kernel_shading()
    wp, _nrm, _alb, _slot, valid = kernels.trace_grid(
        bw, bh, intr.display_width, intr.display_height,
        intr.tan_half_x, intr.tan_half_y,
        pose.position, x_axis, y_axis, z_axis, intr.far,
        *scene.kernel_args(), n0, n1, n2, albedo)
    nl = scene.num_lights
    data = kernels.shadow_bits_grid(
        wp, valid, scene.light_positions, nl, max(words_per_pixel(nl), 1),
        full_mask_words(nl) if nl else np.zeros(1, dtype=np.uint32),
        *scene.kernel_args())
    if nl == 0:
        data = data[:, :, :0]
    return VisibilityBitmap(width=bw, height=bh, num_lights=nl,
                            frame_index=pose.frame_index, data=data)


def save_bitmap(path, bitmap: VisibilityBitmap) -> None:
    """Dump format: 16-byte header (width, height, num_lights, frame as
    little-endian u32) followed by the raw data words."""
    payload = DUMP_HEADER.pack(bitmap.width, bitmap.height,
                               bitmap.num_lights, bitmap.frame_index)
    Path(path).write_bytes(payload + bitmap.to_bytes())


def load_bitmap(path) -> VisibilityBitmap:
    raw = Path(path).read_bytes()
    if len(raw) < DUMP_HEADER.size:
        raise WireDecodeError(f"{path}: truncated bitmap dump")
    w, h, nl, frame = DUMP_HEADER.unpack_from(raw)
    return VisibilityBitmap.from_bytes(raw[DUMP_HEADER.size:], w, h, nl, frame)


def light_plane(gbuf, bitmap: VisibilityBitmap, light: int) -> np.ndarray:
    """Visualization of one light's visibility: each pixel shows the
    material color where the light is unobstructed, black elsewhere."""
    if (bitmap.height, bitmap.width) != (gbuf.height, gbuf.width):
        raise ContractViolation("bitmap and G-Buffer dimensions differ")
    word = bitmap.data[:, :, light // 32]
    bit = (word >> np.uint32(light % 32)) & np.uint32(1)
    visible = (bit == 1) & gbuf.valid
    return gbuf.albedo * visible[..., None]
