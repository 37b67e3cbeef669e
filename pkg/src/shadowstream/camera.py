"""Camera poses, projection matrices and per-pixel ray generation.

Conventions, fixed once and used everywhere:

* Right-handed world space, camera looks along -z in its own frame.
* Screen-space y grows downward; continuous pixel coordinate (x, y) has
  pixel (i, j)'s center at (i + 0.5, j + 0.5).
* The guard band adds ``guard_x`` extra columns and ``guard_y`` extra rows,
  split evenly on both sides. The enlarged image plane keeps the display's
  pixel pitch, so display pixel (u, v) and enlarged pixel
  (u + guard_x/2, v + guard_y/2) see the identical ray.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation

Vec3 = np.ndarray
ViewProjection = np.ndarray  # 4x4, row-major, world -> clip


@dataclass(frozen=True)
class CameraPose:
    """Camera state for one frame: position, look-at target and up hint."""

    position: Vec3
    target: Vec3
    up: Vec3
    frame_index: int = 0

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=np.float64))
        object.__setattr__(self, "target", np.asarray(self.target, dtype=np.float64))
        object.__setattr__(self, "up", np.asarray(self.up, dtype=np.float64))
        if self.frame_index < 0:
            raise ContractViolation("frame_index must be >= 0")

    def quantized(self) -> "CameraPose":
        """Round components through float32, matching the sync wire format.

        float32 -> float64 widening is exact, so a quantized pose survives
        an encode/decode round trip bit-for-bit.
        """
        q = lambda v: np.asarray(v, dtype=np.float32).astype(np.float64)
        return CameraPose(q(self.position), q(self.target), q(self.up), self.frame_index)


@dataclass(frozen=True)
class Intrinsics:
    """Projection parameters. ``vertical_fov`` spans the display region only;
    guard pixels extend the field of view at constant pixel pitch."""

    vertical_fov: float  # radians
    near: float
    far: float
    display_width: int
    display_height: int
    guard_x: int = 0
    guard_y: int = 0

    def __post_init__(self):
        if not (0.0 < self.vertical_fov < math.pi):
            raise ContractViolation("vertical_fov must be in (0, pi)")
        if not (0.0 < self.near < self.far):
            raise ContractViolation("need 0 < near < far")
        if self.display_width <= 0 or self.display_height <= 0:
            raise ContractViolation("display dimensions must be positive")
        if self.guard_x < 0 or self.guard_y < 0 or self.guard_x % 2 or self.guard_y % 2:
            raise ContractViolation("guard_x and guard_y must be even and >= 0")

    @property
    def buffer_width(self) -> int:
        return self.display_width + self.guard_x

    @property
    def buffer_height(self) -> int:
        return self.display_height + self.guard_y

    def buffer_size(self, enlarged: bool) -> tuple[int, int]:
        if enlarged:
            return self.buffer_width, self.buffer_height
        return self.display_width, self.display_height

    @property
    def tan_half_y(self) -> float:
        return math.tan(0.5 * self.vertical_fov)

    @property
    def tan_half_x(self) -> float:
        return self.tan_half_y * self.display_width / self.display_height


def camera_basis(pose: CameraPose) -> tuple[Vec3, Vec3, Vec3]:
    """Orthonormal camera axes (x right, y up, z backward)."""
    fwd = pose.target - pose.position
    norm = np.linalg.norm(fwd)
    if norm < 1e-12:
        raise ContractViolation("degenerate pose: target equals position")
    fwd = fwd / norm
    x_axis = np.cross(fwd, pose.up)
    xnorm = np.linalg.norm(x_axis)
    if xnorm < 1e-6:
        raise ContractViolation("degenerate pose: up parallel to view direction")
    x_axis = x_axis / xnorm
    z_axis = -fwd
    y_axis = np.cross(z_axis, x_axis)
    return x_axis, y_axis, z_axis


def view_matrix(pose: CameraPose) -> np.ndarray:
    x_axis, y_axis, z_axis = camera_basis(pose)
    view = np.eye(4, dtype=np.float64)
    view[0, :3] = x_axis
    view[1, :3] = y_axis
    view[2, :3] = z_axis
    view[0, 3] = -np.dot(x_axis, pose.position)
    view[1, 3] = -np.dot(y_axis, pose.position)
    view[2, 3] = -np.dot(z_axis, pose.position)
    return view


def view_projection(pose: CameraPose, intr: Intrinsics, enlarged: bool = False) -> ViewProjection:
    """World -> clip matrix. When ``enlarged``, the image-plane half extents
    grow by (W+guard_x)/W and (H+guard_y)/H so the central display region
    projects identically to the display-only matrix."""
    tan_x = intr.tan_half_x
    tan_y = intr.tan_half_y
    if enlarged:
        tan_x = tan_x * intr.buffer_width / intr.display_width
        tan_y = tan_y * intr.buffer_height / intr.display_height
    n, f = intr.near, intr.far
    proj = np.zeros((4, 4), dtype=np.float64)
    proj[0, 0] = 1.0 / tan_x
    proj[1, 1] = 1.0 / tan_y
    proj[2, 2] = (f + n) / (n - f)
    proj[2, 3] = 2.0 * f * n / (n - f)
    proj[3, 2] = -1.0
    return proj @ view_matrix(pose)


def project_to_pixel(
    vp: ViewProjection, world: Vec3, buffer_w: int, buffer_h: int
) -> tuple[float, float, float] | None:
    """Continuous pixel coordinates of a world point, or None when the
    point is at or behind the camera plane (clip w <= 0). Points outside
    the buffer still project; bounds are the caller's concern."""
    world = np.asarray(world, dtype=np.float64)
    clip = vp[:, :3] @ world + vp[:, 3]
    w = clip[3]
    if w <= 0.0:
        return None
    ndc = clip[:3] / w
    px = (ndc[0] + 1.0) * 0.5 * buffer_w
    py = (1.0 - ndc[1]) * 0.5 * buffer_h
    return px, py, ndc[2]


def primary_ray(
    pose: CameraPose,
    intr: Intrinsics,
    pixel_x: float,
    pixel_y: float,
    enlarged: bool = False,
) -> tuple[Vec3, Vec3]:
    """Ray from the camera through a continuous pixel coordinate of the
    (possibly enlarged) image plane. Pixel (i, j)'s center is at
    (i + 0.5, j + 0.5).

    The camera-plane offsets are written against the display's pixel pitch:

        cx = (2*px - buffer_w) * tan_half_x / display_w
        cy = (buffer_h - 2*py) * tan_half_y / display_h

    so the enlarged buffer reproduces display rays exactly (bitwise) at
    the guard offset. The render kernels use the same expression.
    """
    x_axis, y_axis, z_axis = camera_basis(pose)
    bw, bh = intr.buffer_size(enlarged)
    cx = (2.0 * pixel_x - bw) * intr.tan_half_x / intr.display_width
    cy = (bh - 2.0 * pixel_y) * intr.tan_half_y / intr.display_height
    d = cx * x_axis + cy * y_axis - z_axis
    d = d / np.linalg.norm(d)
    return pose.position.copy(), d
