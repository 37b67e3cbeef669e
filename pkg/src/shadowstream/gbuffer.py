"""Per-pixel geometry buffer produced by primary-ray casting.

The same raycast kernel renders the client's display-resolution G-Buffer
and the server's guard-enlarged visibility grid, so both sides agree on
world positions exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .camera import CameraPose, Intrinsics, camera_basis
from .scene import Scene


@dataclass
class GBuffer:
    width: int
    height: int
    world_position: np.ndarray  # (H, W, 3) float64; undefined where not valid
    normal: np.ndarray          # (H, W, 3) unit vectors; undefined where not valid
    albedo: np.ndarray          # (H, W, 3)
    valid: np.ndarray           # (H, W) bool, True where a primary ray hit
    frame_index: int
    pose: CameraPose


def render_gbuffer(scene: Scene, pose: CameraPose, intr: Intrinsics) -> GBuffer:
    """Raycast the display-resolution G-Buffer at a pose. Pure function of
    its inputs; bit-identical across runs."""
    x_axis, y_axis, z_axis = camera_basis(pose)
    n0, n1, n2, albedo = scene.kernel_shading()
    wp, nrm, alb, _slot, valid = kernels.trace_grid(
        intr.display_width, intr.display_height,
        intr.display_width, intr.display_height,
        intr.tan_half_x, intr.tan_half_y,
        pose.position, x_axis, y_axis, z_axis, intr.far,
        *scene.kernel_args(), n0, n1, n2, albedo)
    return GBuffer(
        width=intr.display_width,
        height=intr.display_height,
        world_position=wp, normal=nrm, albedo=alb, valid=valid,
        frame_index=pose.frame_index, pose=pose)


def dump_debug_images(gbuf: GBuffer, out_dir) -> list[Path]:
    """Write albedo, RGB-mapped normals and the validity mask as PNGs."""
    from PIL import Image

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    def save(name, arr):
        path = out_dir / name
        Image.fromarray(arr).save(path)
        written.append(path)

    v = gbuf.valid[..., None]
    save("albedo.png", (np.clip(gbuf.albedo, 0, 1) * v * 255).round().astype(np.uint8))
    save("normal.png", ((gbuf.normal * 0.5 + 0.5) * v * 255).round().astype(np.uint8))
    save("valid.png", (gbuf.valid * 255).astype(np.uint8))
    return written
