"""Scene and trajectory loading plus ray queries.

Assets come in two files: a Wavefront OBJ subset (v, vn, f, mtllib/usemtl
with diffuse Kd colors) for geometry, and a JSON config for everything
the OBJ cannot carry: point lights, camera intrinsics and the background
color. Trajectories live in their own JSON file. All lengths are meters,
all colors are linear RGB in [0, 1]. Scenes are immutable after load and
safe to share across threads; every query here is a pure function.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .bvh import Bvh, build_bvh
from .camera import CameraPose
from .errors import ConfigError, ContractViolation, LoadError

MAX_LIGHTS_DEFAULT = 32
DEFAULT_ALBEDO = (0.7, 0.7, 0.7)


@dataclass(frozen=True)
class PointLight:
    position: np.ndarray   # (3,) world meters
    intensity: np.ndarray  # (3,) RGB, >= 0, no falloff applied

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=np.float64))
        object.__setattr__(self, "intensity", np.asarray(self.intensity, dtype=np.float64))
        if np.any(self.intensity < 0.0):
            raise ConfigError("light intensity components must be >= 0")


@dataclass(frozen=True)
class Hit:
    t: float
    position: np.ndarray
    normal: np.ndarray
    albedo: np.ndarray
    triangle: int  # index in the scene's triangle order


@dataclass
class Scene:
    """Triangle soup with per-vertex normals, per-triangle albedo, point
    lights and a prebuilt BVH."""

    v0: np.ndarray       # (M, 3)
    v1: np.ndarray
    v2: np.ndarray
    n0: np.ndarray       # (M, 3) unit normals at each corner
    n1: np.ndarray
    n2: np.ndarray
    albedo: np.ndarray   # (M, 3)
    lights: list[PointLight]
    background_color: np.ndarray  # (3,)
    bvh: Bvh = field(repr=False, default=None)

    def __post_init__(self):
        if self.bvh is None:
            self.bvh = build_bvh(self.v0, self.v1, self.v2)
        # permuted copies for the kernels; edge vectors precomputed
        p = self.bvh.perm
        self._kv0 = np.ascontiguousarray(self.v0[p])
        self._ke1 = np.ascontiguousarray(self.v1[p] - self.v0[p])
        self._ke2 = np.ascontiguousarray(self.v2[p] - self.v0[p])
        self._kn0 = np.ascontiguousarray(self.n0[p])
        self._kn1 = np.ascontiguousarray(self.n1[p])
        self._kn2 = np.ascontiguousarray(self.n2[p])
        self._kalbedo = np.ascontiguousarray(self.albedo[p])

    @property
    def num_triangles(self) -> int:
        return len(self.v0)

    @property
    def num_lights(self) -> int:
        return len(self.lights)

    @property
    def light_positions(self) -> np.ndarray:
        if not self.lights:
            return np.zeros((0, 3), dtype=np.float64)
        return np.stack([l.position for l in self.lights])

    @property
    def light_intensities(self) -> np.ndarray:
        if not self.lights:
            return np.zeros((0, 3), dtype=np.float64)
        return np.stack([l.intensity for l in self.lights])

    def kernel_args(self):
        """(node_min, node_max, link, count, v0, e1, e2) for the kernels."""
        b = self.bvh
        return (b.node_min, b.node_max, b.link, b.count,
                self._kv0, self._ke1, self._ke2)

    def kernel_shading(self):
        """(n0, n1, n2, albedo) in permuted order."""
        return self._kn0, self._kn1, self._kn2, self._kalbedo


def intersect_ray(scene: Scene, origin, direction, t_max: float) -> Hit | None:
    """Nearest triangle hit with t in (RAY_EPS, t_max], or None."""
    origin = np.asarray(origin, dtype=np.float64)
    direction = np.asarray(direction, dtype=np.float64)
    if abs(np.linalg.norm(direction) - 1.0) > 1e-4:
        raise ContractViolation("direction must be unit length")
    if t_max <= 0.0:
        raise ContractViolation("t_max must be > 0")
    t, slot, u, v = kernels.bvh_nearest(
        origin[0], origin[1], origin[2],
        direction[0], direction[1], direction[2],
        kernels.RAY_EPS, t_max, *scene.kernel_args())
    if slot < 0:
        return None
    w0 = 1.0 - u - v
    normal = w0 * scene._kn0[slot] + u * scene._kn1[slot] + v * scene._kn2[slot]
    normal = normal / np.linalg.norm(normal)
    return Hit(
        t=float(t),
        position=origin + t * direction,
        normal=normal,
        albedo=scene._kalbedo[slot].copy(),
        triangle=int(scene.bvh.perm[slot]),
    )


def occluded(scene: Scene, from_point, to_point) -> bool:
    """True iff geometry crosses the open segment between the points,
    shrunk by RAY_EPS at both ends."""
    a = np.asarray(from_point, dtype=np.float64)
    b = np.asarray(to_point, dtype=np.float64)
    if np.array_equal(a, b):
        raise ContractViolation("occlusion segment endpoints must differ")
    return bool(kernels.segment_occluded(
        a[0], a[1], a[2], b[0], b[1], b[2],
        kernels.RAY_EPS, *scene.kernel_args()))


# ---------------------------------------------------------------------------
# trajectories

@dataclass(frozen=True)
class Trajectory:
    """Ordered camera keyframes with linear interpolation between them."""

    frames: np.ndarray     # (K,) strictly increasing int64
    positions: np.ndarray  # (K, 3)
    targets: np.ndarray    # (K, 3)
    ups: np.ndarray        # (K, 3)

    def __post_init__(self):
        if len(self.frames) == 0:
            raise ConfigError("trajectory needs at least one keyframe")
        if np.any(np.diff(self.frames) <= 0):
            raise ConfigError("keyframe frame indices must be strictly increasing")
        for k in range(len(self.frames)):
            view = self.targets[k] - self.positions[k]
            nv = np.linalg.norm(view)
            if nv < 1e-12 or np.linalg.norm(np.cross(view / nv, self.ups[k])) < 1e-6:
                raise ConfigError(f"keyframe {int(self.frames[k])}: up is parallel to the view direction")


def sample_trajectory(trajectory: Trajectory, frame: int) -> CameraPose:
    """Linearly interpolated pose at an integer frame. Clamps past the last
    keyframe; the up vector is re-orthonormalized against the view direction."""
    frames = trajectory.frames
    if frame < frames[0]:
        raise ContractViolation(f"frame {frame} precedes first keyframe {int(frames[0])}")
    if frame >= frames[-1]:
        pos = trajectory.positions[-1]
        tgt = trajectory.targets[-1]
        up = trajectory.ups[-1]
    else:
        hi = int(np.searchsorted(frames, frame, side="right"))
        lo = hi - 1
        span = float(frames[hi] - frames[lo])
        a = (frame - float(frames[lo])) / span
        pos = (1.0 - a) * trajectory.positions[lo] + a * trajectory.positions[hi]
        tgt = (1.0 - a) * trajectory.targets[lo] + a * trajectory.targets[hi]
        up = (1.0 - a) * trajectory.ups[lo] + a * trajectory.ups[hi]

    fwd = tgt - pos
    fwd = fwd / np.linalg.norm(fwd)
    right = np.cross(fwd, up)
    rn = np.linalg.norm(right)
    if rn < 1e-6:
        raise ContractViolation(f"frame {frame}: interpolated up is parallel to the view direction")
    right = right / rn
    up_ortho = np.cross(right, fwd)
    return CameraPose(position=pos, target=tgt, up=up_ortho, frame_index=max(int(frame), 0))


# ---------------------------------------------------------------------------
# asset parsing

def _parse_obj(path: Path) -> tuple[np.ndarray, ...]:
    """Minimal OBJ reader: v, vn, f (fan-triangulated), mtllib/usemtl.
    Returns (v0, v1, v2, n0, n1, n2, albedo)."""
    verts: list[list[float]] = []
    normals: list[list[float]] = []
    faces: list[tuple[tuple[int, int], ...]] = []  # ((vi, ni), ...) per corner
    face_albedo: list[tuple[float, float, float]] = []
    materials: dict[str, tuple[float, float, float]] = {}
    current = DEFAULT_ALBEDO

    def fail(lineno, msg):
        raise LoadError(f"{path}:{lineno}: {msg}")

    try:
        text = path.read_text()
    except OSError as e:
        raise LoadError(f"cannot read mesh file {path}: {e}") from e

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        tag = parts[0]
        if tag == "v":
            if len(parts) < 4:
                fail(lineno, "vertex needs 3 coordinates")
            verts.append([float(x) for x in parts[1:4]])
        elif tag == "vn":
            if len(parts) < 4:
                fail(lineno, "normal needs 3 coordinates")
            normals.append([float(x) for x in parts[1:4]])
        elif tag == "f":
            if len(parts) < 4:
                fail(lineno, "face needs at least 3 vertices")
            corners = []
            for spec in parts[1:]:
                fields = spec.split("/")
                try:
                    vi = int(fields[0])
                    ni = int(fields[2]) if len(fields) >= 3 and fields[2] else 0
                except (ValueError, IndexError):
                    fail(lineno, f"bad face vertex '{spec}'")
                vi = vi - 1 if vi > 0 else len(verts) + vi
                ni = ni - 1 if ni > 0 else (len(normals) + ni if ni else -1)
                if not (0 <= vi < len(verts)):
                    fail(lineno, f"vertex index out of range in '{spec}'")
                if ni != -1 and not (0 <= ni < len(normals)):
                    fail(lineno, f"normal index out of range in '{spec}'")
                corners.append((vi, ni))
            for k in range(1, len(corners) - 1):
                faces.append((corners[0], corners[k], corners[k + 1]))
                face_albedo.append(current)
        elif tag == "mtllib":
            mtl_path = path.parent / " ".join(parts[1:])
            materials.update(_parse_mtl(mtl_path))
        elif tag == "usemtl":
            name = " ".join(parts[1:])
            current = materials.get(name, DEFAULT_ALBEDO)
        # other tags (vt, o, g, s, ...) are ignored

    m = len(faces)
    v0 = np.zeros((m, 3))
    v1 = np.zeros((m, 3))
    v2 = np.zeros((m, 3))
    n0 = np.zeros((m, 3))
    n1 = np.zeros((m, 3))
    n2 = np.zeros((m, 3))
    alb = np.asarray(face_albedo, dtype=np.float64).reshape(m, 3)
    va = np.asarray(verts, dtype=np.float64).reshape(len(verts), 3)
    na = np.asarray(normals, dtype=np.float64).reshape(len(normals), 3)

    for fi, corners in enumerate(faces):
        (a, na0), (b, na1), (c, na2) = corners
        v0[fi], v1[fi], v2[fi] = va[a], va[b], va[c]
        if na0 >= 0 and na1 >= 0 and na2 >= 0:
            n0[fi], n1[fi], n2[fi] = na[na0], na[na1], na[na2]
        else:
            face_n = np.cross(v1[fi] - v0[fi], v2[fi] - v0[fi])
            ln = np.linalg.norm(face_n)
            if ln < 1e-20:
                raise LoadError(f"{path}: face {fi} is degenerate and has no vn normals")
            n0[fi] = n1[fi] = n2[fi] = face_n / ln

    for arr in (n0, n1, n2):
        lens = np.linalg.norm(arr, axis=1)
        if m and (np.any(lens < 1e-12)):
            raise LoadError(f"{path}: zero-length vertex normal")
        if m:
            arr /= lens[:, None]
    return v0, v1, v2, n0, n1, n2, alb


def _parse_mtl(path: Path) -> dict[str, tuple[float, float, float]]:
    try:
        text = path.read_text()
    except OSError as e:
        raise LoadError(f"cannot read material file {path}: {e}") from e
    out: dict[str, tuple[float, float, float]] = {}
    name = None
    for raw in text.splitlines():
        parts = raw.strip().split()
        if not parts:
            continue
        if parts[0] == "newmtl" and len(parts) > 1:
            name = " ".join(parts[1:])
        elif parts[0] == "Kd" and name is not None and len(parts) >= 4:
            out[name] = (float(parts[1]), float(parts[2]), float(parts[3]))
    return out


def _read_json(path: Path) -> dict:
    try:
        return json.loads(path.read_text())
    except OSError as e:
        raise LoadError(f"cannot read config file {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise LoadError(f"{path}: invalid JSON: {e}") from e


def load_scene(scene_path, lights_path, max_lights: int = MAX_LIGHTS_DEFAULT) -> Scene:
    """Load geometry from an OBJ file and lights/background from a JSON
    config. Deterministic for identical inputs."""
    scene_path = Path(scene_path)
    lights_path = Path(lights_path)
    v0, v1, v2, n0, n1, n2, alb = _parse_obj(scene_path)

    cfg = _read_json(lights_path)
    raw_lights = cfg.get("lights", [])
    if len(raw_lights) > max_lights:
        raise ConfigError(
            f"{lights_path}: {len(raw_lights)} lights exceed the configured maximum of {max_lights}")
    lights = []
    for i, entry in enumerate(raw_lights):
        try:
            lights.append(PointLight(position=entry["position"], intensity=entry["intensity"]))
        except (KeyError, TypeError) as e:
            raise LoadError(f"{lights_path}: light {i} needs 'position' and 'intensity'") from e
    background = np.asarray(cfg.get("background", [0.0, 0.0, 0.0]), dtype=np.float64)
    if background.shape != (3,):
        raise LoadError(f"{lights_path}: 'background' must be an RGB triple")

    return Scene(v0=v0, v1=v1, v2=v2, n0=n0, n1=n1, n2=n2, albedo=alb,
                 lights=lights, background_color=background)


def load_camera_config(lights_path) -> dict:
    """Camera block from the scene config: vertical_fov_deg, near, far."""
    cfg = _read_json(Path(lights_path))
    cam = cfg.get("camera", {})
    return {
        "vertical_fov": math.radians(float(cam.get("vertical_fov_deg", 60.0))),
        "near": float(cam.get("near", 0.05)),
        "far": float(cam.get("far", 100.0)),
    }


def load_trajectory(path) -> Trajectory:
    path = Path(path)
    cfg = _read_json(path)
    keys = cfg.get("keyframes")
    if not keys:
        raise LoadError(f"{path}: trajectory needs a non-empty 'keyframes' list")
    frames = np.asarray([int(k["frame"]) for k in keys], dtype=np.int64)
    positions = np.asarray([k["position"] for k in keys], dtype=np.float64)
    targets = np.asarray([k["target"] for k in keys], dtype=np.float64)
    ups = np.asarray([k.get("up", [0.0, 1.0, 0.0]) for k in keys], dtype=np.float64)
    return Trajectory(frames=frames, positions=positions, targets=targets, ups=ups)
