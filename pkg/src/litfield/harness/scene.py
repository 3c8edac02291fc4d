"""Analytic cuboid scenes with closed-form ray casting.

A scene is an axis-aligned room (viewed from inside) plus optional
axis-aligned interior boxes (viewed from outside). Faces carry either a
solid color or a two-color checker pattern. Depth rendered into frames is
the ray parameter of the unnormalized pixel ray (the distance along the
camera -Z axis), so unprojection reproduces hit points exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import SceneError
from ..geometry import (CameraFrame, ColorImage, DepthImage, Intrinsics, Pose,
                        camera_ray, equirect_pixel_dirs)
from ..session import EnvironmentMap

_FACE_NAMES = {
    (0, 0): "x_min", (0, 1): "x_max",
    (1, 0): "floor", (1, 1): "ceiling",
    (2, 0): "z_min", (2, 1): "z_max",
}
_IN_PLANE_AXES = {0: (1, 2), 1: (0, 2), 2: (0, 1)}


@dataclass(frozen=True)
class FaceAppearance:
    """Solid color, or a two-color checker with a given cell size (meters)."""

    color: tuple[float, float, float] | None = None
    checker: tuple[tuple[float, float, float], tuple[float, float, float]] | None = None
    cell: float = 0.5

    def __post_init__(self):
        if (self.color is None) == (self.checker is None):
            raise SceneError("face needs exactly one of color or checker")
        if self.checker is not None and self.cell <= 0:
            raise SceneError("checker cell must be positive")

    def shade(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Colors for in-plane hit coordinates (u, v), shape (N, 3)."""
        if self.color is not None:
            return np.broadcast_to(np.asarray(self.color, dtype=np.float64),
                                   (len(u), 3)).copy()
        parity = ((np.floor(u / self.cell) + np.floor(v / self.cell)) % 2).astype(int)
        palette = np.asarray(self.checker, dtype=np.float64)
        return palette[parity]


@dataclass
class Box:
    """Interior axis-aligned box; faces keyed like the room's."""

    min: np.ndarray
    max: np.ndarray
    faces: dict[str, FaceAppearance]

    def __post_init__(self):
        self.min = np.asarray(self.min, dtype=np.float64).reshape(3)
        self.max = np.asarray(self.max, dtype=np.float64).reshape(3)
        if not np.all(self.min < self.max):
            raise SceneError("box min must be strictly below max componentwise")


@dataclass
class SyntheticScene:
    room_min: np.ndarray
    room_max: np.ndarray
    faces: dict[str, FaceAppearance]
    boxes: list[Box] = field(default_factory=list)

    def __post_init__(self):
        self.room_min = np.asarray(self.room_min, dtype=np.float64).reshape(3)
        self.room_max = np.asarray(self.room_max, dtype=np.float64).reshape(3)
        if not np.all(self.room_min < self.room_max):
            raise SceneError("room min must be strictly below max componentwise")
        missing = set(_FACE_NAMES.values()) - set(self.faces)
        if missing:
            raise SceneError(f"room is missing faces: {sorted(missing)}")

    def contains(self, p) -> bool:
        p = np.asarray(p, dtype=np.float64)
        if not (np.all(self.room_min < p) and np.all(p < self.room_max)):
            return False
        return not any(np.all(b.min < p) and np.all(p < b.max) for b in self.boxes)


def default_scene() -> SyntheticScene:
    """Six-color room at desk scale."""
    colors = {
        "floor": (0.55, 0.35, 0.15), "ceiling": (0.95, 0.95, 0.9),
        "x_min": (0.8, 0.2, 0.2), "x_max": (0.2, 0.8, 0.2),
        "z_min": (0.2, 0.2, 0.8), "z_max": (0.8, 0.8, 0.2),
    }
    return SyntheticScene(
        np.array([-3.0, 0.0, -3.0]), np.array([3.0, 3.0, 3.0]),
        {name: FaceAppearance(color=c) for name, c in colors.items()})


def _face_from_json(obj) -> FaceAppearance:
    if "color" in obj:
        return FaceAppearance(color=tuple(obj["color"]))
    return FaceAppearance(checker=(tuple(obj["checker"][0]), tuple(obj["checker"][1])),
                          cell=float(obj.get("cell", 0.5)))


def load_scene(path: str) -> SyntheticScene:
    """Load a scene description from a JSON file."""
    with open(path) as f:
        data = json.load(f)
    faces = {name: _face_from_json(spec) for name, spec in data["faces"].items()}
    boxes = []
    for b in data.get("boxes", []):
        if "color" in b:
            bf = {name: FaceAppearance(color=tuple(b["color"]))
                  for name in _FACE_NAMES.values()}
        else:
            bf = {name: _face_from_json(spec) for name, spec in b["faces"].items()}
        boxes.append(Box(b["min"], b["max"], bf))
    return SyntheticScene(data["room"]["min"], data["room"]["max"], faces, boxes)


def cast_rays(scene: SyntheticScene, origin: np.ndarray, dirs: np.ndarray):
    """Nearest surface along each ray from a common interior origin.

    dirs may be unnormalized; the returned t is the ray parameter such
    that hit = origin + t * dir. Returns (colors (N, 3), t (N,)).
    """
    origin = np.asarray(origin, dtype=np.float64).reshape(3)
    d = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    n = len(d)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.where(d != 0.0, 1.0 / d, np.inf)

    # Room exit: per axis, the slab bound on the side the ray travels to.
    bound = np.where(d > 0.0, scene.room_max, scene.room_min)
    t_axis = (bound - origin) * inv              # (N, 3), inf where parallel
    t_axis = np.where(np.isfinite(t_axis), t_axis, np.inf)
    axis = np.argmin(t_axis, axis=1)
    best_t = t_axis[np.arange(n), axis]
    side = (d[np.arange(n), axis] > 0.0).astype(int)
    # face code: box index (room = -1) * 6 + axis * 2 + side
    best_face = axis * 2 + side - 6

    for bi, box in enumerate(scene.boxes):
        t1 = (box.min - origin) * inv
        t2 = (box.max - origin) * inv
        lo, hi = np.minimum(t1, t2), np.maximum(t1, t2)
        lo = np.where(np.isfinite(lo), lo, -np.inf)
        hi = np.where(np.isfinite(hi), hi, np.inf)
        entry_axis = np.argmax(lo, axis=1)
        t_near = lo[np.arange(n), entry_axis]
        t_far = hi.min(axis=1)
        hit = (t_near <= t_far) & (t_near > 1e-12) & (t_near < best_t)
        if hit.any():
            # Entry face is the min-side face when traveling in +axis.
            s = (d[np.arange(n), entry_axis] < 0.0).astype(int)
            best_t = np.where(hit, t_near, best_t)
            best_face = np.where(hit, bi * 6 + entry_axis * 2 + s, best_face)

    points = origin + best_t[:, None] * d
    colors = np.zeros((n, 3))
    for code in np.unique(best_face):
        mask = best_face == code
        bi, rest = divmod(int(code), 6) if code >= 0 else (-1, int(code) + 6)
        axis_i, side_i = divmod(rest, 2)
        appearance = (scene.faces if bi < 0 else scene.boxes[bi].faces)[
            _FACE_NAMES[(axis_i, side_i)]]
        ua, va = _IN_PLANE_AXES[axis_i]
        colors[mask] = appearance.shade(points[mask, ua], points[mask, va])
    return colors, best_t


def render_rgbd(scene: SyntheticScene, pose: Pose, k: Intrinsics,
                view_id: int = 0) -> CameraFrame:
    """Render a posed RGB-D frame with exact depth and all-high confidence."""
    if not scene.contains(pose.translation):
        raise SceneError("camera must be inside the room")
    v, u = np.mgrid[0:k.height, 0:k.width]
    rays = camera_ray(u.ravel(), v.ravel(), k) @ pose.rotation.T
    colors, t = cast_rays(scene, pose.translation, rays)
    color = ColorImage(k.width, k.height,
                       np.clip(colors.reshape(k.height, k.width, 3), 0.0, 1.0))
    depth = DepthImage(k.width, k.height, t.reshape(k.height, k.width),
                       np.full((k.height, k.width), 2, dtype=np.uint8))
    return CameraFrame(color, k, pose, depth, view_id=view_id)


def ground_truth_envmap(scene: SyntheticScene, position, res: tuple[int, int]) -> EnvironmentMap:
    """Analytic equirectangular panorama at a position inside the room."""
    position = np.asarray(position, dtype=np.float64).reshape(3)
    if not scene.contains(position):
        raise SceneError("position must be inside the room")
    width, height = res
    dirs = equirect_pixel_dirs(width, height).reshape(-1, 3)
    colors, _ = cast_rays(scene, position, dirs)
    return EnvironmentMap(width, height,
                          np.clip(colors.reshape(height, width, 3), 0.0, 1.0))


def look_at(eye, target, up=(0.0, 1.0, 0.0)) -> Pose:
    """World-from-camera pose with the -Z axis pointing from eye to target."""
    eye = np.asarray(eye, dtype=np.float64).reshape(3)
    target = np.asarray(target, dtype=np.float64).reshape(3)
    back = eye - target
    norm = np.linalg.norm(back)
    if norm < 1e-12:
        raise ValueError("eye and target coincide")
    back /= norm
    up = np.asarray(up, dtype=np.float64)
    right = np.cross(up, back)
    rn = np.linalg.norm(right)
    if rn < 1e-9:  # looking straight up/down: pick an arbitrary roll
        right = np.cross(np.array([1.0, 0.0, 0.0]), back)
        rn = np.linalg.norm(right)
    right /= rn
    true_up = np.cross(back, right)
    return Pose(np.stack([right, true_up, back], axis=1), eye)


@dataclass
class Trajectory:
    poses: list[Pose]
    timestamps_ms: list[float]

    def __post_init__(self):
        if sorted(self.timestamps_ms) != list(self.timestamps_ms):
            raise ValueError("timestamps must be increasing")


def orbit_trajectory(rec_pos, user_height_cm: float = 170.0, steps: float = 1.0,
                     n_positions: int = 8, interval_ms: float = 350.0) -> Trajectory:
    """Circular capture trajectory around a reconstruction position.

    Camera height is 0.8 x user height and the orbit radius is
    steps x (0.3 x user height); heights are absolute assuming the floor
    at y = 0. Every pose looks at rec_pos.
    """
    rec_pos = np.asarray(rec_pos, dtype=np.float64).reshape(3)
    h = 0.8 * user_height_cm / 100.0
    radius = steps * 0.3 * user_height_cm / 100.0
    poses, stamps = [], []
    for i in range(n_positions):
        az = 2.0 * math.pi * i / n_positions
        eye = np.array([rec_pos[0] + radius * math.cos(az), h,
                        rec_pos[2] + radius * math.sin(az)])
        poses.append(look_at(eye, rec_pos))
        stamps.append(i * interval_ms)
    return Trajectory(poses, stamps)
