"""Motion-based capture gating and guided bootstrapped movement planning."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .geometry import SphericalDir

_VALID_PLAN_SIZES = (1, 3, 5, 9)


@dataclass(frozen=True)
class PoseSample:
    """One 6DoF device sample: position in meters, orientation as a unit
    quaternion (w, x, y, z)."""

    timestamp_ms: float
    position: np.ndarray
    orientation: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.position, dtype=np.float64).reshape(3)
        q = np.asarray(self.orientation, dtype=np.float64).reshape(4)
        if abs(np.linalg.norm(q) - 1.0) > 1e-6:
            raise ValueError("orientation quaternion must be unit norm")
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "orientation", q)


@dataclass(frozen=True)
class CapturePolicyConfig:
    window_size: int = 5        # K
    check_period_ms: float = 300.0  # C
    pos_threshold_m: float = 0.10
    rot_threshold_deg: float = 10.0

    def __post_init__(self):
        if self.window_size < 1:
            raise ValueError("window_size must be >= 1")
        if self.check_period_ms <= 0:
            raise ValueError("check_period_ms must be positive")
        if self.pos_threshold_m <= 0 or self.rot_threshold_deg <= 0:
            raise ValueError("thresholds must be positive")


@dataclass(frozen=True)
class GuidancePlan:
    directions: tuple[SphericalDir, ...]

    @property
    def count(self) -> int:
        return len(self.directions)


class GateDecision(enum.Enum):
    CAPTURE = "capture"
    SKIP = "skip"


def quat_angle_deg(q1: np.ndarray, q2: np.ndarray) -> float:
    """Geodesic rotation angle between two unit quaternions, in degrees."""
    dot = abs(float(np.dot(q1, q2)))
    return math.degrees(2.0 * math.acos(min(1.0, dot)))


def motion_gate(window: list[PoseSample], now: PoseSample,
                cfg: CapturePolicyConfig, last_capture_ms: float) -> GateDecision:
    """Decide whether to capture the current frame.

    Skips while the check-period timer has not elapsed; once it has,
    captures iff the device stayed within the position/rotation thresholds
    relative to every sample in the window. An empty window captures (no
    evidence of motion).
    """
    if now.timestamp_ms - last_capture_ms < cfg.check_period_ms:
        return GateDecision.SKIP
    for s in window:
        if np.linalg.norm(now.position - s.position) > cfg.pos_threshold_m:
            return GateDecision.SKIP
        if quat_angle_deg(now.orientation, s.orientation) > cfg.rot_threshold_deg:
            return GateDecision.SKIP
    return GateDecision.CAPTURE


class MotionGate:
    """Stateful wrapper maintaining the K-sample window and capture timer."""

    def __init__(self, cfg: CapturePolicyConfig):
        self.cfg = cfg
        self.window: list[PoseSample] = []
        self.last_capture_ms = -math.inf

    def update(self, sample: PoseSample) -> GateDecision:
        decision = motion_gate(self.window, sample, self.cfg, self.last_capture_ms)
        if decision is GateDecision.CAPTURE:
            self.last_capture_ms = sample.timestamp_ms
        self.window.append(sample)
        if len(self.window) > self.cfg.window_size:
            self.window.pop(0)
        return decision


def _offset_dir(center: SphericalDir, dtheta: float, dphi: float) -> SphericalDir:
    theta = (center.theta + dtheta) % (2.0 * math.pi)
    phi = min(math.pi, max(0.0, center.phi + dphi))
    return SphericalDir(theta, phi)


def plan_guided_movement(v_obj: np.ndarray, n: int) -> GuidancePlan:
    """Guidance directions opposite the object-viewing direction v_obj.

    The plan center is -v_obj; additional directions sit on a 30-degree
    grid: n=3 adds horizontal neighbors, n=5 adds vertical ones, n=9 is
    the full 3x3 grid. Polar offsets clamp to [0, pi].
    """
    if n not in _VALID_PLAN_SIZES:
        raise ValueError(f"plan size must be one of {_VALID_PLAN_SIZES}, got {n}")
    v = np.asarray(v_obj, dtype=np.float64)
    if abs(np.linalg.norm(v) - 1.0) > 1e-6:
        raise ValueError("v_obj must be a unit vector")
    center = SphericalDir.from_unit(-v)
    step = math.radians(30.0)
    dirs = [center]
    if n >= 3:
        dirs += [_offset_dir(center, -step, 0.0), _offset_dir(center, step, 0.0)]
    if n >= 5:
        dirs += [_offset_dir(center, 0.0, -step), _offset_dir(center, 0.0, step)]
    if n == 9:
        for dt in (-step, step):
            for dp in (-step, step):
                dirs.append(_offset_dir(center, dt, dp))
    return GuidancePlan(tuple(dirs))
