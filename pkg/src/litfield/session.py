"""Reconstruction session lifecycle: presets, near/far ingestion, and
final environment-map composition."""

from __future__ import annotations

import enum
import itertools
import threading
import time
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from . import farfield, nearfield
from .capture import CapturePolicyConfig
from .errors import ConfigurationError, InvalidDepthError
from .farfield import ExtrapolationMode, ExtrapolationTable, UnitSphereAnchorSet
from .geometry import CameraFrame, Intrinsics
from .nearfield import DensePointCloudBuffer, EnvMapLayer, NearFieldBoundary

FAR_CAPTURE_RES = (32, 24)

_session_ids = itertools.count(1)
_session_ids_lock = threading.Lock()


class Preset(enum.Enum):
    LOW = "low"
    MEDIUM = "medium"
    HIGH = "high"
    CUSTOM = "custom"


@dataclass(frozen=True)
class SessionConfig:
    """All quality/performance knobs for one reconstruction session."""

    preset: Preset = Preset.HIGH
    num_views: int = 5
    near_capture_res: tuple[int, int] = (1024, 768)
    multires_levels: tuple[tuple[int, int], ...] = ((1024, 512), (512, 256))
    envmap_res: tuple[int, int] = (1024, 512)
    far_capture_res: tuple[int, int] = FAR_CAPTURE_RES
    anchor_count: int = farfield.DEFAULT_ANCHOR_COUNT
    extrapolation_w: float = farfield.DEFAULT_EXPONENT
    extrapolation_mode: ExtrapolationMode = ExtrapolationMode.NORMALIZED
    boundary_side: float = 2.0
    capture_cfg: CapturePolicyConfig = field(default_factory=CapturePolicyConfig)
    icp_enabled: bool = False
    min_confidence: int = 2

    def __post_init__(self):
        if self.num_views < 1:
            raise ConfigurationError("num_views must be >= 1")
        w, h = self.envmap_res
        if w != 2 * h:
            raise ConfigurationError("envmap_res must be 2:1")
        if not self.multires_levels:
            raise ConfigurationError("multires_levels must be nonempty")
        if self.boundary_side <= 0:
            raise ConfigurationError("boundary_side must be positive")
        if self.min_confidence not in (0, 1, 2):
            raise ConfigurationError("min_confidence must be in {0, 1, 2}")


_PRESETS = {
    Preset.LOW: dict(num_views=3, near_capture_res=(256, 192),
                     multires_levels=((512, 256), (256, 128), (64, 32)),
                     envmap_res=(512, 256)),
    Preset.MEDIUM: dict(num_views=4, near_capture_res=(512, 384),
                        multires_levels=((768, 384), (384, 192)),
                        envmap_res=(512, 256)),
    Preset.HIGH: dict(num_views=5, near_capture_res=(1024, 768),
                      multires_levels=((1024, 512), (512, 256)),
                      envmap_res=(1024, 512)),
}


def preset_config(preset: Preset, **overrides) -> SessionConfig:
    """Session configuration for one of the three named presets."""
    if preset not in _PRESETS:
        raise ConfigurationError(f"no preset table entry for {preset}")
    return SessionConfig(preset=preset, **(_PRESETS[preset] | overrides))


@dataclass
class EnvironmentMap:
    """Final composed equirectangular map, linear float internally."""

    width: int
    height: int
    pixels: np.ndarray  # (height, width, 3) float in [0, 1]

    def to_uint8(self) -> np.ndarray:
        """8-bit export with round-half-up quantization."""
        return np.floor(np.clip(self.pixels, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)

    @staticmethod
    def from_uint8(data: np.ndarray) -> "EnvironmentMap":
        data = np.asarray(data, dtype=np.uint8)
        h, w, _ = data.shape
        return EnvironmentMap(w, h, data.astype(np.float64) / 255.0)


class ReconstructionSession:
    """Owns all mutable state of one reconstruction task: the dense view
    buffer, the anchor set, and the latest near/far maps. All mutations
    must be serialized by the caller (one logical owner per session)."""

    def __init__(self, session_id: int, rec_pos: np.ndarray, config: SessionConfig,
                 intrinsics: Intrinsics, native_res: tuple[int, int],
                 ambient: np.ndarray):
        self.session_id = session_id
        self.rec_pos = np.asarray(rec_pos, dtype=np.float64).reshape(3)
        self.config = config
        self.intrinsics = intrinsics
        self.native_res = native_res
        self.ambient = np.asarray(ambient, dtype=np.float64).reshape(3)

        cw, ch = config.near_capture_res
        self.buffer = DensePointCloudBuffer(config.num_views, cw * ch)
        self.anchors = UnitSphereAnchorSet.create(config.anchor_count)
        farfield.fill_unobserved(self.anchors, self.ambient)
        self._table: ExtrapolationTable | None = None
        w, h = config.envmap_res
        self.near_map = EnvMapLayer.empty(w, h)
        self.far_map = self._extrapolate()
        self.last_capture_ms = -np.inf
        # cumulative per-stage wall time in seconds, for the CLI timing table
        self.timings: dict[str, float] = defaultdict(float)

    def _extrapolation_table(self) -> ExtrapolationTable:
        if self._table is None:
            w, h = self.config.envmap_res
            k = farfield.DEFAULT_TABLE_K
            if self.config.extrapolation_w != farfield.DEFAULT_EXPONENT:
                k = farfield.table_size_for_exponent(
                    self.anchors, w, h, self.config.extrapolation_w)
            self._table = farfield.precompute_table(w, h, self.anchors, k)
        return self._table

    def _extrapolate(self) -> EnvMapLayer:
        return farfield.extrapolate(self.anchors, self.config.envmap_res,
                                    self.config.extrapolation_w,
                                    self.config.extrapolation_mode,
                                    self._extrapolation_table())

    def _splat_near_sample(self, cloud: nearfield.PointCloud) -> None:
        # Downsample the dense cloud to a 32x24-equivalent sample (one
        # point per far-capture-pixel stratum) before anchor splatting.
        fw, fh = self.config.far_capture_res
        stride = max(1, len(cloud) // (fw * fh))
        sample = cloud.select(slice(0, None, stride))
        rel = sample.positions - self.rec_pos
        dist = np.linalg.norm(rel, axis=1)
        keep = dist > 0
        farfield.splat_to_anchors(self.anchors,
                                  rel[keep] / dist[keep, None],
                                  sample.colors[keep])

    def ingest_near(self, frame: CameraFrame) -> EnvMapLayer:
        """Run the full near-field pipeline for one RGB-D frame and return
        the updated near map. Also feeds a sparse sample of the dense
        cloud into the far-field anchors."""
        if frame.depth is None:
            raise InvalidDepthError("near-field ingestion requires depth")
        t0 = time.perf_counter()
        cloud = nearfield.generate_dense_cloud(
            frame.color, frame.depth, frame.intrinsics, frame.pose,
            self.config.min_confidence)
        self.timings["dense_cloud"] += time.perf_counter() - t0
        if len(cloud):
            self.buffer.insert_view(frame.view_id, cloud)
        # The far-field splat keeps working even when every depth sample
        # failed the confidence filter: color alone is still evidence.
        splat_cloud = cloud
        if not len(cloud) and self.config.min_confidence > 0:
            splat_cloud = nearfield.generate_dense_cloud(
                frame.color, frame.depth, frame.intrinsics, frame.pose, 0)
        if len(splat_cloud):
            t0 = time.perf_counter()
            self._splat_near_sample(splat_cloud)
            self.timings["sparse_cloud"] += time.perf_counter() - t0
            t0 = time.perf_counter()
            self.far_map = self._extrapolate()
            self.timings["anchor_extrapolation"] += time.perf_counter() - t0
        t0 = time.perf_counter()
        self.reproject_near()
        self.timings["multires_projection"] += time.perf_counter() - t0
        return self.near_map

    def ingest_far(self, frame: CameraFrame) -> EnvMapLayer:
        """Splat one low-resolution color-only frame into the anchors and
        re-extrapolate the far map."""
        fw, fh = self.config.far_capture_res
        if (frame.color.width, frame.color.height) != (fw, fh):
            raise ConfigurationError(
                f"far-field frames must be {fw}x{fh}, "
                f"got {frame.color.width}x{frame.color.height}")
        t0 = time.perf_counter()
        dirs, colors = farfield.sparse_directions(frame.color, frame.intrinsics,
                                                  frame.pose)
        farfield.splat_to_anchors(self.anchors, dirs, colors)
        self.timings["sparse_cloud"] += time.perf_counter() - t0
        t0 = time.perf_counter()
        self.far_map = self._extrapolate()
        self.timings["anchor_extrapolation"] += time.perf_counter() - t0
        return self.far_map

    def reproject_near(self) -> EnvMapLayer:
        """Recompute the near map from the current buffer contents (used
        after asynchronous registration updates the buffered points)."""
        boundary = NearFieldBoundary(self.rec_pos, self.config.boundary_side)
        points = nearfield.filter_boundary(self.buffer.all_points(), boundary)
        layers = nearfield.project_multires(points, self.rec_pos,
                                            list(self.config.multires_levels))
        merged = nearfield.merge_multires(layers, self.config.multires_levels[0])
        if self.config.multires_levels[0] != self.config.envmap_res:
            merged = nearfield.resample_nearest(merged, *self.config.envmap_res)
        self.near_map = merged
        return self.near_map

    def apply_registration(self, view_id: int, correction: "Pose") -> None:
        """Replace one view's points with their registered positions."""
        cloud = self.buffer.get_view(view_id)
        if cloud is None:
            return
        aligned = nearfield.PointCloud(correction.transform(cloud.positions),
                                       cloud.colors)
        self.buffer.insert_view(view_id, aligned)

    def compose(self) -> EnvironmentMap:
        """Per-pixel hard override: near map where valid, far map elsewhere."""
        w, h = self.config.envmap_res
        pixels = np.where(self.near_map.valid[:, :, None],
                          self.near_map.color, self.far_map.color)
        return EnvironmentMap(w, h, np.clip(pixels, 0.0, 1.0))


def create_session(rec_pos, config: SessionConfig, intrinsics: Intrinsics,
                   native_res: tuple[int, int], ambient,
                   session_id: int | None = None) -> ReconstructionSession:
    """Initialize a session: empty view buffer, ambient-filled anchors, a
    uniform far map, and a fully invalid near map."""
    if session_id is None:
        with _session_ids_lock:
            session_id = next(_session_ids)
    return ReconstructionSession(session_id, rec_pos, config, intrinsics,
                                 native_res, ambient)
