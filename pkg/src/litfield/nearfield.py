"""Dense point-cloud pipeline for near-field observations.

Covers cloud generation from RGB-D frames, the fixed-slot multi-view
buffer, the near-field boundary filter, multi-resolution projection with
per-pixel occlusion, layer merging, and point-to-point ICP registration.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateGeometryError, NoOverlapError
from .geometry import ColorImage, DepthImage, Intrinsics, Pose, camera_ray

log = logging.getLogger(__name__)


@dataclass
class PointCloud:
    """Columnar world-space point store: positions (N, 3) meters, colors
    (N, 3) linear RGB in [0, 1]."""

    positions: np.ndarray
    colors: np.ndarray

    def __post_init__(self):
        # float32 positions keep the multi-million-point projection path
        # inside its latency budget; sub-micrometer precision is ample.
        self.positions = np.asarray(self.positions, dtype=np.float32).reshape(-1, 3)
        self.colors = np.asarray(self.colors, dtype=np.float64).reshape(-1, 3)
        if len(self.positions) != len(self.colors):
            raise ValueError("positions and colors must have equal length")

    def __len__(self) -> int:
        return len(self.positions)

    @staticmethod
    def empty() -> "PointCloud":
        return PointCloud(np.zeros((0, 3)), np.zeros((0, 3)))

    def select(self, mask_or_idx) -> "PointCloud":
        return PointCloud(self.positions[mask_or_idx], self.colors[mask_or_idx])

    @staticmethod
    def concatenate(clouds: list["PointCloud"]) -> "PointCloud":
        if not clouds:
            return PointCloud.empty()
        return PointCloud(np.concatenate([c.positions for c in clouds]),
                          np.concatenate([c.colors for c in clouds]))


@dataclass
class _ViewSlot:
    view_id: int
    sequence: int
    cloud: PointCloud


class DensePointCloudBuffer:
    """Fixed-capacity multi-view point store with least-recently-observed
    slot replacement.

    Re-inserting an existing view_id overwrites its slot in place
    (spatial consistency); a new view_id fills a free slot or evicts the
    slot with the smallest insertion sequence number (temporal
    consistency).
    """

    def __init__(self, num_views: int, slot_capacity: int = 0):
        if num_views < 1:
            raise ValueError("num_views must be >= 1")
        self.num_views = num_views
        self.slot_capacity = slot_capacity
        self._slots: list[_ViewSlot] = []
        self._next_seq = 0

    def insert_view(self, view_id: int, cloud: PointCloud) -> None:
        if len(cloud) == 0:
            raise ValueError("cannot insert an empty view")
        seq = self._next_seq
        self._next_seq += 1
        for slot in self._slots:
            if slot.view_id == view_id:
                slot.cloud = cloud
                slot.sequence = seq
                return
        if len(self._slots) >= self.num_views:
            oldest = min(self._slots, key=lambda s: s.sequence)
            self._slots.remove(oldest)
        self._slots.append(_ViewSlot(view_id, seq, cloud))

    def view_ids(self) -> list[int]:
        return [s.view_id for s in self._slots]

    def get_view(self, view_id: int) -> PointCloud | None:
        for s in self._slots:
            if s.view_id == view_id:
                return s.cloud
        return None

    def all_points(self) -> PointCloud:
        return PointCloud.concatenate([s.cloud for s in self._slots])

    def __len__(self) -> int:
        return len(self._slots)


@dataclass(frozen=True)
class NearFieldBoundary:
    """Axis-aligned cube centered on the reconstruction position limiting
    which dense points get projected."""

    center: np.ndarray
    side: float = 2.0

    def __post_init__(self):
        if self.side <= 0:
            raise ValueError("boundary side must be positive")
        object.__setattr__(self, "center",
                           np.asarray(self.center, dtype=np.float64).reshape(3))


@dataclass
class EnvMapLayer:
    """One projected equirectangular layer: color, per-pixel distance to
    the reconstruction position, and validity. Invalid pixels carry
    distance +inf."""

    width: int
    height: int
    color: np.ndarray     # (height, width, 3)
    distance: np.ndarray  # (height, width), +inf where invalid
    valid: np.ndarray     # (height, width) bool

    @staticmethod
    def empty(width: int, height: int) -> "EnvMapLayer":
        return EnvMapLayer(width, height,
                           np.zeros((height, width, 3)),
                           np.full((height, width), np.inf),
                           np.zeros((height, width), dtype=bool))


def generate_dense_cloud(color: ColorImage, depth: DepthImage, k: Intrinsics,
                         pose: Pose, min_confidence: int = 2) -> PointCloud:
    """Unproject every pixel with confidence >= min_confidence and depth > 0
    into world space. Output order is row-major over kept pixels."""
    if (color.width, color.height) != (depth.width, depth.height):
        raise ValueError("color and depth dimensions must match")
    if min_confidence not in (0, 1, 2):
        raise ValueError("min_confidence must be in {0, 1, 2}")
    keep = (depth.confidence >= min_confidence) & (depth.depth > 0)
    if not keep.any():
        return PointCloud.empty()
    v, u = np.nonzero(keep)
    rays = camera_ray(u, v, k)
    d = depth.depth[keep][:, None]
    positions = (d * rays) @ pose.rotation.T + pose.translation
    return PointCloud(positions, color.pixels[keep])


def filter_boundary(cloud: PointCloud, b: NearFieldBoundary) -> PointCloud:
    """Keep points inside the cube (Chebyshev distance <= side/2, inclusive)."""
    if len(cloud) == 0:
        return cloud
    half = b.side / 2.0
    inside = np.max(np.abs(cloud.positions - b.center), axis=1) <= half
    return cloud.select(inside)


# Reusable scratch buffers for the projection hot path. Fresh multi-MB
# allocations are page-fault bound on first touch, which dominates the
# latency budget for million-point clouds; thread-local storage keeps the
# service's handler and registration threads from sharing them.
_scratch = threading.local()
_index_u32 = np.empty(0, dtype=np.uint32)


def _buf(name: str, n: int, dtype) -> np.ndarray:
    bufs = getattr(_scratch, "bufs", None)
    if bufs is None:
        bufs = _scratch.bufs = {}
    arr = bufs.get(name)
    if arr is None or arr.size < n or arr.dtype != dtype:
        arr = bufs[name] = np.empty(max(n, 1), dtype)
    return arr[:n]


def _pack_min_keys(dist: np.ndarray) -> np.ndarray:
    """uint64 scatter-min keys: float32 distance bits above the point index.

    A single scatter-min over these keys resolves both the winning distance
    and which point produced it. Equal packed distances break toward the
    lower index. Distances are non-negative, so the float32 bit pattern
    orders like the value. Written as two little-endian uint32 halves to
    avoid widening and shifting passes.
    """
    global _index_u32
    n = len(dist)
    if len(_index_u32) < n:
        _index_u32 = np.arange(n, dtype=np.uint32)
    halves = _buf("key", 2 * n, np.uint32).reshape(n, 2)
    halves[:, 0] = _index_u32[:n]
    halves[:, 1] = dist.view(np.uint32)
    return halves.view(np.uint64).reshape(n)


def project_multires(cloud: PointCloud, rec_pos: np.ndarray,
                     levels: list[tuple[int, int]],
                     stats: dict | None = None) -> list[EnvMapLayer]:
    """Project one point cloud at every resolution level, keeping the
    closest point to rec_pos per pixel.

    Points coincident with rec_pos have no direction and are skipped;
    their count is reported through `stats["skipped_zero_distance"]`.
    """
    if not levels:
        raise ValueError("levels must be nonempty")
    for w, h in levels:
        if w != 2 * h:
            raise ValueError(f"level {w}x{h} is not 2:1 equirectangular")
    widths = [w for w, _ in levels]
    if sorted(widths, reverse=True) != widths or len(set(widths)) != len(widths):
        raise ValueError("levels must have strictly decreasing resolutions")

    rec_pos = np.asarray(rec_pos, dtype=np.float32).reshape(3)
    n = len(cloud)
    rel = _buf("rel", 3 * n, np.float32).reshape(n, 3)
    np.subtract(cloud.positions, rec_pos, out=rel)
    dist = _buf("dist", n, np.float32)
    np.einsum("ij,ij->i", rel, rel, out=dist)
    np.sqrt(dist, out=dist)

    skipped = 0
    colors = cloud.colors
    if n and float(dist.min()) <= 0.0:
        nonzero = dist > 0.0
        skipped = int(n - nonzero.sum())
        log.debug("project_multires: skipped %d zero-distance points", skipped)
        rel, dist, colors = rel[nonzero], dist[nonzero], colors[nonzero]
        n -= skipped
    if stats is not None:
        stats["skipped_zero_distance"] = skipped
    if n == 0:
        return [EnvMapLayer.empty(w, h) for w, h in levels]

    # Spherical angles once per cloud; per-level work is then just the
    # pixel quantization and the scatter-min. All stages write into
    # reused scratch so the pass count stays at a handful.
    neg_z = _buf("tmpf", n, np.float32)
    np.negative(rel[:, 2], out=neg_z)
    theta_frac = _buf("theta", n, np.float32)
    np.arctan2(rel[:, 0], neg_z, out=theta_frac)
    theta_frac *= np.float32(0.5 / np.pi)
    theta_frac += np.float32(1.0)
    # Mathematically (0.5, 1.5]; the clamp guards against float32 rounding
    # at the seam dropping just below 0.5 (the seam belongs to column 0).
    np.maximum(theta_frac, np.float32(0.5), out=theta_frac)

    cos_phi = _buf("phi", n, np.float32)
    np.divide(rel[:, 1], dist, out=cos_phi)
    np.clip(cos_phi, -1.0, 1.0, out=cos_phi)
    np.multiply(cos_phi, cos_phi, out=neg_z)
    pole = neg_z == np.float32(1.0)
    any_pole = bool(pole.any())
    phi_frac = cos_phi  # in-place arccos: [0, 1]
    np.arccos(cos_phi, out=phi_frac)
    phi_frac *= np.float32(1.0 / np.pi)

    key = _pack_min_keys(dist)
    layers = []
    best_top = None
    top_w, top_h = levels[0]

    def quantize(w: int, h: int) -> np.ndarray:
        # theta_frac*w floors into [w/2, 3w/2]; subtracting w/2 centers the
        # forward direction, and the single value that lands on w is the
        # wrap back to column 0.
        tmpf = _buf("tmpf", n, np.float32)
        px = _buf("px", n, np.int32)
        np.multiply(theta_frac, np.float32(w), out=tmpf)
        px[:] = tmpf  # C float->int cast truncates; values are >= 0
        px -= np.int32(w // 2)
        px[px == w] = 0
        if any_pole:
            px[pole] = 0
        flat = _buf("py", n, np.int32)
        np.multiply(phi_frac, np.float32(h), out=tmpf)
        flat[:] = tmpf
        np.minimum(flat, np.int32(h - 1), out=flat)
        flat *= np.int32(w)
        flat += px
        return flat

    for w, h in levels:
        if best_top is not None and top_w % w == 0 and top_h % h == 0 \
                and top_w // w == top_h // h:
            # floor(x / r) == floor(floor(x) / r) for integer r, and the
            # half-width centering offset divides through, so a coarser
            # level's pixel is a block of the finest level's pixels. The
            # coarse minimum is then a block-min over the finest key map.
            r = top_w // w
            best = best_top.reshape(h, r, w, r).min(axis=(1, 3)).reshape(-1)
        else:
            flat = quantize(w, h)
            best = np.full(w * h, np.uint64(0xFFFFFFFFFFFFFFFF))
            np.minimum.at(best, flat, key)
            if (w, h) == (top_w, top_h):
                best_top = best
        hit = best != np.uint64(0xFFFFFFFFFFFFFFFF)
        won = best[hit]
        winner = (won & np.uint64(0xFFFFFFFF)).astype(np.intp)
        layer = EnvMapLayer.empty(w, h)
        layer.color.reshape(-1, 3)[hit] = colors[winner]
        # The winning distance rides in the key's upper half.
        layer.distance.reshape(-1)[hit] = \
            (won >> np.uint64(32)).astype(np.uint32).view(np.float32)
        layer.valid.reshape(-1)[hit] = True
        layers.append(layer)
    return layers


def resample_nearest(layer: EnvMapLayer, width: int, height: int) -> EnvMapLayer:
    if (layer.width, layer.height) == (width, height):
        return layer
    ys = (np.arange(height) * layer.height) // height
    xs = (np.arange(width) * layer.width) // width
    return EnvMapLayer(width, height,
                       layer.color[np.ix_(ys, xs)],
                       layer.distance[np.ix_(ys, xs)],
                       layer.valid[np.ix_(ys, xs)])


def merge_multires(layers: list[EnvMapLayer], target: tuple[int, int]) -> EnvMapLayer:
    """Upscale all layers to the target resolution (nearest pixel) and keep,
    per pixel, the candidate with minimum distance; exact ties go to the
    higher-resolution layer."""
    if not layers:
        raise ValueError("layers must be nonempty")
    width, height = target
    if (layers[0].width, layers[0].height) != (width, height):
        raise ValueError("target must equal the largest layer resolution")
    scaled = [resample_nearest(l, width, height) for l in layers]
    # Running minimum back to front; a strict < on earlier (higher
    # resolution) layers makes exact ties go to the higher resolution.
    last = scaled[-1]
    color = last.color.copy()
    distance = last.distance.copy()
    valid = last.valid.copy()
    for layer in scaled[-2::-1]:
        closer = layer.distance <= distance
        color[closer] = layer.color[closer]
        distance[closer] = layer.distance[closer]
        valid |= layer.valid
    out = EnvMapLayer(width, height, color, distance, valid)
    out.color[~out.valid] = 0.0
    out.distance[~out.valid] = np.inf
    return out


@dataclass(frozen=True)
class IcpConfig:
    max_iterations: int = 50
    convergence_tol: float = 1e-7   # meters, change in mean residual
    max_correspondence_dist: float = 0.1  # meters


@dataclass
class IcpResult:
    pose: Pose                     # maps source points onto the reference
    residuals: list[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False


def _check_rank(points: np.ndarray, name: str) -> None:
    if len(points) < 3:
        raise DegenerateGeometryError(f"{name} cloud has fewer than 3 points")
    centered = points - points.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[2] <= max(1e-12, 1e-9 * sv[0]):
        raise DegenerateGeometryError(f"{name} cloud covariance has rank < 3")


def _rigid_fit(src: np.ndarray, dst: np.ndarray) -> Pose:
    cs, cd = src.mean(axis=0), dst.mean(axis=0)
    h = (src - cs).T @ (dst - cd)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return Pose(r, cd - r @ cs)


def register_icp(source: PointCloud, reference: PointCloud,
                 cfg: IcpConfig = IcpConfig()) -> IcpResult:
    """Point-to-point ICP: alternate nearest-neighbor correspondence with a
    closed-form rigid fit until the mean residual stops improving."""
    _check_rank(source.positions, "source")
    _check_rank(reference.positions, "reference")
    tree = cKDTree(reference.positions)
    transform = Pose.identity()
    result = IcpResult(transform)
    prev_residual = np.inf
    for it in range(cfg.max_iterations):
        moved = source.positions @ transform.rotation.T + transform.translation
        d, idx = tree.query(moved, distance_upper_bound=cfg.max_correspondence_dist)
        matched = np.isfinite(d)
        if not matched.any():
            raise NoOverlapError(
                f"no correspondences within {cfg.max_correspondence_dist} m")
        residual = float(d[matched].mean())
        result.residuals.append(residual)
        result.iterations = it + 1
        if residual == 0.0 or abs(prev_residual - residual) < cfg.convergence_tol:
            result.converged = True
            break
        prev_residual = residual
        step = _rigid_fit(moved[matched], reference.positions[idx[matched]])
        transform = step.compose(transform)
        result.pose = transform
    return result
