"""Depth-frame back-projection and top-down grid projection.

Converts a depth frame plus a semantic mask into a world-frame point
cloud, and bins point clouds onto a fixed 2D grid.  Conventions:

* Camera frame follows the usual computer-vision axes: Z forward along
  the optical axis, X right, Y down.  A pixel (u, v) at depth d
  back-projects to ``((u-cx)/fx * d, (v-cy)/fy * d, d)``.
* World frame: X/Y on the floor plane, Z up.  Yaw is counterclockwise
  with 0 along +X.  The camera sits level at ``camera_height`` above the
  floor, so at yaw 0 the optical axis points along world +X and camera
  "right" points along world -Y.

All operations are pure; inputs are never mutated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError

DEFAULT_DEPTH_MIN = 0.1
DEFAULT_DEPTH_MAX = 10.0

# Points inside this height band (meters above floor) count as obstacles;
# below is floor return, above is overhanging structure.
DEFAULT_OBSTACLE_BAND = (0.10, 1.50)


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole camera parameters; no lens distortion."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    depth_min: float = DEFAULT_DEPTH_MIN
    depth_max: float = DEFAULT_DEPTH_MAX

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise InputError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise InputError(
                f"principal point ({self.cx}, {self.cy}) outside sensor {self.width}x{self.height}"
            )
        if not (0 < self.depth_min < self.depth_max):
            raise InputError(
                f"need 0 < depth_min < depth_max, got ({self.depth_min}, {self.depth_max})"
            )


def wrap_angle(a: float) -> float:
    """Normalize an angle to [-pi, pi); in-range values pass through unchanged."""
    if -math.pi <= a < math.pi:
        return a
    a = math.fmod(a + math.pi, 2.0 * math.pi)
    if a < 0:
        a += 2.0 * math.pi
    return a - math.pi


@dataclass(frozen=True)
class AgentPose:
    """SE(2) pose plus fixed sensor height above the floor."""

    x: float
    y: float
    yaw: float
    camera_height: float = 0.88

    def __post_init__(self):
        if self.camera_height <= 0:
            raise InputError(f"camera_height must be positive, got {self.camera_height}")
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))


@dataclass
class SemanticPointCloud:
    """World-frame points with per-point semantic category (0 = unlabeled).

    Stored columnar: ``xyz`` is an (N, 3) float64 array, ``categories``
    an (N,) int32 array.
    """

    xyz: np.ndarray
    categories: np.ndarray

    def __len__(self) -> int:
        return self.xyz.shape[0]

    @classmethod
    def empty(cls) -> "SemanticPointCloud":
        return cls(np.zeros((0, 3), dtype=np.float64), np.zeros((0,), dtype=np.int32))


@dataclass(frozen=True)
class GridSpec:
    """Fixed map-grid geometry: cell counts, cell size, world origin of cell (0, 0)."""

    width_cells: int
    height_cells: int
    resolution: float
    origin_x: float
    origin_y: float

    def __post_init__(self):
        if self.width_cells <= 0 or self.height_cells <= 0:
            raise InputError(
                f"grid dimensions must be positive, got {self.width_cells}x{self.height_cells}"
            )
        if self.resolution <= 0:
            raise InputError(f"resolution must be positive, got {self.resolution}")

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        """World point -> (ix, iy) cell indices (may be out of bounds)."""
        ix = int(math.floor((x - self.origin_x) / self.resolution))
        iy = int(math.floor((y - self.origin_y) / self.resolution))
        return ix, iy

    def in_bounds(self, ix: int, iy: int) -> bool:
        return 0 <= ix < self.width_cells and 0 <= iy < self.height_cells

    def cell_center(self, ix: int, iy: int) -> tuple[float, float]:
        return (
            self.origin_x + (ix + 0.5) * self.resolution,
            self.origin_y + (iy + 0.5) * self.resolution,
        )


def centered_grid(pose: AgentPose, width_cells: int, height_cells: int,
                  resolution: float) -> GridSpec:
    """GridSpec whose center cell (W//2, H//2) contains the given pose."""
    ox = pose.x - (width_cells // 2 + 0.5) * resolution
    oy = pose.y - (height_cells // 2 + 0.5) * resolution
    return GridSpec(width_cells, height_cells, resolution, ox, oy)


@dataclass
class GridHits:
    """Cell sets produced by projecting one point cloud onto the grid."""

    obstacle_cells: set = field(default_factory=set)
    explored_cells: set = field(default_factory=set)
    category_cells: dict = field(default_factory=dict)  # category id (1-based) -> cell set
    out_of_bounds: int = 0


def depth_to_points(depth: np.ndarray, mask: np.ndarray, intr: CameraIntrinsics,
                    pose: AgentPose) -> SemanticPointCloud:
    """Back-project a depth frame into a world-frame semantic point cloud.

    One point per pixel whose depth lies in [depth_min, depth_max]; other
    pixels are skipped.  Mask values are copied as point categories.
    """
    depth = np.asarray(depth, dtype=np.float64)
    mask = np.asarray(mask)
    if depth.shape != (intr.height, intr.width):
        raise InputError(
            f"depth shape {depth.shape} does not match intrinsics "
            f"({intr.height}, {intr.width})"
        )
    if mask.shape != depth.shape:
        raise InputError(f"mask shape {mask.shape} does not match depth shape {depth.shape}")

    valid = (depth >= intr.depth_min) & (depth <= intr.depth_max) & np.isfinite(depth)
    if not valid.any():
        return SemanticPointCloud.empty()

    v_idx, u_idx = np.nonzero(valid)
    d = depth[v_idx, u_idx]

    x_cam = (u_idx - intr.cx) / intr.fx * d  # right
    y_cam = (v_idx - intr.cy) / intr.fy * d  # down
    z_cam = d                                # forward

    # Body frame at yaw 0: forward -> +X, right -> -Y, down -> -Z.
    bx = z_cam
    by = -x_cam
    c, s = math.cos(pose.yaw), math.sin(pose.yaw)

    xyz = np.empty((d.shape[0], 3), dtype=np.float64)
    xyz[:, 0] = pose.x + bx * c - by * s
    xyz[:, 1] = pose.y + bx * s + by * c
    xyz[:, 2] = pose.camera_height - y_cam

    return SemanticPointCloud(xyz, mask[v_idx, u_idx].astype(np.int32))


def project_to_grid(cloud: SemanticPointCloud, spec: GridSpec,
                    obstacle_z_range: tuple[float, float] = DEFAULT_OBSTACLE_BAND) -> GridHits:
    """Bin a point cloud onto the grid.

    In-bounds points mark explored cells; points with z inside
    ``obstacle_z_range`` additionally mark obstacle cells; points with a
    nonzero category mark that category's cell set.  Out-of-bounds points
    are dropped and counted.
    """
    hits = GridHits()
    if len(cloud) == 0:
        return hits

    z_low, z_high = obstacle_z_range
    ix = np.floor((cloud.xyz[:, 0] - spec.origin_x) / spec.resolution).astype(np.int64)
    iy = np.floor((cloud.xyz[:, 1] - spec.origin_y) / spec.resolution).astype(np.int64)

    inb = (ix >= 0) & (ix < spec.width_cells) & (iy >= 0) & (iy < spec.height_cells)
    hits.out_of_bounds = int((~inb).sum())
    if not inb.any():
        return hits

    ix, iy = ix[inb], iy[inb]
    z = cloud.xyz[inb, 2]
    cat = cloud.categories[inb]

    def cell_set(sel) -> set:
        if not sel.any():
            return set()
        pairs = np.unique(np.stack([ix[sel], iy[sel]], axis=1), axis=0)
        return {(int(a), int(b)) for a, b in pairs}

    hits.explored_cells = cell_set(np.ones_like(ix, dtype=bool))
    hits.obstacle_cells = cell_set((z >= z_low) & (z <= z_high))
    for c in np.unique(cat):
        if c > 0:
            hits.category_cells[int(c)] = cell_set(cat == c)
    return hits
