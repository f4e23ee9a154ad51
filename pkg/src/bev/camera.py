"""Pinhole projection, voxelised camera anchor maps and depth encodings.

Camera space: x right, y down, d (= Z) forward, metres.  Pixel coordinates are
continuous with pixel ``i`` covering [i, i + 1); a map cell (h, w) of an
H x W map covers an image block and is represented by that block's centre.
"""
import math
from dataclasses import dataclass

import numpy as np

from .errors import BehindCamera, ShapeMismatch

MIN_DEPTH = 1e-6
SPACINGS = ("uniform", "inverse")


@dataclass(frozen=True)
class CameraIntrinsics:
    width: int = 512
    height: int = 512
    fov_deg: float = 60.0

    def __post_init__(self):
        if not (10.0 < self.fov_deg < 170.0):
            raise ValueError(f"fov_deg must lie in (10, 170), got {self.fov_deg}")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image dimensions must be positive")

    @property
    def focal(self):
        """Focal length in pixels from the vertical field of view."""
        return (self.height / 2.0) / math.tan(math.radians(self.fov_deg) / 2.0)

    @property
    def cx(self):
        return self.width / 2.0

    @property
    def cy(self):
        return self.height / 2.0

    def matrix(self):
        f = self.focal
        return np.array([[f, 0.0, self.cx], [0.0, f, self.cy], [0.0, 0.0, 1.0]])


def project(point, cam):
    """Perspective projection of (..., 3) camera-space points to (..., 2) pixels."""
    p = np.asarray(point, dtype=np.float64)
    z = p[..., 2]
    if np.any(~(z > MIN_DEPTH)):
        raise BehindCamera(f"point depth must exceed {MIN_DEPTH} m")
    f = cam.focal
    return np.stack([f * p[..., 0] / z + cam.cx, f * p[..., 1] / z + cam.cy], axis=-1)


def project_with_jacobian(points, cam):
    """Projection of (K, 3) points plus d(u, v)/d(X, Y, Z) of shape (K, 2, 3)."""
    p = np.asarray(points, dtype=np.float64)
    uv = project(p, cam)
    f = cam.focal
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    jac = np.zeros(p.shape[:-1] + (2, 3))
    jac[..., 0, 0] = f / z
    jac[..., 0, 2] = -f * x / z ** 2
    jac[..., 1, 1] = f / z
    jac[..., 1, 2] = -f * y / z ** 2
    return uv, jac


def back_project(uv, depth, cam):
    """Inverse of ``project`` at a given depth: (..., 2), (...) -> (..., 3)."""
    uv = np.asarray(uv, dtype=np.float64)
    d = np.asarray(depth, dtype=np.float64)
    f = cam.focal
    return np.stack([(uv[..., 0] - cam.cx) * d / f, (uv[..., 1] - cam.cy) * d / f,
                     np.broadcast_to(d, uv.shape[:-1])], axis=-1)


@dataclass(frozen=True)
class VoxelGrid:
    """Discretisation of the camera frustum into D depth bins x H x W map cells.

    Bin depths span [d_min, d_max] inclusively, evenly in depth ("uniform") or
    in inverse depth ("inverse").
    """

    D: int = 64
    H: int = 64
    W: int = 64
    d_min: float = 0.5
    d_max: float = 50.0
    spacing: str = "uniform"

    def __post_init__(self):
        if min(self.D, self.H, self.W) < 2:
            raise ValueError("D, H, W must all be >= 2")
        if not (0.0 < self.d_min < self.d_max):
            raise ValueError("need 0 < d_min < d_max")
        if self.spacing not in SPACINGS:
            raise ValueError(f"spacing must be one of {SPACINGS}")

    @property
    def shape(self):
        return (self.D, self.H, self.W)

    def depth_of_bin(self, pos):
        """Depth (m) at a continuous bin position; integers give bin centres."""
        t = np.asarray(pos, dtype=np.float64) / (self.D - 1)
        if self.spacing == "uniform":
            return self.d_min + t * (self.d_max - self.d_min)
        inv = 1.0 / self.d_min + t * (1.0 / self.d_max - 1.0 / self.d_min)
        return 1.0 / inv

    def bin_of_depth(self, depth):
        """Continuous bin position of a depth (inverse of ``depth_of_bin``)."""
        d = np.asarray(depth, dtype=np.float64)
        if self.spacing == "uniform":
            t = (d - self.d_min) / (self.d_max - self.d_min)
        else:
            t = (1.0 / self.d_min - 1.0 / d) / (1.0 / self.d_min - 1.0 / self.d_max)
        return t * (self.D - 1)

    def bin_index(self, depth):
        return np.floor(self.bin_of_depth(depth) + 0.5).astype(np.int64)

    def bin_depths(self):
        return self.depth_of_bin(np.arange(self.D))

    def bin_spacing(self, pos):
        """Local metric size of one bin (m) at a continuous bin position."""
        pos = np.asarray(pos, dtype=np.float64)
        if self.spacing == "uniform":
            return np.full(pos.shape, (self.d_max - self.d_min) / (self.D - 1))
        d = self.depth_of_bin(pos)
        return d * d * (1.0 / self.d_min - 1.0 / self.d_max) / (self.D - 1)

    def cell_size(self, cam):
        """Image pixels per map cell along (x, y)."""
        return cam.width / self.W, cam.height / self.H

    def pixel_of_cell(self, h, w, cam):
        sx, sy = self.cell_size(cam)
        return ((np.asarray(w, dtype=np.float64) + 0.5) * sx,
                (np.asarray(h, dtype=np.float64) + 0.5) * sy)

    def cell_of_pixel(self, u, v, cam):
        """Continuous (h, w) map coordinates of a pixel position."""
        sx, sy = self.cell_size(cam)
        return np.asarray(v, dtype=np.float64) / sy - 0.5, np.asarray(u, dtype=np.float64) / sx - 0.5

    def continuous_cell(self, point, cam):
        """Continuous (d, h, w) grid coordinates of camera-space point(s) (..., 3)."""
        p = np.asarray(point, dtype=np.float64)
        uv = project(p, cam)
        ch, cw = self.cell_of_pixel(uv[..., 0], uv[..., 1], cam)
        return np.stack([self.bin_of_depth(p[..., 2]), ch, cw], axis=-1)

    def point_of_cell(self, pos, cam):
        """Camera-space point at continuous (d, h, w) grid coordinates (..., 3)."""
        pos = np.asarray(pos, dtype=np.float64)
        u, v = self.pixel_of_cell(pos[..., 1], pos[..., 2], cam)
        return back_project(np.stack([u, v], axis=-1), self.depth_of_bin(pos[..., 0]), cam)


@dataclass(frozen=True, eq=False)
class AnchorMaps:
    """Camera-space (x, y, d) of every voxel centre, shape (D, H, W, 3)."""

    anchors: np.ndarray
    grid: VoxelGrid
    cam: CameraIntrinsics

    @property
    def shape(self):
        return self.anchors.shape[:3]

    def offset_to_metric(self, cell, offset):
        """Metric displacement of a cell-unit offset (ox, oy, od) at ``cell`` (d, h, w).

        The conversion follows the grid's local geometry exactly (perspective
        makes x/y spacing depth dependent), so anchor + result is the point at
        the continuous grid position cell + offset.  Depth is clamped to the grid.
        """
        d, h, w = (int(c) for c in cell)
        ox, oy, od = (float(o) for o in offset)
        pos_d = min(max(d + od, 0.0), self.grid.D - 1.0)
        target = self.grid.point_of_cell(np.array([pos_d, h + oy, w + ox]), self.cam)
        return target - self.anchors[d, h, w]


def build_anchor_maps(grid, cam):
    d = grid.bin_depths()[:, None, None]
    u, v = grid.pixel_of_cell(np.arange(grid.H)[:, None], np.arange(grid.W)[None, :], cam)
    f = cam.focal
    x = (u - cam.cx)[None] * d / f
    y = (v - cam.cy)[None] * d / f
    anchors = np.stack(np.broadcast_arrays(x, y, d), axis=-1)
    anchors = np.ascontiguousarray(anchors)
    anchors.flags.writeable = False
    return AnchorMaps(anchors=anchors, grid=grid, cam=cam)


def depth_encoding(depth, grid, dim=128, table=None):
    """Fixed sinusoidal encoding of a depth's continuous bin position.

    Returns ``(vector, clamped)``; ``clamped`` reports that the depth fell
    outside [d_min, d_max] and was clipped first.  When ``table`` (D, dim) is
    given, it replaces the sinusoids: rows are learned per-bin embeddings,
    linearly interpolated at the bin position.
    """
    if dim % 2:
        raise ValueError("encoding dimension must be even")
    d = float(depth)
    clamped = not (grid.d_min <= d <= grid.d_max)
    d = min(max(d, grid.d_min), grid.d_max)
    pos = float(grid.bin_of_depth(d))
    if table is not None:
        table = np.asarray(table, dtype=np.float64)
        if table.shape != (grid.D, dim):
            raise ShapeMismatch(f"embedding table must be ({grid.D}, {dim}), got {table.shape}")
        lo = min(int(math.floor(pos)), grid.D - 2)
        t = pos - lo
        return (1.0 - t) * table[lo] + t * table[lo + 1], clamped
    freqs = 1.0 / (10000.0 ** (np.arange(dim // 2) * 2.0 / dim))
    enc = np.empty(dim)
    enc[0::2] = np.sin(pos * freqs)
    enc[1::2] = np.cos(pos * freqs)
    return enc, clamped
