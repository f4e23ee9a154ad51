"""Centre/offset maps: ground-truth rendering, view composition and 3D parsing.

Offsets are stored in cell units with channel order (x, y, d), i.e. along the
map's (w, h, depth-bin) axes, so ``anchor + metric(offset)`` is the exact
continuous centre.
"""
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import kernels
from .body_model import BodyParams
from .camera import AnchorMaps, depth_encoding, project
from .errors import OutOfBounds, OutOfFrustum, ShapeMismatch

DEFAULT_SIGMA = 2.0
DEFAULT_THRESHOLD = 0.2
DEFAULT_MAX_PEOPLE = 64
MESH_FEATURE_DIM = 128


@dataclass(eq=False)
class MapSet:
    front_center: np.ndarray  # (1, H, W)
    front_offset: np.ndarray  # (3, H, W)
    bev_center: np.ndarray    # (1, D, W)
    bev_offset: np.ndarray    # (1, D, W)
    center3d: np.ndarray      # (1, D, H, W)
    offset3d: np.ndarray      # (3, D, H, W)
    mesh_feature: Optional[np.ndarray] = None  # (C, H, W)

    ARRAYS = ("front_center", "front_offset", "bev_center", "bev_offset", "center3d", "offset3d",
              "mesh_feature")

    def as_dict(self):
        return {k: getattr(self, k) for k in self.ARRAYS if getattr(self, k) is not None}

    @classmethod
    def from_dict(cls, arrays):
        return cls(**{k: np.asarray(arrays[k]) for k in cls.ARRAYS if k in arrays})

    def equals(self, other):
        a, b = self.as_dict(), other.as_dict()
        return a.keys() == b.keys() and all(np.array_equal(a[k], b[k]) for k in a)


@dataclass(eq=False)
class Detection:
    translation: np.ndarray  # (x, y, d) metres
    confidence: float
    cell: tuple               # (d, h, w)
    params: Optional[BodyParams] = None
    extras: dict = field(default_factory=dict)


def _person_cells(people, grid, cam):
    people = np.asarray(people, dtype=np.float64).reshape(-1, 3)
    bad = []
    pos = np.zeros((len(people), 3))
    for i, p in enumerate(people):
        if not (grid.d_min <= p[2] <= grid.d_max):
            bad.append(i)
            continue
        pos[i] = grid.continuous_cell(p, cam)
    cells = np.floor(pos + 0.5).astype(np.int64)
    dims = np.array(grid.shape)
    for i in range(len(people)):
        if i not in bad and (np.any(cells[i] < 0) or np.any(cells[i] >= dims)):
            bad.append(i)
    if bad:
        raise OutOfFrustum(sorted(bad))
    return pos, cells


def render_gt_maps(people, grid, cam, sigma=DEFAULT_SIGMA, mesh_feature_dim=None):
    """Render ground-truth centre and offset maps for camera-space person centres.

    Kernels peak at 1 on each person's cell and merge by elementwise max; the
    offset channels hold the sub-cell residual at that cell.
    """
    pos, cells = _person_cells(people, grid, cam)
    D, H, W = grid.shape
    front = np.zeros((1, H, W))
    bev = np.zeros((1, D, W))
    c3d = np.zeros((1, D, H, W))
    front_off = np.zeros((3, H, W))
    bev_off = np.zeros((1, D, W))
    off3d = np.zeros((3, D, H, W))
    # fixed processing order makes the maps independent of input order
    order = np.lexsort((pos[:, 2], pos[:, 1], pos[:, 0])) if len(pos) else []
    for i in order:
        d, h, w = cells[i]
        od, oh, ow = pos[i] - cells[i]
        kernels.gaussian_splat_max(front[0][None], (0.0, h, w), sigma)
        kernels.gaussian_splat_max(bev[0][:, None, :], (d, 0.0, w), sigma)
        kernels.gaussian_splat_max(c3d[0], (d, h, w), sigma)
        front_off[:, h, w] = (ow, oh, od)
        bev_off[0, d, w] = od
        off3d[:, d, h, w] = (ow, oh, od)
    maps = MapSet(front, front_off, bev, bev_off, c3d, off3d)
    if mesh_feature_dim:
        maps.mesh_feature = np.zeros((mesh_feature_dim, H, W))
    return maps


def compose_3d(front_center, bev_center, refine: Optional[Callable] = None):
    """Expand the front (1, H, W) and bird's-eye (1, D, W) maps and multiply.

    ``refine`` is an optional hook applied to the composite (e.g. a learned
    3D refinement); its output is clipped back to [0, 1].
    """
    front = np.asarray(front_center, dtype=np.float64)
    bev = np.asarray(bev_center, dtype=np.float64)
    if front.ndim == 2:
        front = front[None]
    if bev.ndim == 2:
        bev = bev[None]
    if front.shape[0] != 1 or bev.shape[0] != 1 or front.ndim != 3 or bev.ndim != 3:
        raise ShapeMismatch("expected front (1, H, W) and bev (1, D, W)")
    if front.shape[2] != bev.shape[2]:
        raise ShapeMismatch(f"width mismatch: front W={front.shape[2]}, bev W={bev.shape[2]}")
    out = front[0][None, :, :] * bev[0][:, None, :]
    out = out[None]
    if refine is not None:
        out = np.clip(np.asarray(refine(out), dtype=np.float64), 0.0, 1.0)
        if out.shape != (1, bev.shape[1], front.shape[1], front.shape[2]):
            raise ShapeMismatch("refinement hook changed the map shape")
    return out


def compose_offsets_3d(front_offset, bev_offset):
    """3D offsets: (x, y) from the front view, depth from the bird's-eye view."""
    front = np.asarray(front_offset, dtype=np.float64)
    bev = np.asarray(bev_offset, dtype=np.float64)
    if front.shape[0] != 3 or bev.shape[0] != 1 or front.shape[2] != bev.shape[2]:
        raise ShapeMismatch("expected front offsets (3, H, W) and bev offsets (1, D, W)")
    D, H, W = bev.shape[1], front.shape[1], front.shape[2]
    out = np.empty((3, D, H, W))
    out[0] = front[0][None]
    out[1] = front[1][None]
    out[2] = bev[0][:, None, :]
    return out


def parse_detections(center3d, offset3d, anchors: AnchorMaps, threshold=DEFAULT_THRESHOLD,
                     max_people=DEFAULT_MAX_PEOPLE):
    """Peaks of the 3D centre map refined by the offset map.

    Strict 3x3x3 local maxima above ``threshold``; at most ``max_people``,
    highest confidence first, ties by (d, h, w).
    """
    c = np.asarray(center3d, dtype=np.float64)
    if c.ndim == 4:
        c = c[0]
    off = np.asarray(offset3d, dtype=np.float64)
    if c.shape != anchors.shape or off.shape != (3,) + anchors.shape:
        raise ShapeMismatch(f"maps {c.shape}/{off.shape} do not match anchors {anchors.shape}")
    idx, vals = kernels.local_maxima_3d(c, threshold)
    if len(vals) == 0:
        return []
    order = np.lexsort((idx[:, 2], idx[:, 1], idx[:, 0], -vals))[:max_people]
    out = []
    for k in order:
        cell = tuple(int(v) for v in idx[k])
        anchor = anchors.anchors[cell]
        translation = anchor + anchors.offset_to_metric(cell, off[(slice(None),) + cell])
        out.append(Detection(translation=translation, confidence=float(vals[k]), cell=cell))
    return out


def bilinear_sample(feature, h, w):
    """Sample (C, H, W) at continuous (h, w) inside [0, H-1] x [0, W-1]."""
    C, H, W = feature.shape
    if not (0.0 <= h <= H - 1 and 0.0 <= w <= W - 1):
        raise OutOfBounds(f"sample point (h={h:.3f}, w={w:.3f}) outside map {H}x{W}")
    h0 = min(int(np.floor(h)), H - 2)
    w0 = min(int(np.floor(w)), W - 2)
    th, tw = h - h0, w - w0
    return ((1 - th) * (1 - tw) * feature[:, h0, w0] + (1 - th) * tw * feature[:, h0, w0 + 1]
            + th * (1 - tw) * feature[:, h0 + 1, w0] + th * tw * feature[:, h0 + 1, w0 + 1])


def sample_mesh_features(mesh_feature, detection, grid, cam, dim=None, table=None):
    """Mesh feature at the detection's image position plus its depth encoding.

    This is the input vector of the (external) parameter-regression head.
    """
    feat = np.asarray(mesh_feature, dtype=np.float64)
    dim = feat.shape[0] if dim is None else dim
    if feat.shape[0] != dim:
        raise ShapeMismatch(f"mesh feature has {feat.shape[0]} channels, expected {dim}")
    if feat.shape[1:] != (grid.H, grid.W):
        raise ShapeMismatch("mesh feature map does not match the grid")
    uv = project(detection.translation, cam)
    h, w = grid.cell_of_pixel(uv[0], uv[1], cam)
    sampled = bilinear_sample(feat, float(h), float(w))
    enc, _ = depth_encoding(detection.translation[2], grid, dim, table=table)
    return sampled + enc
