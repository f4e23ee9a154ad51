import numpy as np
import pytest
from hypothesis import given, strategies as st

from bev.camera import CameraIntrinsics, VoxelGrid, build_anchor_maps, depth_encoding
from bev.errors import OutOfBounds, OutOfFrustum, ShapeMismatch
from bev.maps import (Detection, bilinear_sample, compose_3d, compose_offsets_3d, parse_detections,
                      render_gt_maps, sample_mesh_features)

SMALL_CAM = CameraIntrinsics(128, 128)
SMALL_GRID = VoxelGrid(D=16, H=16, W=16, d_min=1.0, d_max=16.0)


def brute_local_maxima(vol, thr):
    D, H, W = vol.shape
    out = []
    for d in range(D):
        for h in range(H):
            for w in range(W):
                v = vol[d, h, w]
                if v < thr:
                    continue
                ok = True
                for dd in (-1, 0, 1):
                    for hh in (-1, 0, 1):
                        for ww in (-1, 0, 1):
                            if dd == hh == ww == 0:
                                continue
                            n = (d + dd, h + hh, w + ww)
                            if 0 <= n[0] < D and 0 <= n[1] < H and 0 <= n[2] < W and vol[n] >= v:
                                ok = False
                if ok:
                    out.append((d, h, w))
    return out


def brute_gaussian(shape, centres, sigma):
    out = np.zeros(shape)
    for idx in np.ndindex(*shape):
        for c in centres:
            out[idx] = max(out[idx], np.exp(-sum((i - ci) ** 2 for i, ci in zip(idx, c)) / (2 * sigma ** 2)))
    return out


def point_at_cell(cell, grid, cam, frac=(0.0, 0.0, 0.0)):
    return grid.point_of_cell(np.asarray(cell, float) + frac, cam)


def test_single_person_at_cell_centre():
    p = point_at_cell((5, 7, 9), SMALL_GRID, SMALL_CAM)
    m = render_gt_maps([p], SMALL_GRID, SMALL_CAM)
    assert m.center3d[0, 5, 7, 9] == 1.0
    assert np.allclose(m.offset3d[:, 5, 7, 9], 0, atol=1e-9)
    assert m.front_center[0, 7, 9] == 1.0 and m.bev_center[0, 5, 9] == 1.0


def test_render_matches_brute_force():
    cells = [(3, 4, 5), (9, 10, 2), (4, 5, 6)]
    people = [point_at_cell(c, SMALL_GRID, SMALL_CAM, (0.2, -0.3, 0.1)) for c in cells]
    m = render_gt_maps(people, SMALL_GRID, SMALL_CAM, sigma=2.0)
    assert np.allclose(m.center3d[0], brute_gaussian(SMALL_GRID.shape, cells, 2.0), atol=1e-12)
    assert np.allclose(m.front_center[0], brute_gaussian((16, 16), [c[1:] for c in cells], 2.0), atol=1e-12)
    assert np.allclose(m.bev_center[0], brute_gaussian((16, 16), [(c[0], c[2]) for c in cells], 2.0),
                       atol=1e-12)
    for c in cells:
        assert np.allclose(m.offset3d[:, c[0], c[1], c[2]], [0.1, -0.3, 0.2], atol=1e-9)
    assert np.all(np.abs(m.offset3d) <= 0.5)
    assert m.center3d.min() >= 0 and m.center3d.max() <= 1


def test_empty_maps():
    m = render_gt_maps([], SMALL_GRID, SMALL_CAM)
    assert all(not np.any(v) for v in m.as_dict().values())


def test_out_of_frustum():
    good = point_at_cell((3, 3, 3), SMALL_GRID, SMALL_CAM)
    with pytest.raises(OutOfFrustum) as exc:
        render_gt_maps([good, [0, 0, 100.0], [50.0, 0, 5.0]], SMALL_GRID, SMALL_CAM)
    assert exc.value.indices == [1, 2]


def test_same_pixel_different_depth():
    a = point_at_cell((2, 8, 8), SMALL_GRID, SMALL_CAM)
    b = point_at_cell((12, 8, 8), SMALL_GRID, SMALL_CAM)
    m = render_gt_maps([a, b], SMALL_GRID, SMALL_CAM)
    assert len(brute_local_maxima(m.front_center, 0.2)) == 1
    assert sorted(brute_local_maxima(m.center3d[0], 0.2)) == [(2, 8, 8), (12, 8, 8)]


def test_permutation_invariance(rng):
    cells = [(2, 3, 4), (7, 3, 4), (7, 9, 12), (13, 14, 1)]
    people = [point_at_cell(c, SMALL_GRID, SMALL_CAM, rng.uniform(-0.45, 0.45, 3)) for c in cells]
    ref = render_gt_maps(people, SMALL_GRID, SMALL_CAM)
    for _ in range(5):
        perm = rng.permutation(len(people))
        assert ref.equals(render_gt_maps([people[i] for i in perm], SMALL_GRID, SMALL_CAM))


def test_compose_algebra(rng):
    front = rng.random((1, 16, 16))
    bev = rng.random((1, 16, 16))
    c = compose_3d(front, bev)
    assert c.shape == (1, 16, 16, 16)
    assert not compose_3d(np.zeros_like(front), bev).any()
    ones = compose_3d(np.ones_like(front), bev)
    assert np.array_equal(ones[0], np.broadcast_to(bev[0][:, None, :], (16, 16, 16)))
    with pytest.raises(ShapeMismatch):
        compose_3d(front, rng.random((1, 16, 8)))


def test_compose_argmax():
    p = point_at_cell((11, 4, 6), SMALL_GRID, SMALL_CAM)
    m = render_gt_maps([p], SMALL_GRID, SMALL_CAM)
    c = compose_3d(m.front_center, m.bev_center)
    assert np.unravel_index(np.argmax(c[0]), c[0].shape) == (11, 4, 6)
    anchors = build_anchor_maps(SMALL_GRID, SMALL_CAM)
    off = compose_offsets_3d(m.front_offset, m.bev_offset)
    d1 = parse_detections(c, off, anchors)
    d2 = parse_detections(m.center3d, m.offset3d, anchors)
    assert [d.cell for d in d1] == [d.cell for d in d2] == [(11, 4, 6)]


def test_compose_refine_hook():
    front = np.full((1, 4, 4), 0.5)
    bev = np.full((1, 3, 4), 0.5)
    out = compose_3d(front, bev, refine=lambda x: 4 * x)
    assert np.all(out == 1.0)


def test_parse_round_trip(rng):
    anchors = build_anchor_maps(SMALL_GRID, SMALL_CAM)
    cells = [(2, 3, 4), (6, 3, 4), (9, 12, 13)]
    people = np.array([point_at_cell(c, SMALL_GRID, SMALL_CAM, rng.uniform(-0.49, 0.49, 3)) for c in cells])
    m = render_gt_maps(people, SMALL_GRID, SMALL_CAM)
    dets = parse_detections(m.center3d, m.offset3d, anchors, 0.2, 64)
    assert len(dets) == 3
    found = sorted(dets, key=lambda d: d.cell)
    for d, p in zip(found, people):
        assert np.max(np.abs(d.translation - p)) < 1e-9
    assert parse_detections(m.center3d, m.offset3d, anchors, threshold=1.1) == []


def test_parse_order_and_cap(rng):
    anchors = build_anchor_maps(SMALL_GRID, SMALL_CAM)
    vol = np.zeros((1,) + SMALL_GRID.shape)
    cells = [(1, 1, 1), (1, 1, 5), (5, 5, 5), (9, 9, 9), (12, 2, 12)]
    vals = [0.5, 0.9, 0.5, 0.7, 0.3]
    for c, v in zip(cells, vals):
        vol[(0,) + c] = v
    dets = parse_detections(vol, np.zeros((3,) + SMALL_GRID.shape), anchors, 0.2, 64)
    assert [d.cell for d in dets] == [(1, 1, 5), (9, 9, 9), (1, 1, 1), (5, 5, 5), (12, 2, 12)]
    capped = parse_detections(vol, np.zeros((3,) + SMALL_GRID.shape), anchors, 0.2, 2)
    assert [d.cell for d in capped] == [(1, 1, 5), (9, 9, 9)]


@given(st.integers(0, 2 ** 32 - 1))
def test_parse_matches_brute_force_peaks(seed):
    rng = np.random.default_rng(seed)
    g = VoxelGrid(D=5, H=6, W=7, d_min=1, d_max=5)
    anchors = build_anchor_maps(g, CameraIntrinsics(70, 60))
    vol = np.round(rng.random(g.shape), 1)   # coarse values make plateaus likely
    dets = parse_detections(vol[None], np.zeros((3,) + g.shape), anchors, 0.2, 1000)
    assert sorted(d.cell for d in dets) == sorted(brute_local_maxima(vol, 0.2))
    conf = [d.confidence for d in dets]
    assert all(a >= b for a, b in zip(conf, conf[1:]))


def test_bilinear_ramp():
    feat = np.array([[[0.0, 1.0], [2.0, 3.0]]])
    assert np.allclose(bilinear_sample(feat, 0.5, 0.5), [1.5])
    assert np.allclose(bilinear_sample(feat, 1.0, 1.0), [3.0])
    with pytest.raises(OutOfBounds):
        bilinear_sample(feat, 1.5, 0.0)


def test_sample_mesh_features():
    g, cam = SMALL_GRID, SMALL_CAM
    feat = np.full((8, g.H, g.W), 0.25)
    p1 = point_at_cell((4, 6, 7), g, cam)
    p2 = point_at_cell((9, 6, 7), g, cam)
    v1 = sample_mesh_features(feat, Detection(p1, 1.0, (4, 6, 7)), g, cam)
    v2 = sample_mesh_features(feat, Detection(p2, 1.0, (9, 6, 7)), g, cam)
    e1 = depth_encoding(p1[2], g, 8)[0]
    e2 = depth_encoding(p2[2], g, 8)[0]
    assert np.allclose(v1, 0.25 + e1)
    assert np.allclose(v1 - v2, e1 - e2)
    with pytest.raises(ShapeMismatch):
        sample_mesh_features(feat, Detection(p1, 1.0, (4, 6, 7)), g, cam, dim=16)
