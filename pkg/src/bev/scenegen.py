"""Synthetic multi-person scenes with known ground truth.

People are placed in depth layers: members of a layer sit within
``LAYER_WIDTH`` of the layer's nearest member and consecutive layers are at
least ``LAYER_WIDTH + gamma`` apart, so the greedy layer derivation reproduces
the intended grouping and every cross-layer pair satisfies the depth-layer
margin exactly.
"""
from dataclasses import dataclass, field

import numpy as np

from .body_model import (DEFAULT_T_ALPHA, NUM_BETAS, NUM_POSE_JOINTS, BodyParams,
                         axis_angle_to_matrix, matrix_to_rot6d, smpl_plus_a)
from .camera import back_project, build_anchor_maps, project
from .dataio import (PersonAnnotation, PersonPrediction, PredictionScene, SceneAnnotation,
                     derive_depth_layers)
from .errors import PlacementInfeasible
from .losses import AGE_CLASSES, DEFAULT_GAMMA, AgeRanges
from .maps import DEFAULT_MAX_PEOPLE, DEFAULT_SIGMA, DEFAULT_THRESHOLD, parse_detections, render_gt_maps

MAX_RETRIES = 100
LAYER_WIDTH = 0.15        # < equal-depth threshold 0.2 and < gamma
MIN_DEPTH_JITTERED = 0.05

_UPRIGHT = axis_angle_to_matrix(np.array([np.pi, 0.0, 0.0]))   # model y-up -> camera y-down


@dataclass
class SceneSpec:
    seed: int = 0
    people_range: tuple = (3, 10)
    depth_range: tuple = (2.0, 14.0)
    lateral_fraction: float = 0.7        # central fraction of the frustum used for centres
    age_mix: dict = field(default_factory=lambda: {"adult": 0.7, "teen": 0.1, "child": 0.1,
                                                     "infant": 0.1})
    min_separation: int = 2              # image-plane cells (Chebyshev) between non-overlap pairs
    forced_overlap: bool = True
    layer_gap_extra: float = 1.0         # extra random spacing between layers (m)
    pose_noise: float = 0.2              # std of body-joint axis-angle (rad)
    shape_noise: float = 0.5

    def __post_init__(self):
        lo, hi = self.people_range
        if not (1 <= lo <= hi):
            raise ValueError("people_range must satisfy 1 <= min <= max")
        if not (0.0 < self.depth_range[0] < self.depth_range[1]):
            raise ValueError("depth_range must be a non-empty positive interval")
        if not (0.0 < self.lateral_fraction <= 1.0):
            raise ValueError("lateral_fraction must lie in (0, 1]")
        unknown = set(self.age_mix) - set(AGE_CLASSES)
        if unknown:
            raise ValueError(f"unknown age classes {sorted(unknown)}")
        if any(v < 0 for v in self.age_mix.values()) or abs(sum(self.age_mix.values()) - 1.0) > 1e-9:
            raise ValueError("age_mix fractions must be non-negative and sum to 1")
        if self.min_separation < 0:
            raise ValueError("min_separation must be >= 0")

    def to_dict(self):
        return {"seed": self.seed, "people_range": list(self.people_range),
                "depth_range": list(self.depth_range), "lateral_fraction": self.lateral_fraction,
                "age_mix": dict(self.age_mix), "min_separation": self.min_separation,
                "forced_overlap": self.forced_overlap, "layer_gap_extra": self.layer_gap_extra,
                "pose_noise": self.pose_noise, "shape_noise": self.shape_noise}


def sample_alpha(rng, k, ranges):
    lo, _, hi = ranges[k]
    lo = np.nextafter(lo, np.inf) if lo >= 0 else 0.0
    return float(rng.uniform(lo, min(hi, 1.0)))


def sample_params(rng, k, spec, ranges):
    aa = rng.normal(0.0, spec.pose_noise, (NUM_POSE_JOINTS, 3))
    rots = [axis_angle_to_matrix(v) for v in aa]
    yaw = axis_angle_to_matrix(np.array([0.0, rng.uniform(-np.pi, np.pi), 0.0]))
    rots[0] = _UPRIGHT @ yaw
    theta = np.stack([matrix_to_rot6d(r) for r in rots])
    beta = rng.normal(0.0, spec.shape_noise, NUM_BETAS)
    return BodyParams(theta, beta, sample_alpha(rng, k, ranges))


def _layered_depths(rng, n, spec, gamma):
    n_layers = int(rng.integers(1, n + 1))
    membership = np.sort(np.concatenate([np.arange(n_layers), rng.integers(0, n_layers, n - n_layers)]))
    anchors = [spec.depth_range[0] + rng.uniform(0.0, 0.5)]
    for _ in range(n_layers - 1):
        anchors.append(anchors[-1] + LAYER_WIDTH + gamma + rng.uniform(0.0, spec.layer_gap_extra))
    depths = np.empty(n)
    first = set()
    for i, layer in enumerate(membership):
        if layer not in first:
            depths[i] = anchors[layer]
            first.add(layer)
        else:
            depths[i] = anchors[layer] + rng.uniform(0.0, LAYER_WIDTH)
    return depths[rng.permutation(n)]


def _place_scene(rng, spec, grid, cam, gamma, n):
    depths = _layered_depths(rng, n, spec, gamma)
    if depths.max() > min(spec.depth_range[1], grid.d_max):
        return None
    bins = grid.bin_index(depths)
    overlap = None
    if spec.forced_overlap and n >= 2:
        cand = [(i, j) for i in range(n) for j in range(i + 1, n) if abs(bins[i] - bins[j]) >= 2]
        if not cand:
            return None
        overlap = cand[int(rng.integers(len(cand)))]
    margin = (1.0 - spec.lateral_fraction) / 2.0
    cells = np.zeros((n, 2), dtype=np.int64)
    uv = np.zeros((n, 2))
    for i in range(n):
        if overlap is not None and i == overlap[1]:
            # same image cell as its partner; the sub-cell position is free
            cells[i] = cells[overlap[0]]
            sx, sy = grid.cell_size(cam)
            uv[i] = (cells[i, 1] + rng.uniform(0.05, 0.95)) * sx, (cells[i, 0] + rng.uniform(0.05, 0.95)) * sy
            continue
        u = rng.uniform(margin, 1.0 - margin) * cam.width
        v = rng.uniform(margin, 1.0 - margin) * cam.height
        h, w = grid.cell_of_pixel(u, v, cam)
        cell = np.floor(np.array([h, w]) + 0.5).astype(np.int64)
        for j in range(i):
            if np.max(np.abs(cells[j] - cell)) < spec.min_separation:
                return None
        cells[i] = cell
        uv[i] = u, v
    if overlap is not None:
        # the overlapping partner must respect separation from everyone else
        i = overlap[1]
        for j in range(n):
            if j not in overlap and np.max(np.abs(cells[j] - cells[i])) < spec.min_separation:
                return None
    translations = back_project(uv, depths, cam)
    pos = grid.continuous_cell(translations, cam)
    cell3 = np.floor(pos + 0.5).astype(np.int64)
    if np.any(cell3 < 0) or np.any(cell3 >= np.array(grid.shape)):
        return None
    for i in range(n):
        for j in range(i + 1, n):
            if np.max(np.abs(cell3[i] - cell3[j])) < 2:
                return None
    return translations, overlap


def _draw_classes(rng, n, spec):
    names = list(spec.age_mix)
    probs = np.array([spec.age_mix[k] for k in names])
    return [names[i] for i in rng.choice(len(names), size=n, p=probs / probs.sum())]


def generate_scene(rng, spec, assets, grid, cam, t_alpha=DEFAULT_T_ALPHA, gamma=DEFAULT_GAMMA,
                   ranges=AgeRanges(), image_id="scene"):
    n = int(rng.integers(spec.people_range[0], spec.people_range[1] + 1))
    for _ in range(MAX_RETRIES):
        placed = _place_scene(rng, spec, grid, cam, gamma, n)
        if placed is not None:
            break
    else:
        raise PlacementInfeasible(f"{image_id}: could not place {n} people in {MAX_RETRIES} attempts")
    translations, overlap = placed
    classes = _draw_classes(rng, n, spec)
    layers = derive_depth_layers(translations[:, 2], gamma)
    people = []
    for i in range(n):
        params = sample_params(rng, classes[i], spec, ranges)
        joints = smpl_plus_a(params, assets, t_alpha).joints + translations[i]
        uv = project(joints, cam)
        vis = ((uv[:, 0] >= 0) & (uv[:, 0] < cam.width) & (uv[:, 1] >= 0) & (uv[:, 1] < cam.height))
        kp = np.column_stack([uv, vis.astype(np.float64)])
        people.append(PersonAnnotation(keypoints=kp, depth_layer=int(layers[i]), age_class=classes[i],
                                       gt_depth=float(translations[i, 2]),
                                       gt_translation=translations[i], gt_params=params))
    scene = SceneAnnotation(image_id=image_id, width=cam.width, height=cam.height, people=people)
    return scene, overlap


def generate(spec, n_scenes, assets, grid, cam, t_alpha=DEFAULT_T_ALPHA, gamma=DEFAULT_GAMMA,
             ranges=AgeRanges(), sigma=DEFAULT_SIGMA, with_maps=True):
    """``n_scenes`` scenes and their ground-truth maps, deterministic in ``spec.seed``.

    Each scene draws from its own child of the seed sequence, so scene ``i`` is
    the same whatever ``n_scenes`` is.
    """
    children = np.random.SeedSequence(spec.seed).spawn(n_scenes)
    scenes, maps = [], []
    for i, child in enumerate(children):
        rng = np.random.default_rng(child)
        scene, _ = generate_scene(rng, spec, assets, grid, cam, t_alpha, gamma, ranges,
                                  image_id=f"synth-{spec.seed}-{i:05d}")
        scenes.append(scene)
        if with_maps:
            maps.append(render_gt_maps([p.gt_translation for p in scene.people], grid, cam, sigma))
    return scenes, maps


def oracle_predictions(scenes, maps, grid, cam, threshold=DEFAULT_THRESHOLD, max_people=DEFAULT_MAX_PEOPLE,
                       anchors=None):
    """Parse ground-truth 3D maps; body parameters come from the person owning the peak cell.

    This stands in for a perfect regression head, so the detection path
    (peaks, offsets, anchors) is what the resulting predictions exercise.
    """
    anchors = build_anchor_maps(grid, cam) if anchors is None else anchors
    out = []
    for scene, m in zip(scenes, maps):
        owner = {}
        for p in scene.people:
            if p.gt_translation is not None:
                cell = tuple(int(c) for c in np.floor(grid.continuous_cell(p.gt_translation, cam) + 0.5))
                owner[cell] = p
        people = []
        for det in parse_detections(m.center3d, m.offset3d, anchors, threshold, max_people):
            src = owner.get(det.cell)
            people.append(PersonPrediction(translation=det.translation, confidence=det.confidence,
                                           params=None if src is None else src.gt_params))
        out.append(PredictionScene(image_id=scene.image_id, people=people))
    return out


def perturb(scenes, depth_jitter=0.0, kp_jitter=0.0, drop_rate=0.0, seed=0):
    """Degraded prediction records derived from ground truth.

    Depth noise moves each person along its camera ray (the image position is
    unchanged); keypoint noise is additive in pixels. Random numbers are drawn
    per person independently of the noise levels, so sweeping one level with a
    fixed seed perturbs the same people in the same directions.
    """
    if not (0.0 <= drop_rate <= 1.0):
        raise ValueError("drop_rate must lie in [0, 1]")
    if depth_jitter < 0 or kp_jitter < 0:
        raise ValueError("jitter levels must be non-negative")
    rng = np.random.default_rng(seed)
    out = []
    for scene in scenes:
        people = []
        for p in scene.people:
            if p.gt_translation is None:
                raise ValueError(f"{scene.image_id}: perturb needs gt_translation on every person")
            z_depth = rng.standard_normal()
            z_kp = rng.standard_normal(p.keypoints[:, :2].shape)
            u_drop = rng.random()
            if u_drop < drop_rate:
                continue
            t = np.asarray(p.gt_translation, dtype=np.float64)
            d_new = max(t[2] + depth_jitter * z_depth, MIN_DEPTH_JITTERED)
            people.append(PersonPrediction(translation=t * (d_new / t[2]), confidence=1.0,
                                           keypoints=p.keypoints[:, :2] + kp_jitter * z_kp,
                                           params=p.gt_params))
        out.append(PredictionScene(image_id=scene.image_id, people=people))
    return out
