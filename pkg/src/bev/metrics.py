"""Evaluation: detection matching, PCDR, mPCK_h, mesh errors and F1 normalisation."""
from dataclasses import asdict, dataclass, field
from itertools import combinations
from typing import Optional

import numpy as np
from scipy.optimize import linear_sum_assignment

from .body_model import smpl_plus_a
from .camera import project
from .errors import MissingLayers, SceneCountMismatch, TopologyMismatch, ZeroF1
from .losses import AGE_CLASSES, similarity_procrustes

EQUAL_DEPTH_THRESHOLD = 0.2
PCK_FACTOR = 0.6
MATCH_FRACTION = 0.1   # of image height
HEAD_TOP_JOINT = 15    # SMPL "head"
NECK_JOINT = 12


@dataclass
class MatchResult:
    pairs: list = field(default_factory=list)          # (gt index, pred index, distance px)
    misses: list = field(default_factory=list)
    false_alarms: list = field(default_factory=list)

    def pred_for_gt(self):
        return {g: p for g, p, _ in self.pairs}


def assign_min_cost(dist, threshold):
    """Minimum-cost one-to-one assignment on a (n_gt, n_pred) cost matrix.

    Entries above ``threshold`` are made prohibitively expensive before solving
    and dropped afterwards, so they never displace a valid match.
    """
    dist = np.asarray(dist, dtype=np.float64)
    n_g, n_p = dist.shape
    res = MatchResult()
    if n_g == 0 or n_p == 0:
        res.misses = list(range(n_g))
        res.false_alarms = list(range(n_p))
        return res
    finite = dist[np.isfinite(dist)]
    big = 1e6 * (1.0 + (threshold if np.isfinite(threshold) else 0.0)
                 + (np.abs(finite).max() if finite.size else 0.0))
    cost = np.where(dist <= threshold, dist, big)
    rows, cols = linear_sum_assignment(cost)
    matched_g, matched_p = set(), set()
    for r, c in sorted(zip(rows.tolist(), cols.tolist())):
        if dist[r, c] <= threshold:
            res.pairs.append((r, c, float(dist[r, c])))
            matched_g.add(r)
            matched_p.add(c)
    res.misses = [g for g in range(n_g) if g not in matched_g]
    res.false_alarms = [p for p in range(n_p) if p not in matched_p]
    return res


def match_centers(gt_centers, pred_centers, threshold_px):
    """Assignment of predicted to ground-truth 2D centres by pixel distance."""
    gt = np.asarray(gt_centers, dtype=np.float64).reshape(-1, 2)
    pr = np.asarray(pred_centers, dtype=np.float64).reshape(-1, 2)
    dist = np.linalg.norm(gt[:, None, :] - pr[None, :, :], axis=-1)
    return assign_min_cost(dist.reshape(len(gt), len(pr)), threshold_px)


def gt_center_2d(person, cam):
    """Image position of a ground-truth person's centre (root)."""
    if person.gt_translation is not None:
        return project(person.gt_translation, cam)
    kp = person.keypoints
    if kp[0, 2] > 0:
        return kp[0, :2].copy()
    vis = kp[:, 2] > 0
    if not vis.any():
        return np.array([np.nan, np.nan])
    return kp[vis, :2].mean(axis=0)


def match_detections(gt_scenes, pred_scenes, cam, threshold_px=None):
    """Per-scene matching of predictions to annotations by projected centre distance."""
    if len(gt_scenes) != len(pred_scenes):
        raise SceneCountMismatch(f"{len(gt_scenes)} gt scenes vs {len(pred_scenes)} prediction scenes")
    threshold_px = MATCH_FRACTION * cam.height if threshold_px is None else threshold_px
    out = []
    for gs, ps in zip(gt_scenes, pred_scenes):
        gc = np.array([gt_center_2d(p, cam) for p in gs.people]).reshape(-1, 2)
        pc = np.array([project(p.translation, cam) for p in ps.people]).reshape(-1, 2)
        gc = np.where(np.isnan(gc), np.inf, gc)
        out.append(match_centers(gc, pc, threshold_px))
    return out


# ---------------------------------------------------------------------------
# depth relations

def pair_correct(r_i, r_j, pd_i, pd_j, eq_threshold=EQUAL_DEPTH_THRESHOLD):
    """Whether predicted depths respect one annotated layer relation (None = missed)."""
    if pd_i is None or pd_j is None:
        return False
    delta = pd_i - pd_j
    if r_i == r_j:
        return abs(delta) < eq_threshold
    return np.sign(delta) == np.sign(r_i - r_j)


def pcdr(scenes, eq_threshold=EQUAL_DEPTH_THRESHOLD, attribution="split"):
    """Percentage of correct depth relations, overall and per age class.

    ``scenes`` is a list of (layers, age_classes, predicted_depths) tuples, with
    ``None`` depths for missed people.  A mixed-class pair is attributed to
    both classes: with ``attribution="split"`` it carries weight 1/2 in each,
    which keeps the overall value a weighted mean of the class values; with
    ``"both"`` it counts fully in each.  Returns (overall %, {class: %}).
    Classes without pairs are omitted.
    """
    if attribution not in ("split", "both"):
        raise ValueError("attribution must be 'split' or 'both'")
    num = {k: 0.0 for k in AGE_CLASSES}
    den = {k: 0.0 for k in AGE_CLASSES}
    correct = total = 0
    for layers, classes, depths in scenes:
        if layers is None or any(r is None for r in layers):
            raise MissingLayers("depth layers required for PCDR")
        for i, j in combinations(range(len(layers)), 2):
            ok = bool(pair_correct(layers[i], layers[j], depths[i], depths[j], eq_threshold))
            correct += ok
            total += 1
            members = {classes[i], classes[j]}
            weight = 1.0 / len(members) if attribution == "split" else 1.0
            for k in members:
                num[k] += weight * ok
                den[k] += weight
    overall = 100.0 * correct / total if total else float("nan")
    per_class = {k: 100.0 * num[k] / den[k] for k in AGE_CLASSES if den[k] > 0}
    return overall, per_class


# ---------------------------------------------------------------------------
# 2D keypoints

def head_length(kp, head_top=HEAD_TOP_JOINT, neck=NECK_JOINT):
    """Head-top to neck distance, or 0.25 x visible-keypoint bbox diagonal as fallback."""
    kp = np.asarray(kp, dtype=np.float64)
    if max(head_top, neck) < len(kp) and kp[head_top, 2] > 0 and kp[neck, 2] > 0:
        hl = float(np.linalg.norm(kp[head_top, :2] - kp[neck, :2]))
        if hl > 0:
            return hl
    vis = kp[:, 2] > 0
    pts = kp[vis, :2]
    return 0.25 * float(np.linalg.norm(pts.max(0) - pts.min(0)))


def pck_person(gt_kp, pred_kp2d, factor=PCK_FACTOR, head_top=HEAD_TOP_JOINT, neck=NECK_JOINT):
    """Fraction of visible keypoints within factor x head length; None if none visible."""
    gt_kp = np.asarray(gt_kp, dtype=np.float64)
    vis = gt_kp[:, 2] > 0
    if not vis.any():
        return None
    thr = factor * head_length(gt_kp, head_top, neck)
    err = np.linalg.norm(np.asarray(pred_kp2d, dtype=np.float64)[vis, :2] - gt_kp[vis, :2], axis=1)
    return float(np.mean(err < thr))


def mpck_h(gt_kps, pred_kps, factor=PCK_FACTOR, head_top=HEAD_TOP_JOINT, neck=NECK_JOINT):
    """Mean PCK over people; ``pred_kps[i] is None`` marks a missed person (scores 0).

    Returns (mean, number of people skipped for lack of visible keypoints).
    """
    scores, skipped = [], 0
    for g, p in zip(gt_kps, pred_kps):
        if not (np.asarray(g)[:, 2] > 0).any():
            skipped += 1
            continue
        scores.append(0.0 if p is None else pck_person(g, p, factor, head_top, neck))
    return (float(np.mean(scores)) if scores else float("nan")), skipped


# ---------------------------------------------------------------------------
# 3D errors

def mesh_errors(gt_joints, pred_joints, gt_vertices=None, pred_vertices=None, root=0):
    """(MPJPE, MVE, PA-MPJPE) in millimetres for one matched person (inputs in metres).

    Both sides are aligned at their root joint; PA-MPJPE uses a similarity
    Procrustes fit of the prediction onto the ground truth. MVE is NaN when
    vertices are not given.
    """
    gj = np.asarray(gt_joints, dtype=np.float64)
    pj = np.asarray(pred_joints, dtype=np.float64)
    if gj.shape != pj.shape:
        raise TopologyMismatch(f"joint sets differ: {gj.shape} vs {pj.shape}")
    g_root, p_root = gj[root], pj[root]
    mpjpe = float(np.mean(np.linalg.norm((pj - p_root) - (gj - g_root), axis=1)))
    s, R, t = similarity_procrustes(pj, gj)
    pa = float(np.mean(np.linalg.norm(s * pj @ R.T + t - gj, axis=1)))
    mve = float("nan")
    if gt_vertices is not None and pred_vertices is not None:
        gv = np.asarray(gt_vertices, dtype=np.float64)
        pv = np.asarray(pred_vertices, dtype=np.float64)
        if gv.shape != pv.shape:
            raise TopologyMismatch(f"vertex sets differ: {gv.shape} vs {pv.shape}")
        mve = float(np.mean(np.linalg.norm((pv - p_root) - (gv - g_root), axis=1)))
    return 1000.0 * mpjpe, 1000.0 * mve, 1000.0 * pa


def detection_scores(n_matched, n_gt, n_pred):
    precision = n_matched / n_pred if n_pred else 0.0
    recall = n_matched / n_gt if n_gt else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


def normalized_errors(mpjpe, mve, f1):
    """NMJE and NMVE: errors divided by the detection F1 score."""
    if not (0.0 < f1 <= 1.0):
        raise ZeroF1(f"F1 must lie in (0, 1], got {f1}")
    return mpjpe / f1, mve / f1


# ---------------------------------------------------------------------------

@dataclass
class MetricsReport:
    pcdr: float
    pcdr_per_class: dict
    mpck: float
    precision: float
    recall: float
    f1: float
    mpjpe: float
    mve: float
    pa_mpjpe: float
    nmje: float
    nmve: float
    counts: dict
    config: dict = field(default_factory=dict)

    @classmethod
    def from_errors(cls, mpjpe, mve, f1, **kw):
        """Report built from aggregate numbers (useful to audit the normalisation)."""
        nmje, nmve = normalized_errors(mpjpe, mve, f1)
        base = dict(pcdr=float("nan"), pcdr_per_class={}, mpck=float("nan"), precision=float("nan"),
                    recall=float("nan"), pa_mpjpe=float("nan"), counts={}, config={})
        base.update(kw)
        return cls(mpjpe=mpjpe, mve=mve, f1=f1, nmje=nmje, nmve=nmve, **base)

    def to_dict(self):
        return _jsonable(asdict(self))

    def format_text(self):
        def fmt(x, nd=1):
            return "n/a" if x is None or (isinstance(x, float) and np.isnan(x)) else f"{x:.{nd}f}"
        lines = [
            "BEV evaluation report",
            f"  detection: precision {fmt(self.precision, 3)}  recall {fmt(self.recall, 3)}  F1 {fmt(self.f1, 3)}",
            f"  PCDR^0.2: all {fmt(self.pcdr, 2)}%  " + "  ".join(
                f"{k} {fmt(v, 2)}%" for k, v in self.pcdr_per_class.items()),
            f"  mPCK_h^0.6: {fmt(self.mpck, 3)}",
            f"  matched: MPJPE {fmt(self.mpjpe)} mm  MVE {fmt(self.mve)} mm  PA-MPJPE {fmt(self.pa_mpjpe)} mm",
            f"  all: NMJE {fmt(self.nmje)} mm  NMVE {fmt(self.nmve)} mm",
            "  counts: " + ", ".join(f"{k}={v}" for k, v in self.counts.items()),
        ]
        return "\n".join(lines)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def _pred_keypoints(pred, assets, cam, t_alpha):
    if pred.keypoints is not None:
        return np.asarray(pred.keypoints, dtype=np.float64)[:, :2]
    joints = _pred_joints(pred, assets, t_alpha)[0]
    if joints is None:
        return None
    return project(joints + pred.translation, cam)


def _pred_joints(pred, assets, t_alpha):
    if pred.params is not None and assets is not None:
        mesh = smpl_plus_a(pred.params, assets, t_alpha)
        joints = mesh.joints if pred.joints is None else np.asarray(pred.joints)
        return joints, mesh.vertices
    if pred.joints is not None:
        return np.asarray(pred.joints, dtype=np.float64), None
    return None, None


def evaluate(gt_scenes, pred_scenes, cam, assets=None, t_alpha=0.8, match_threshold_px=None,
             eq_threshold=EQUAL_DEPTH_THRESHOLD, pck_factor=PCK_FACTOR, attribution="split",
             config=None):
    """Full evaluation of prediction records against annotated scenes."""
    matches = match_detections(gt_scenes, pred_scenes, cam, match_threshold_px)
    pcdr_input, gt_kps, pred_kps = [], [], []
    joint_err, vert_err, pa_err = [], [], []
    n_gt = n_pred = n_matched = 0
    for gs, ps, m in zip(gt_scenes, pred_scenes, matches):
        n_gt += len(gs.people)
        n_pred += len(ps.people)
        n_matched += len(m.pairs)
        lookup = m.pred_for_gt()
        depths = [float(ps.people[lookup[g]].translation[2]) if g in lookup else None
                  for g in range(len(gs.people))]
        pcdr_input.append(([p.depth_layer for p in gs.people], [p.age_class for p in gs.people], depths))
        for g, person in enumerate(gs.people):
            gt_kps.append(person.keypoints)
            if g not in lookup:
                pred_kps.append(None)
                continue
            pred = ps.people[lookup[g]]
            pred_kps.append(_pred_keypoints(pred, assets, cam, t_alpha))
            if pred_kps[-1] is None:
                pred_kps[-1] = np.full((len(person.keypoints), 2), np.inf)
            if person.gt_params is None or assets is None:
                continue
            pj, pv = _pred_joints(pred, assets, t_alpha)
            if pj is None:
                continue
            gmesh = smpl_plus_a(person.gt_params, assets, t_alpha)
            e = mesh_errors(gmesh.joints, pj, gmesh.vertices, pv)
            joint_err.append(e[0])
            vert_err.append(e[1])
            pa_err.append(e[2])

    overall, per_class = (pcdr(pcdr_input, eq_threshold, attribution)
                          if any(len(s[0]) > 1 for s in pcdr_input) else (float("nan"), {}))
    mpck, skipped = mpck_h(gt_kps, pred_kps, pck_factor)
    precision, recall, f1 = detection_scores(n_matched, n_gt, n_pred)
    mean = lambda xs: float(np.nanmean(xs)) if xs and not np.all(np.isnan(xs)) else float("nan")
    mpjpe, mve, pa = mean(joint_err), mean(vert_err), mean(pa_err)
    if f1 > 0:
        nmje = mpjpe / f1
        nmve = mve / f1
    else:
        nmje = nmve = float("nan")
    counts = {"gt": n_gt, "predictions": n_pred, "matched": n_matched, "missed": n_gt - n_matched,
              "false_alarms": n_pred - n_matched, "pck_skipped": skipped}
    cfg = {"match_threshold_px": MATCH_FRACTION * cam.height if match_threshold_px is None
           else match_threshold_px, "eq_depth_threshold": eq_threshold, "pck_factor": pck_factor,
           "pcdr_attribution": attribution, "t_alpha": t_alpha,
           "camera": {"width": cam.width, "height": cam.height, "fov_deg": cam.fov_deg}}
    if config:
        cfg.update(config)
    return MetricsReport(pcdr=overall, pcdr_per_class=per_class, mpck=mpck, precision=precision,
                         recall=recall, f1=f1, mpjpe=mpjpe, mve=mve, pa_mpjpe=pa, nmje=nmje,
                         nmve=nmve, counts=counts, config=cfg)
