"""Training objectives with analytic gradients.

Every loss returns its value together with the gradient w.r.t. its
differentiable inputs; ``bev.gradcheck`` verifies them by central differences.
"""
from dataclasses import dataclass, fields
from typing import Mapping, NamedTuple, Optional

import numpy as np

from . import kernels
from .body_model import NUM_BETAS, NUM_POSE_JOINTS, BodyParams, matrix_to_axis_angle, rot6d_to_matrix
from .camera import project_with_jacobian
from .errors import PriorFileCorrupt, ShapeMismatch, UnknownClass

DEFAULT_GAMMA = 0.3
AGE_CLASSES = ("adult", "teen", "child", "infant")
FOCAL_EPS = 1e-6


@dataclass(frozen=True)
class AgeRanges:
    """Per-class (lower, middle, upper) age-offset ranges."""

    adult: tuple = (-0.05, 0.0, 0.15)
    teen: tuple = (0.15, 0.3, 0.45)
    child: tuple = (0.45, 0.6, 0.75)
    infant: tuple = (0.75, 0.9, 1.0)

    def __post_init__(self):
        mids = []
        for k in AGE_CLASSES:
            lo, mid, hi = (float(v) for v in getattr(self, k))
            if not lo < mid < hi:
                raise ValueError(f"age range for {k} must satisfy lower < middle < upper")
            object.__setattr__(self, k, (lo, mid, hi))
            mids.append(mid)
        if any(b <= a for a, b in zip(mids, mids[1:])):
            raise ValueError("age class midpoints must be increasing adult -> infant")

    def __getitem__(self, k):
        if k not in AGE_CLASSES:
            raise UnknownClass(f"unknown age class {k!r}; expected one of {AGE_CLASSES}")
        return getattr(self, k)


@dataclass(frozen=True)
class LossWeights:
    w_cm: float = 1.0
    w_cm3d: float = 1.0
    w_theta: float = 1.0
    w_beta: float = 1.0
    w_prior: float = 1.0
    w_mpj: float = 1.0
    w_pmpj: float = 1.0
    w_pj2d: float = 1.0
    w_depth: float = 1.0
    w_age: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) >= 0:
                raise ValueError(f"{f.name} must be non-negative")

    def as_dict(self):
        return {f.name[2:]: getattr(self, f.name) for f in fields(self)}


# ---------------------------------------------------------------------------
# relative (weak-label) losses

def depth_layer_loss(d_i, d_j, r_i, r_j, gamma=DEFAULT_GAMMA):
    """Piece-wise depth-layer loss for one pair.

    Equal layers pull the depths together; for different layers a softplus
    penalty applies only while the depth gap is smaller than gamma times the
    layer gap (the binarisation maps 0 to 0). Returns (loss, (dL/dd_i, dL/dd_j)).
    """
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    loss, gi, gj = kernels.depth_layer_loss_batch(d_i, d_j, r_i, r_j, gamma)
    return float(loss), np.array([float(gi), float(gj)])


def scene_depth_loss(depths, layers, gamma=DEFAULT_GAMMA):
    """Mean depth-layer loss over all unordered pairs; gradient per person."""
    depths = np.asarray(depths, dtype=np.float64)
    layers = np.asarray(layers, dtype=np.int64)
    n = len(depths)
    if n < 2:
        return 0.0, np.zeros(n)
    i, j = np.triu_indices(n, k=1)
    loss, gi, gj = kernels.depth_layer_loss_batch(depths[i], depths[j], layers[i], layers[j], gamma)
    grad = np.zeros(n)
    np.add.at(grad, i, gi)
    np.add.at(grad, j, gj)
    return float(loss.mean()), grad / len(i)


def age_loss(alpha, k_g, ranges=AgeRanges()):
    """Zero inside the half-open class interval (lower, upper], squared distance to the middle outside."""
    lo, mid, hi = ranges[k_g]
    a = float(alpha)
    if lo < a <= hi:
        return 0.0, 0.0
    return (a - mid) ** 2, 2.0 * (a - mid)


# ---------------------------------------------------------------------------
# heatmap focal losses

def focal_loss(pred, gt, a=2.0, b=4.0, eps=FOCAL_EPS):
    """Penalty-reduced focal loss summed over cells, normalised by max(1, #positives).

    Positives are cells where gt == 1.  Predictions are clamped to [eps, 1 - eps];
    the gradient is zero where the clamp is active.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"pred {pred.shape} vs gt {gt.shape}")
    p = np.clip(pred, eps, 1.0 - eps)
    inside = (pred > eps) & (pred < 1.0 - eps)
    pos = gt == 1.0
    neg_w = (1.0 - gt) ** b
    log_p, log_q = np.log(p), np.log1p(-p)
    loss_pos = -((1.0 - p) ** a) * log_p
    loss_neg = -neg_w * p ** a * log_q
    cell = np.where(pos, loss_pos, loss_neg)
    norm = max(1.0, float(pos.sum()))
    g_pos = a * (1.0 - p) ** (a - 1.0) * log_p - (1.0 - p) ** a / p
    g_neg = -neg_w * (a * p ** (a - 1.0) * log_q - p ** a / (1.0 - p))
    grad = np.where(pos, g_pos, g_neg) * inside / norm
    return float(cell.sum() / norm), grad


def focal_loss_2d(pred, gt, a=2.0, b=4.0):
    if np.ndim(pred) != 3 or np.shape(pred)[0] != 1:
        raise ShapeMismatch("2D focal loss expects (1, H, W) maps")
    return focal_loss(pred, gt, a, b)


def focal_loss_3d(pred, gt, a=2.0, b=4.0):
    if np.ndim(pred) != 4 or np.shape(pred)[0] != 1:
        raise ShapeMismatch("3D focal loss expects (1, D, H, W) maps")
    return focal_loss(pred, gt, a, b)


# ---------------------------------------------------------------------------
# joint losses

def similarity_procrustes(source, target):
    """Scale, rotation and translation minimising |s R source + t - target|^2 (Umeyama)."""
    mu_s, mu_t = source.mean(0), target.mean(0)
    xs, xt = source - mu_s, target - mu_t
    var_s = np.sum(xs ** 2)
    U, S, Vt = np.linalg.svd(xt.T @ xs)
    sign = np.ones(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        sign[-1] = -1.0
    R = U @ np.diag(sign) @ Vt
    scale = float(np.sum(S * sign) / var_s) if var_s > 0 else 1.0
    t = mu_t - scale * R @ mu_s
    return scale, R, t


class JointLosses(NamedTuple):
    mpj: float
    pmpj: float
    grad_mpj: np.ndarray
    grad_pmpj: np.ndarray
    aligned: bool  # False when fewer than 3 visible joints (pmpj skipped, reported as 0)


def joint_losses(pred_J, gt_J, vis=None):
    """Mean squared 3D joint error, raw and after similarity Procrustes alignment.

    The aligned gradient holds the optimal alignment fixed; by the envelope
    theorem this is the exact gradient of the aligned loss.
    """
    pred = np.asarray(pred_J, dtype=np.float64)
    gt = np.asarray(gt_J, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"pred joints {pred.shape} vs gt {gt.shape}")
    vis = np.ones(len(pred), bool) if vis is None else np.asarray(vis).astype(bool)
    n = int(vis.sum())
    grad_mpj = np.zeros_like(pred)
    grad_pmpj = np.zeros_like(pred)
    if n == 0:
        return JointLosses(0.0, 0.0, grad_mpj, grad_pmpj, False)
    diff = pred[vis] - gt[vis]
    mpj = float(np.sum(diff ** 2) / n)
    grad_mpj[vis] = 2.0 * diff / n
    if n < 3:
        return JointLosses(mpj, 0.0, grad_mpj, grad_pmpj, False)
    s, R, t = similarity_procrustes(pred[vis], gt[vis])
    resid = s * pred[vis] @ R.T + t - gt[vis]
    pmpj = float(np.sum(resid ** 2) / n)
    grad_pmpj[vis] = 2.0 * s * resid @ R / n
    return JointLosses(mpj, pmpj, grad_mpj, grad_pmpj, True)


class ProjectionLoss(NamedTuple):
    loss: float
    grad_joints: np.ndarray
    grad_translation: np.ndarray
    no_visible: bool


def projection_loss(pred_J, translation, gt_kp2d, cam):
    """Mean squared pixel error of projected joints, in units of image height."""
    joints = np.asarray(pred_J, dtype=np.float64)
    trans = np.asarray(translation, dtype=np.float64)
    kp = np.asarray(gt_kp2d, dtype=np.float64)
    if kp.shape != (len(joints), 3):
        raise ShapeMismatch("gt keypoints must be (K, 3) with (u, v, visibility)")
    vis = kp[:, 2] > 0
    n = int(vis.sum())
    grad = np.zeros_like(joints)
    if n == 0:
        return ProjectionLoss(0.0, grad, np.zeros(3), True)
    uv, jac = project_with_jacobian(joints[vis] + trans, cam)
    r = (uv - kp[vis, :2]) / cam.height
    loss = float(np.sum(r ** 2) / n)
    grad[vis] = np.einsum("ka,kab->kb", 2.0 * r / (cam.height * n), jac)
    return ProjectionLoss(loss, grad, grad.sum(axis=0), False)


# ---------------------------------------------------------------------------
# parameter losses and pose prior

class ParamLosses(NamedTuple):
    theta: float
    beta: float
    grad_theta: np.ndarray
    grad_beta: np.ndarray


def param_losses(pred: BodyParams, gt: BodyParams):
    """Mean squared error of the 6D pose and the shape coefficients."""
    dt = pred.theta - gt.theta
    db = pred.beta - gt.beta
    return ParamLosses(float(np.mean(dt ** 2)), float(np.mean(db ** 2)),
                       2.0 * dt / dt.size, 2.0 * db / db.size)


@dataclass(frozen=True, eq=False)
class PoseMixturePrior:
    """Gaussian mixture over the 63-D axis-angle body pose (root excluded)."""

    weights: np.ndarray     # (M,)
    means: np.ndarray       # (M, P)
    precisions: np.ndarray  # (M, P, P)
    constants: np.ndarray   # (M,) per-component negative log normaliser and weight

    def __post_init__(self):
        try:
            w = np.asarray(self.weights, dtype=np.float64).reshape(-1)
            m = np.asarray(self.means, dtype=np.float64)
            p = np.asarray(self.precisions, dtype=np.float64)
            c = np.asarray(self.constants, dtype=np.float64).reshape(-1)
        except (TypeError, ValueError) as exc:
            raise PriorFileCorrupt(f"non-numeric prior arrays: {exc}") from exc
        M = w.size
        P = (NUM_POSE_JOINTS - 1) * 3
        if m.shape != (M, P) or p.shape != (M, P, P) or c.shape != (M,) or M == 0:
            raise PriorFileCorrupt(
                f"inconsistent prior shapes: weights {w.shape}, means {m.shape}, "
                f"precisions {p.shape}, constants {c.shape} (expected P={P})")
        if not all(np.all(np.isfinite(x)) for x in (w, m, p, c)):
            raise PriorFileCorrupt("prior arrays contain non-finite values")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "precisions", p)
        object.__setattr__(self, "constants", c)

    @classmethod
    def single_gaussian(cls, mean, precision, weight=1.0):
        """One-component prior with the proper Gaussian normaliser folded into the constant."""
        P = len(mean)
        sign, logdet = np.linalg.slogdet(precision)
        const = 0.5 * P * np.log(2 * np.pi) - 0.5 * logdet - np.log(weight)
        return cls(np.array([weight]), np.asarray(mean)[None], np.asarray(precision)[None],
                   np.array([const]))


def body_axis_angle(theta, with_jacobian=False):
    """Axis-angle (21, 3) of the non-root joints; optional d/d theta (21, 3, 22, 6)."""
    theta = np.asarray(theta, dtype=np.float64).reshape(NUM_POSE_JOINTS, 6)
    if not with_jacobian:
        return matrix_to_axis_angle(rot6d_to_matrix(theta[1:]))
    R, dR = rot6d_to_matrix(theta[1:], with_jacobian=True)
    aa, daa = matrix_to_axis_angle(R, with_jacobian=True)
    local = np.einsum("jiab,jabk->jik", daa, dR)  # (21, 3, 6)
    full = np.zeros((NUM_POSE_JOINTS - 1, 3, NUM_POSE_JOINTS, 6))
    for j in range(NUM_POSE_JOINTS - 1):
        full[j, :, j + 1, :] = local[j]
    return aa, full


def pose_prior(theta, prior: Optional[PoseMixturePrior] = None):
    """Max-mixture pose prior; falls back to 0.5 |axis-angle body pose|^2.

    Returns (loss, gradient (22, 6)).
    """
    aa, daa = body_axis_angle(theta, with_jacobian=True)
    x = aa.reshape(-1)
    dx = daa.reshape(x.size, NUM_POSE_JOINTS, 6)
    if prior is None:
        return float(0.5 * x @ x), np.einsum("p,pjk->jk", x, dx)
    diff = x[None] - prior.means
    quad = 0.5 * np.einsum("mp,mpq,mq->m", diff, prior.precisions, diff)
    energies = quad + prior.constants
    m = int(np.argmin(energies))
    sym = 0.5 * (prior.precisions[m] + prior.precisions[m].T)
    g_x = sym @ diff[m]
    return float(energies[m]), np.einsum("p,pjk->jk", g_x, dx)


# ---------------------------------------------------------------------------

def total_loss(terms: Mapping[str, float], weights: LossWeights = LossWeights()):
    """Weighted sum of named loss terms (names as in LossWeights without the 'w_' prefix)."""
    w = weights.as_dict()
    unknown = set(terms) - set(w)
    if unknown:
        raise KeyError(f"unknown loss terms: {sorted(unknown)}")
    breakdown = {k: w[k] * float(v) for k, v in terms.items()}
    return float(sum(breakdown.values())), breakdown
