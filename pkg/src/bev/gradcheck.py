"""Central finite-difference audit of every analytic gradient in the package.

Each suite draws random points away from piecewise boundaries, evaluates the
analytic gradient and compares it with central differences.  Relative error is
``|analytic - numeric| / max(|numeric|, |analytic|, floor)`` (Frobenius norms);
the floor keeps zero gradients (e.g. inside the age interval) from dividing by 0.

Cheap low-dimensional losses are checked along every coordinate.  The
high-dimensional ones (pose prior, body model) are checked along random unit
directions at every point, plus full coordinate-wise Jacobians at a few points.
"""
import time
from dataclasses import dataclass, field
from typing import Callable, List

import numpy as np

from . import losses
from .body_model import (DEFAULT_T_ALPHA, NUM_BETAS, NUM_PARAMS, NUM_POSE_JOINTS, BodyParams,
                         make_toy_assets, smpl_plus_a_batch, smpl_plus_a_jacobian)
from .camera import CameraIntrinsics

DEFAULT_STEP = 1e-5
DEFAULT_TOL = 1e-4
BOUNDARY_GAP = 1e-3
ERROR_FLOOR = 1e-6
N_DIRECTIONS = 3
N_FULL_JACOBIANS = 5


@dataclass
class SuiteResult:
    name: str
    n_points: int
    max_rel_error: float
    tol: float
    seconds: float
    worst_point: dict = field(default_factory=dict)

    @property
    def passed(self):
        return bool(self.max_rel_error < self.tol)

    def to_dict(self):
        return {"name": self.name, "points": self.n_points, "max_rel_error": self.max_rel_error,
                "tol": self.tol, "passed": self.passed, "seconds": round(self.seconds, 3)}


def rel_error(analytic, numeric, floor=ERROR_FLOOR):
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return float(np.linalg.norm(a - n) / max(np.linalg.norm(n), np.linalg.norm(a), floor))


def central_difference(f: Callable, x, step=DEFAULT_STEP):
    """Numeric gradient (or Jacobian, output dims first) of f at x, coordinate-wise."""
    x = np.asarray(x, dtype=np.float64)
    f0 = np.asarray(f(x), dtype=np.float64)
    out = np.empty(f0.shape + x.shape)
    flat = x.reshape(-1)
    for i in range(flat.size):
        e = np.zeros_like(flat)
        e[i] = step
        hi = np.asarray(f((flat + e).reshape(x.shape)))
        lo = np.asarray(f((flat - e).reshape(x.shape)))
        out.reshape(f0.shape + (-1,))[..., i] = (hi - lo) / (2.0 * step)
    return out


def directional_difference(f: Callable, x, direction, step=DEFAULT_STEP):
    x = np.asarray(x, dtype=np.float64)
    return (np.asarray(f(x + step * direction)) - np.asarray(f(x - step * direction))) / (2.0 * step)


def _unit(rng, shape):
    v = rng.standard_normal(shape)
    return v / np.linalg.norm(v)


class _Tracker:
    def __init__(self, name, tol):
        self.name, self.tol = name, tol
        self.worst, self.worst_point, self.n = 0.0, {}, 0
        self.t0 = time.perf_counter()

    def add(self, err, **point):
        if err > self.worst or not np.isfinite(err):
            self.worst = err if np.isfinite(err) else np.inf
            self.worst_point = {k: np.asarray(v).tolist() for k, v in point.items()}

    def result(self):
        return SuiteResult(self.name, self.n, self.worst, self.tol, time.perf_counter() - self.t0,
                           self.worst_point)


# ---------------------------------------------------------------------------
# suites

def suite_depth_layer(rng, n, step, tol, gamma=losses.DEFAULT_GAMMA):
    tr = _Tracker("depth_layer_loss", tol)
    while tr.n < n:
        d = rng.uniform(1.0, 10.0, 2)
        r = rng.integers(0, 4, 2)
        if r[0] != r[1] and abs((d[0] - d[1]) - gamma * (r[0] - r[1])) <= BOUNDARY_GAP:
            continue
        _, g = losses.depth_layer_loss(d[0], d[1], r[0], r[1], gamma)
        num = central_difference(lambda x: losses.depth_layer_loss(x[0], x[1], r[0], r[1], gamma)[0], d, step)
        tr.add(rel_error(g, num), d=d, r=r)
        tr.n += 1
    return tr.result()


def suite_age(rng, n, step, tol, ranges=losses.AgeRanges()):
    tr = _Tracker("age_loss", tol)
    while tr.n < n:
        k = losses.AGE_CLASSES[rng.integers(len(losses.AGE_CLASSES))]
        a = rng.uniform(0.0, 1.0)
        lo, _, hi = ranges[k]
        if min(abs(a - lo), abs(a - hi)) <= BOUNDARY_GAP:
            continue
        _, g = losses.age_loss(a, k, ranges)
        num = (losses.age_loss(a + step, k, ranges)[0] - losses.age_loss(a - step, k, ranges)[0]) / (2 * step)
        tr.add(rel_error(g, num), alpha=a, k=k)
        tr.n += 1
    return tr.result()


def _focal_suite(name, fn, shape, rng, n, step, tol):
    tr = _Tracker(name, tol)
    while tr.n < n:
        gt = rng.uniform(0.0, 0.9, shape)
        flat = gt.reshape(-1)
        flat[rng.choice(flat.size, size=rng.integers(0, 3), replace=False)] = 1.0
        pred = rng.uniform(0.02, 0.98, shape)
        _, g = fn(pred, gt)
        num = central_difference(lambda p: fn(p, gt)[0], pred, step)
        tr.add(rel_error(g, num), pred=pred, gt=gt)
        tr.n += 1
    return tr.result()


def suite_focal_2d(rng, n, step, tol):
    return _focal_suite("focal_loss_2d", losses.focal_loss_2d, (1, 4, 5), rng, n, step, tol)


def suite_focal_3d(rng, n, step, tol):
    return _focal_suite("focal_loss_3d", losses.focal_loss_3d, (1, 3, 3, 4), rng, n, step, tol)


def suite_projection(rng, n, step, tol, cam=CameraIntrinsics(), n_joints=8):
    tr = _Tracker("projection_loss", tol)
    while tr.n < n:
        joints = rng.uniform(-0.8, 0.8, (n_joints, 3))
        trans = np.array([rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(3.0, 10.0)])
        kp = np.column_stack([rng.uniform(0, cam.width, n_joints), rng.uniform(0, cam.height, n_joints),
                              rng.random(n_joints) < 0.8])
        res = losses.projection_loss(joints, trans, kp, cam)
        x = np.concatenate([joints.ravel(), trans])
        f = lambda v: losses.projection_loss(v[:-3].reshape(n_joints, 3), v[-3:], kp, cam).loss
        an = np.concatenate([res.grad_joints.ravel(), res.grad_translation])
        tr.add(rel_error(an, central_difference(f, x, step)), joints=joints, translation=trans)
        tr.n += 1
    return tr.result()


def suite_param(rng, n, step, tol):
    tr = _Tracker("param_losses", tol)
    while tr.n < n:
        gt = BodyParams(rng.standard_normal((NUM_POSE_JOINTS, 6)), rng.standard_normal(NUM_BETAS), 0.2)
        th = rng.standard_normal((NUM_POSE_JOINTS, 6))
        be = rng.standard_normal(NUM_BETAS)
        res = losses.param_losses(BodyParams(th, be, 0.2), gt)
        f_t = lambda t: losses.param_losses(BodyParams(t, be, 0.2), gt).theta
        f_b = lambda b: losses.param_losses(BodyParams(th, b, 0.2), gt).beta
        err = 0.0
        for _ in range(N_DIRECTIONS):
            u = _unit(rng, th.shape)
            err = max(err, rel_error(np.sum(res.grad_theta * u), directional_difference(f_t, th, u, step)))
        err = max(err, rel_error(res.grad_beta, central_difference(f_b, be, step)))
        if tr.n < N_FULL_JACOBIANS:
            err = max(err, rel_error(res.grad_theta, central_difference(f_t, th, step)))
        tr.add(err, theta=th, beta=be)
        tr.n += 1
    return tr.result()


def _random_prior(rng, n_components=3):
    P = (NUM_POSE_JOINTS - 1) * 3
    means = rng.normal(0.0, 0.3, (n_components, P))
    precisions = []
    for _ in range(n_components):
        A = rng.standard_normal((P, P)) / np.sqrt(P)
        precisions.append(A @ A.T + np.eye(P))
    consts = rng.uniform(0.0, 2.0, n_components)
    return losses.PoseMixturePrior(np.full(n_components, 1.0 / n_components), means,
                                   np.array(precisions), consts)


def _random_theta(rng):
    """6D pose whose body joints have rotation angles well inside (0, pi)."""
    from .body_model import axis_angle_to_matrix, matrix_to_rot6d
    theta = np.empty((NUM_POSE_JOINTS, 6))
    for j in range(NUM_POSE_JOINTS):
        axis = _unit(rng, 3)
        R = axis_angle_to_matrix(axis * rng.uniform(0.1, 2.5))
        # off-manifold 6D input: scaled and skewed columns decode to the same rotation
        theta[j] = matrix_to_rot6d(R) * rng.uniform(0.5, 2.0) + np.concatenate([np.zeros(3), 0.3 * R[:, 0]])
    return theta


def suite_prior(rng, n, step, tol):
    tr = _Tracker("pose_prior", tol)
    prior = _random_prior(rng)
    while tr.n < n:
        theta = _random_theta(rng)
        mixture = prior if tr.n % 2 else None
        if mixture is not None:
            x = losses.body_axis_angle(theta).reshape(-1)
            diff = x[None] - mixture.means
            e = np.sort(0.5 * np.einsum("mp,mpq,mq->m", diff, mixture.precisions, diff) + mixture.constants)
            if e[1] - e[0] <= BOUNDARY_GAP:
                continue
        _, g = losses.pose_prior(theta, mixture)
        f = lambda t: losses.pose_prior(t, mixture)[0]
        err = 0.0
        for _ in range(N_DIRECTIONS):
            u = _unit(rng, theta.shape)
            err = max(err, rel_error(np.sum(g * u), directional_difference(f, theta, u, step)))
        if tr.n < N_FULL_JACOBIANS:
            err = max(err, rel_error(g, central_difference(f, theta, step)))
        tr.add(err, theta=theta, mixture=mixture is not None)
        tr.n += 1
    return tr.result()


def suite_joint(rng, n, step, tol, n_joints=6):
    tr = _Tracker("joint_losses", tol)
    while tr.n < n:
        gt = rng.standard_normal((n_joints, 3))
        pred = gt @ np.linalg.qr(rng.standard_normal((3, 3)))[0].T * rng.uniform(0.5, 2) \
            + rng.normal(0, 0.3, (n_joints, 3))
        vis = rng.random(n_joints) < 0.8
        if vis.sum() < 3:
            continue
        res = losses.joint_losses(pred, gt, vis)
        err = max(rel_error(res.grad_mpj, central_difference(lambda p: losses.joint_losses(p, gt, vis).mpj,
                                                             pred, step)),
                  rel_error(res.grad_pmpj, central_difference(lambda p: losses.joint_losses(p, gt, vis).pmpj,
                                                              pred, step)))
        tr.add(err, pred=pred, gt=gt, vis=vis)
        tr.n += 1
    return tr.result()


def suite_smpl(rng, n, step, tol, assets=None, t_alpha=DEFAULT_T_ALPHA):
    """Body-model Jacobian: directional checks at all points, full checks at a few."""
    tr = _Tracker("smpl_plus_a_jacobian", tol)
    assets = make_toy_assets() if assets is None else assets

    def mesh(vec):
        vec = np.atleast_2d(vec)
        v, j = smpl_plus_a_batch(vec[:, :NUM_POSE_JOINTS * 6], vec[:, NUM_POSE_JOINTS * 6:-1], vec[:, -1],
                                 assets, t_alpha)
        return np.concatenate([v.reshape(len(vec), -1), j.reshape(len(vec), -1)], axis=1)

    while tr.n < n:
        alpha = rng.uniform(0.0, 1.0)
        if abs(alpha - t_alpha) <= BOUNDARY_GAP:
            continue
        params = BodyParams(_random_theta(rng), rng.normal(0, 0.5, NUM_BETAS), alpha)
        jac = smpl_plus_a_jacobian(params, assets, t_alpha)
        J = np.concatenate([jac.vertices.reshape(-1, NUM_PARAMS), jac.joints.reshape(-1, NUM_PARAMS)])
        x = params.as_vector()
        dirs = np.stack([_unit(rng, NUM_PARAMS) for _ in range(N_DIRECTIONS)])
        out = mesh(np.concatenate([x + step * dirs, x - step * dirs]))
        num = (out[:N_DIRECTIONS] - out[N_DIRECTIONS:]) / (2 * step)
        err = max(rel_error(J @ u, nu) for u, nu in zip(dirs, num))
        if tr.n < N_FULL_JACOBIANS:
            eye = np.eye(NUM_PARAMS) * step
            full = mesh(np.concatenate([x + eye, x - eye]))
            num_full = ((full[:NUM_PARAMS] - full[NUM_PARAMS:]) / (2 * step)).T
            err = max(err, rel_error(J, num_full))
        tr.add(err, alpha=alpha)
        tr.n += 1
    return tr.result()


SUITES = {
    "depth_layer_loss": suite_depth_layer,
    "age_loss": suite_age,
    "focal_loss_2d": suite_focal_2d,
    "focal_loss_3d": suite_focal_3d,
    "projection_loss": suite_projection,
    "param_losses": suite_param,
    "pose_prior": suite_prior,
    "joint_losses": suite_joint,
    "smpl_plus_a_jacobian": suite_smpl,
}


def run_suite(n_points=1000, seed=0, step=DEFAULT_STEP, tol=DEFAULT_TOL, names=None) -> List[SuiteResult]:
    """Run the named suites (all by default); each gets its own child seed."""
    names = list(SUITES) if names is None else list(names)
    unknown = [k for k in names if k not in SUITES]
    if unknown:
        raise KeyError(f"unknown gradient suites {unknown}; available: {list(SUITES)}")
    children = np.random.SeedSequence(seed).spawn(len(SUITES))
    seeds = dict(zip(SUITES, children))
    return [SUITES[k](np.random.default_rng(seeds[k]), n_points, step, tol) for k in names]


def format_results(results):
    lines = []
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        lines.append(f"{status} {r.name:<22} points={r.n_points:<5} max_rel_err={r.max_rel_error:.3e} "
                     f"tol={r.tol:.0e} ({r.seconds:.2f}s)")
    return "\n".join(lines)
