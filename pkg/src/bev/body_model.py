"""SMPL+A: an age-blended parametric body model.

For ``alpha <= t_alpha`` the rest mesh is a blend of adult and infant templates
plus shape and pose blend shapes, posed by linear blend skinning.  Above the
threshold the infant model (its own complete asset set) is evaluated instead.

Output meshes are root-relative: the skinned skeleton root sits at the origin.
All arithmetic is float64.
"""
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .errors import AssetMismatch, DegenerateRotation, InvalidParams

NUM_POSE_JOINTS = 22
NUM_BETAS = 10
POSE_FEATURE_DIM = (NUM_POSE_JOINTS - 1) * 9
DEFAULT_T_ALPHA = 0.8

# first 22 joints of the SMPL kinematic tree
SMPL_PARENTS = np.array([-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19])

# approximate SMPL rest skeleton (metres, y up), used only to shape toy assets
_TOY_REST_JOINTS = np.array([
    [0.0, 0.0, 0.0],      # pelvis
    [0.06, -0.09, 0.0],   # l_hip
    [-0.06, -0.09, 0.0],  # r_hip
    [0.0, 0.11, -0.02],   # spine1
    [0.10, -0.47, 0.0],   # l_knee
    [-0.10, -0.47, 0.0],  # r_knee
    [0.0, 0.24, 0.0],     # spine2
    [0.09, -0.87, -0.04], # l_ankle
    [-0.09, -0.87, -0.04],# r_ankle
    [0.0, 0.29, 0.02],    # spine3
    [0.12, -0.93, 0.08],  # l_foot
    [-0.12, -0.93, 0.08], # r_foot
    [0.0, 0.51, 0.0],     # neck
    [0.08, 0.42, 0.0],    # l_collar
    [-0.08, 0.42, 0.0],   # r_collar
    [0.0, 0.60, 0.03],    # head
    [0.18, 0.45, -0.01],  # l_shoulder
    [-0.18, 0.45, -0.01], # r_shoulder
    [0.44, 0.45, -0.03],  # l_elbow
    [-0.44, 0.45, -0.03], # r_elbow
    [0.69, 0.45, -0.02],  # l_wrist
    [-0.69, 0.45, -0.02], # r_wrist
])

REST_6D = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])

# column layout of MeshJacobian arrays
THETA_SLICE = slice(0, NUM_POSE_JOINTS * 6)
BETA_SLICE = slice(NUM_POSE_JOINTS * 6, NUM_POSE_JOINTS * 6 + NUM_BETAS)
ALPHA_INDEX = NUM_POSE_JOINTS * 6 + NUM_BETAS
NUM_PARAMS = ALPHA_INDEX + 1


@dataclass(frozen=True, eq=False)
class BodyParams:
    """Pose (22 x 6D rotations), shape (10 PCA weights) and age offset in [0, 1]."""

    theta: np.ndarray
    beta: np.ndarray
    alpha: float

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=np.float64)
        beta = np.asarray(self.beta, dtype=np.float64)
        if theta.size != NUM_POSE_JOINTS * 6:
            raise InvalidParams(f"theta must have {NUM_POSE_JOINTS * 6} entries, got {theta.size}")
        if beta.size != NUM_BETAS:
            raise InvalidParams(f"beta must have {NUM_BETAS} entries, got {beta.size}")
        alpha = float(self.alpha)
        if not (0.0 <= alpha <= 1.0):
            raise InvalidParams(f"alpha must lie in [0, 1], got {alpha}")
        if not (np.all(np.isfinite(theta)) and np.all(np.isfinite(beta))):
            raise InvalidParams("theta/beta must be finite")
        theta = theta.reshape(NUM_POSE_JOINTS, 6).copy()
        beta = beta.reshape(NUM_BETAS).copy()
        theta.flags.writeable = False
        beta.flags.writeable = False
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "alpha", alpha)

    @classmethod
    def rest(cls, alpha=0.0, beta=None):
        return cls(np.tile(REST_6D, (NUM_POSE_JOINTS, 1)),
                   np.zeros(NUM_BETAS) if beta is None else beta, alpha)

    def as_vector(self):
        return np.concatenate([self.theta.ravel(), self.beta, [self.alpha]])

    @classmethod
    def from_vector(cls, vec):
        vec = np.asarray(vec, dtype=np.float64)
        return cls(vec[THETA_SLICE], vec[BETA_SLICE], vec[ALPHA_INDEX])

    def to_dict(self):
        return {"theta": self.theta.tolist(), "beta": self.beta.tolist(), "alpha": self.alpha}

    @classmethod
    def from_dict(cls, data):
        return cls(np.asarray(data["theta"], dtype=np.float64),
                   np.asarray(data["beta"], dtype=np.float64), data["alpha"])

    def __eq__(self, other):
        if not isinstance(other, BodyParams):
            return NotImplemented
        return (np.array_equal(self.theta, other.theta) and np.array_equal(self.beta, other.beta)
                and self.alpha == other.alpha)

    def __repr__(self):
        return f"BodyParams(alpha={self.alpha:.4g}, |beta|={np.linalg.norm(self.beta):.4g})"


@dataclass(frozen=True, eq=False)
class BodyModelAssets:
    """Everything that defines the model function.

    Shapes: templates (V, 3); shape_dirs (V, 3, 10); pose_dirs (V, 3, 189);
    skin_weights (V, J); joint_regressor_skel (J, V); joint_regressor_eval (K, V);
    kinematic_parents (J,) with -1 at the root; faces (F, 3) or None.
    ``infant_assets`` is the complete asset set of the infant branch.
    """

    template_adult: np.ndarray
    template_infant: np.ndarray
    shape_dirs: np.ndarray
    pose_dirs: np.ndarray
    skin_weights: np.ndarray
    joint_regressor_skel: np.ndarray
    joint_regressor_eval: np.ndarray
    kinematic_parents: np.ndarray
    faces: Optional[np.ndarray] = None
    infant_assets: Optional["BodyModelAssets"] = None

    def __post_init__(self):
        for name in ("template_adult", "template_infant", "shape_dirs", "pose_dirs", "skin_weights",
                     "joint_regressor_skel", "joint_regressor_eval"):
            arr = np.array(getattr(self, name), dtype=np.float64)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        parents = np.array(self.kinematic_parents, dtype=np.int64)
        parents.flags.writeable = False
        object.__setattr__(self, "kinematic_parents", parents)
        if self.faces is not None:
            faces = np.array(self.faces, dtype=np.int64)
            faces.flags.writeable = False
            object.__setattr__(self, "faces", faces)
        self._check_dims()

    def _check_dims(self):
        V = self.template_adult.shape[0]
        J = self.kinematic_parents.shape[0]
        problems = []
        if self.template_adult.shape != (V, 3):
            problems.append(f"template_adult shape {self.template_adult.shape}")
        if self.template_infant.shape != (V, 3):
            problems.append(f"template_infant shape {self.template_infant.shape} != ({V}, 3)")
        if self.shape_dirs.shape != (V, 3, NUM_BETAS):
            problems.append(f"shape_dirs shape {self.shape_dirs.shape} != ({V}, 3, {NUM_BETAS})")
        if self.pose_dirs.shape != (V, 3, (J - 1) * 9):
            problems.append(f"pose_dirs shape {self.pose_dirs.shape} != ({V}, 3, {(J - 1) * 9})")
        if self.skin_weights.shape != (V, J):
            problems.append(f"skin_weights shape {self.skin_weights.shape} != ({V}, {J})")
        if self.joint_regressor_skel.shape != (J, V):
            problems.append(f"joint_regressor_skel shape {self.joint_regressor_skel.shape} != ({J}, {V})")
        if self.joint_regressor_eval.ndim != 2 or self.joint_regressor_eval.shape[1] != V:
            problems.append(f"joint_regressor_eval shape {self.joint_regressor_eval.shape} != (K, {V})")
        if J != NUM_POSE_JOINTS:
            problems.append(f"expected {NUM_POSE_JOINTS} skeleton joints, got {J}")
        if J and self.kinematic_parents[0] != -1:
            problems.append("kinematic_parents[0] must be -1")
        for j in range(1, J):
            if not (0 <= self.kinematic_parents[j] < j):
                problems.append(f"kinematic_parents[{j}]={self.kinematic_parents[j]} is not an earlier joint")
        if self.faces is not None and self.faces.size and (self.faces.min() < 0 or self.faces.max() >= V):
            problems.append("faces index out of range")
        if self.infant_assets is not None:
            inf = self.infant_assets
            if inf.template_adult.shape[0] != V:
                # vertex counts must agree so both branches share 𝒥 dimensions
                problems.append("infant_assets vertex count differs")
            if inf.joint_regressor_eval.shape[0] != self.joint_regressor_eval.shape[0]:
                problems.append("infant_assets evaluation joint count differs")
        if problems:
            raise AssetMismatch("; ".join(problems))

    @property
    def num_vertices(self):
        return self.template_adult.shape[0]

    @property
    def num_joints(self):
        return self.kinematic_parents.shape[0]

    @property
    def num_eval_joints(self):
        return self.joint_regressor_eval.shape[0]

    def invariant_violations(self, tol=1e-6):
        """List of human-readable numeric invariant failures (empty when healthy)."""
        out = []
        w = self.skin_weights
        if np.any(w < 0):
            out.append("negative skin weights")
        bad = np.nonzero(np.abs(w.sum(axis=1) - 1.0) > tol)[0]
        if bad.size:
            out.append(f"skin weight rows not summing to 1: {bad[:10].tolist()}")
        for name in ("joint_regressor_skel", "joint_regressor_eval"):
            rows = np.nonzero(np.abs(getattr(self, name).sum(axis=1) - 1.0) > tol)[0]
            if rows.size:
                out.append(f"{name} rows not summing to 1: {rows[:10].tolist()}")
        if self.infant_assets is not None:
            out.extend("infant: " + v for v in self.infant_assets.invariant_violations(tol))
        return out


@dataclass(frozen=True, eq=False)
class BodyMesh:
    vertices: np.ndarray  # (V, 3) metres, root-relative
    joints: np.ndarray    # (K, 3)


class MeshJacobian(NamedTuple):
    """Derivatives of a mesh w.r.t. the flat parameter vector (theta, beta, alpha).

    ``vertices`` is (V, 3, 143), ``joints`` (K, 3, 143); columns follow
    THETA_SLICE / BETA_SLICE / ALPHA_INDEX.
    """

    vertices: np.ndarray
    joints: np.ndarray

    def split(self, which="vertices"):
        arr = getattr(self, which)
        lead = arr.shape[:-1]
        return (arr[..., THETA_SLICE].reshape(lead + (NUM_POSE_JOINTS, 6)),
                arr[..., BETA_SLICE], arr[..., ALPHA_INDEX])


# ---------------------------------------------------------------------------
# rotations

def _skew(v):
    z = np.zeros(v.shape[:-1])
    return np.stack([
        np.stack([z, -v[..., 2], v[..., 1]], -1),
        np.stack([v[..., 2], z, -v[..., 0]], -1),
        np.stack([-v[..., 1], v[..., 0], z], -1),
    ], -2)


def rot6d_to_matrix(r, with_jacobian=False):
    """Decode 6D rotations (..., 6) into rotation matrices (..., 3, 3).

    The two 3-vectors are Gram-Schmidt orthonormalised and completed with a
    cross product; they become the first two columns of the matrix.
    With ``with_jacobian`` also returns dR/dr of shape (..., 3, 3, 6).
    """
    r = np.asarray(r, dtype=np.float64)
    if r.shape[-1] != 6:
        raise DegenerateRotation(f"6D rotation must have 6 values, got shape {r.shape}")
    a1, a2 = r[..., :3], r[..., 3:]
    n1 = np.linalg.norm(a1, axis=-1)
    if np.any(~(n1 > 1e-8)):
        raise DegenerateRotation("first 6D column has (near) zero norm")
    b1 = a1 / n1[..., None]
    dot = np.sum(b1 * a2, axis=-1)
    u = a2 - dot[..., None] * b1
    n2 = np.linalg.norm(u, axis=-1)
    if np.any(~(n2 > 1e-8)):
        raise DegenerateRotation("6D columns are (near) parallel")
    b2 = u / n2[..., None]
    b3 = np.cross(b1, b2)
    R = np.stack([b1, b2, b3], axis=-1)
    if not with_jacobian:
        return R

    eye = np.eye(3)
    Db1 = (eye - b1[..., :, None] * b1[..., None, :]) / n1[..., None, None]
    du_da1 = -(dot[..., None, None] * eye + b1[..., :, None] * a2[..., None, :]) @ Db1
    du_da2 = eye - b1[..., :, None] * b1[..., None, :]
    Db2u = (eye - b2[..., :, None] * b2[..., None, :]) / n2[..., None, None]
    db2_da1 = Db2u @ du_da1
    db2_da2 = Db2u @ du_da2
    db3_da1 = -_skew(b2) @ Db1 + _skew(b1) @ db2_da1
    db3_da2 = _skew(b1) @ db2_da2

    dR = np.zeros(r.shape[:-1] + (3, 3, 6))
    dR[..., :, 0, :3] = Db1
    dR[..., :, 1, :3] = db2_da1
    dR[..., :, 1, 3:] = db2_da2
    dR[..., :, 2, :3] = db3_da1
    dR[..., :, 2, 3:] = db3_da2
    return R, dR


def matrix_to_rot6d(R):
    R = np.asarray(R, dtype=np.float64)
    return np.concatenate([R[..., :, 0], R[..., :, 1]], axis=-1)


def axis_angle_to_matrix(aa):
    aa = np.asarray(aa, dtype=np.float64)
    angle = np.linalg.norm(aa, axis=-1)[..., None, None]
    K = _skew(aa)
    small = angle < 1e-12
    safe = np.where(small, 1.0, angle)
    s = np.where(small, 1.0, np.sin(safe) / safe)
    c = np.where(small, 0.5, (1.0 - np.cos(safe)) / safe ** 2)
    return np.eye(3) + s * K + c * (K @ K)


def matrix_to_axis_angle(R, with_jacobian=False):
    """Log map (..., 3, 3) -> (..., 3); optional d omega / dR (..., 3, 3, 3).

    Derived from w = vee(R - R^T)/2 = sin(t) * axis and cos(t) = (tr R - 1)/2,
    so it stays smooth for any 3x3 input away from t = 0 and t = pi.
    """
    R = np.asarray(R, dtype=np.float64)
    w = 0.5 * np.stack([R[..., 2, 1] - R[..., 1, 2],
                        R[..., 0, 2] - R[..., 2, 0],
                        R[..., 1, 0] - R[..., 0, 1]], -1)
    c = 0.5 * (np.trace(R, axis1=-2, axis2=-1) - 1.0)
    s = np.linalg.norm(w, axis=-1)
    t = np.arctan2(s, c)
    small = s < 1e-9
    s_safe = np.where(small, 1.0, s)
    g = np.where(small, 1.0, t / s_safe)
    omega = g[..., None] * w
    if not with_jacobian:
        return omega

    # dw/dR
    dw = np.zeros(R.shape[:-2] + (3, 3, 3))
    dw[..., 0, 2, 1] = 0.5
    dw[..., 0, 1, 2] = -0.5
    dw[..., 1, 0, 2] = 0.5
    dw[..., 1, 2, 0] = -0.5
    dw[..., 2, 1, 0] = 0.5
    dw[..., 2, 0, 1] = -0.5
    dc = 0.5 * np.broadcast_to(np.eye(3), R.shape).copy()
    ds = np.einsum("...i,...iab->...ab", w / s_safe[..., None], dw)
    denom = s ** 2 + c ** 2
    dt = (c[..., None, None] * ds - s[..., None, None] * dc) / denom[..., None, None]
    dg = (dt - g[..., None, None] * ds) / s_safe[..., None, None]
    dg = np.where(small[..., None, None], 0.0, dg)
    domega = g[..., None, None, None] * dw + w[..., :, None, None] * dg[..., None, :, :]
    return omega, domega


# ---------------------------------------------------------------------------
# model evaluation

def _lbs_batch(template, assets, rot, beta):
    """Skin a batch. template (N, V, 3), rot (N, J, 3, 3), beta (N, 10) -> (verts, joints_skel)."""
    N = rot.shape[0]
    J = assets.num_joints
    parents = assets.kinematic_parents
    v_shaped = template + np.einsum("vak,nk->nva", assets.shape_dirs, beta)
    joints = np.einsum("jv,nva->nja", assets.joint_regressor_skel, v_shaped)
    pose_feat = (rot[:, 1:] - np.eye(3)).reshape(N, -1)
    v_posed = v_shaped + np.einsum("vap,np->nva", assets.pose_dirs, pose_feat)

    G_R = np.empty((N, J, 3, 3))
    G_t = np.empty((N, J, 3))
    G_R[:, 0] = rot[:, 0]
    G_t[:, 0] = joints[:, 0]
    for j in range(1, J):
        p = parents[j]
        G_R[:, j] = G_R[:, p] @ rot[:, j]
        G_t[:, j] = np.einsum("nab,nb->na", G_R[:, p], joints[:, j] - joints[:, p]) + G_t[:, p]
    A_t = G_t - np.einsum("njab,njb->nja", G_R, joints)
    T_R = np.einsum("vj,njab->nvab", assets.skin_weights, G_R)
    T_t = np.einsum("vj,nja->nva", assets.skin_weights, A_t)
    verts = np.einsum("nvab,nvb->nva", T_R, v_posed) + T_t
    # root joint is a fixed point of the root transform
    verts = verts - joints[:, :1]
    return verts


def _check_assets(assets):
    if not isinstance(assets, BodyModelAssets):
        raise AssetMismatch("assets must be a BodyModelAssets instance")


def smpl_plus_a_batch(theta, beta, alpha, assets, t_alpha=DEFAULT_T_ALPHA):
    """Vectorised model over N parameter sets without range validation.

    theta (N, 22, 6), beta (N, 10), alpha (N,) -> vertices (N, V, 3), joints (N, K, 3).
    Used by the finite-difference oracles, which step alpha across [0, 1] edges.
    """
    _check_assets(assets)
    theta = np.asarray(theta, dtype=np.float64).reshape(-1, NUM_POSE_JOINTS, 6)
    beta = np.asarray(beta, dtype=np.float64).reshape(-1, NUM_BETAS)
    alpha = np.asarray(alpha, dtype=np.float64).reshape(-1)
    N = theta.shape[0]
    rot = rot6d_to_matrix(theta)
    verts = np.empty((N, assets.num_vertices, 3))
    infant = alpha > t_alpha
    adult = ~infant
    if np.any(adult):
        a = alpha[adult][:, None, None]
        template = (1.0 - a) * assets.template_adult + a * assets.template_infant
        verts[adult] = _lbs_batch(template, assets, rot[adult], beta[adult])
    if np.any(infant):
        if assets.infant_assets is None:
            raise AssetMismatch("alpha above t_alpha requires infant_assets")
        inf = assets.infant_assets
        template = np.broadcast_to(inf.template_adult, (int(infant.sum()),) + inf.template_adult.shape)
        verts[infant] = _lbs_batch(template, inf, rot[infant], beta[infant])
    joints = np.einsum("kv,nva->nka", assets.joint_regressor_eval, verts)
    return verts, joints


def smpl_plus_a(params, assets, t_alpha=DEFAULT_T_ALPHA):
    """Evaluate the SMPL+A mesh for one person."""
    if not isinstance(params, BodyParams):
        raise InvalidParams("params must be BodyParams")
    verts, joints = smpl_plus_a_batch(params.theta[None], params.beta[None], [params.alpha],
                                      assets, t_alpha)
    return BodyMesh(vertices=verts[0], joints=joints[0])


def smpl_plus_a_jacobian(params, assets, t_alpha=DEFAULT_T_ALPHA):
    """Analytic (forward-mode) Jacobian of the mesh w.r.t. (theta, beta, alpha).

    On the infant branch the alpha column is identically zero.  At alpha ==
    t_alpha the derivative is the one-sided one of the adult branch.
    """
    _check_assets(assets)
    M = NUM_PARAMS
    infant_branch = params.alpha > t_alpha
    if infant_branch:
        if assets.infant_assets is None:
            raise AssetMismatch("alpha above t_alpha requires infant_assets")
        a = assets.infant_assets
        template = a.template_adult
        dtemplate = np.zeros(template.shape + (M,))
    else:
        a = assets
        template = (1.0 - params.alpha) * a.template_adult + params.alpha * a.template_infant
        dtemplate = np.zeros(template.shape + (M,))
        dtemplate[:, :, ALPHA_INDEX] = a.template_infant - a.template_adult

    J = a.num_joints
    parents = a.kinematic_parents
    rot, drot6 = rot6d_to_matrix(params.theta, with_jacobian=True)
    drot = np.zeros((J, 3, 3, M))
    for j in range(J):
        drot[j, :, :, 6 * j:6 * j + 6] = drot6[j]

    v_shaped = template + a.shape_dirs @ params.beta
    dv_shaped = dtemplate
    dv_shaped[:, :, BETA_SLICE] += a.shape_dirs
    joints = a.joint_regressor_skel @ v_shaped
    djoints = np.einsum("jv,vam->jam", a.joint_regressor_skel, dv_shaped)

    pose_feat = (rot[1:] - np.eye(3)).reshape(-1)
    dpose_feat = drot[1:].reshape(-1, M)
    v_posed = v_shaped + a.pose_dirs @ pose_feat
    dv_posed = dv_shaped + np.einsum("vap,pm->vam", a.pose_dirs, dpose_feat)

    G_R = np.empty((J, 3, 3))
    G_t = np.empty((J, 3))
    dG_R = np.empty((J, 3, 3, M))
    dG_t = np.empty((J, 3, M))
    G_R[0] = rot[0]
    G_t[0] = joints[0]
    dG_R[0] = drot[0]
    dG_t[0] = djoints[0]
    for j in range(1, J):
        p = parents[j]
        G_R[j] = G_R[p] @ rot[j]
        dG_R[j] = np.einsum("abm,bc->acm", dG_R[p], rot[j]) + np.einsum("ab,bcm->acm", G_R[p], drot[j])
        bone = joints[j] - joints[p]
        dbone = djoints[j] - djoints[p]
        G_t[j] = G_R[p] @ bone + G_t[p]
        dG_t[j] = np.einsum("abm,b->am", dG_R[p], bone) + np.einsum("ab,bm->am", G_R[p], dbone) + dG_t[p]

    A_t = G_t - np.einsum("jab,jb->ja", G_R, joints)
    dA_t = dG_t - np.einsum("jabm,jb->jam", dG_R, joints) - np.einsum("jab,jbm->jam", G_R, djoints)
    W = a.skin_weights
    T_R = np.einsum("vj,jab->vab", W, G_R)
    dT_R = np.einsum("vj,jabm->vabm", W, dG_R)
    dT_t = np.einsum("vj,jam->vam", W, dA_t)
    dverts = (np.einsum("vabm,vb->vam", dT_R, v_posed) + np.einsum("vab,vbm->vam", T_R, dv_posed)
              + dT_t - djoints[:1])
    djoints_eval = np.einsum("kv,vam->kam", assets.joint_regressor_eval, dverts)
    return MeshJacobian(vertices=dverts, joints=djoints_eval)


# ---------------------------------------------------------------------------
# toy assets

def make_toy_assets(num_vertices=64, seed=0, num_eval_joints=24):
    """Procedural stand-in for licensed SMPL/SMIL files.

    Vertices are scattered along the bones of a SMPL-like 22-joint skeleton and
    skinned to the two joints of their bone. Vertex 0 sits exactly at the root
    and carries no blend shapes, so the rest skeleton root is exactly the origin.
    The infant asset set is the adult one scaled by 0.5.
    """
    if num_vertices < 8:
        raise ValueError("num_vertices must be >= 8")
    rng = np.random.default_rng(seed)
    V, J = num_vertices, NUM_POSE_JOINTS
    parents = SMPL_PARENTS.copy()
    rest = _TOY_REST_JOINTS

    template = np.zeros((V, 3))
    weights = np.zeros((V, J))
    weights[0, 0] = 1.0
    bone_of = np.zeros(V, dtype=np.int64)
    along = np.zeros(V)
    for i in range(1, V):
        child = 1 + (i - 1) % (J - 1)
        parent = parents[child]
        t = rng.uniform(0.05, 0.95)
        template[i] = (1 - t) * rest[parent] + t * rest[child] + rng.normal(0.0, 0.03, 3)
        weights[i, parent] = 1.0 - t
        weights[i, child] = t
        bone_of[i] = child
        along[i] = t

    skel = np.zeros((J, V))
    skel[0, 0] = 1.0
    k = min(4, V - 1)
    for j in range(1, J):
        dist = np.linalg.norm(template[1:] - rest[j], axis=1)
        nearest = 1 + np.argsort(dist, kind="stable")[:k]
        w = 1.0 / (dist[nearest - 1] + 1e-3)
        skel[j, nearest] = w / w.sum()

    evalreg = np.zeros((num_eval_joints, V))
    n_shared = min(num_eval_joints, J)
    evalreg[:n_shared] = skel[:n_shared]
    for kk in range(n_shared, num_eval_joints):
        idx = rng.choice(np.arange(1, V), size=min(3, V - 1), replace=False)
        w = rng.uniform(0.5, 1.5, idx.size)
        evalreg[kk, idx] = w / w.sum()

    faces = []
    for child in range(1, J):
        group = np.nonzero(bone_of == child)[0]
        group = group[np.argsort(along[group], kind="stable")]
        for s in range(len(group) - 2):
            faces.append((group[s], group[s + 1], group[s + 2]))
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)

    shape_dirs = rng.normal(0.0, 0.02, (V, 3, NUM_BETAS))
    shape_dirs[0] = 0.0
    pose_dirs = rng.normal(0.0, 0.005, (V, 3, POSE_FEATURE_DIM))
    pose_dirs[0] = 0.0

    infant_template = 0.5 * template
    infant = BodyModelAssets(
        template_adult=infant_template, template_infant=infant_template,
        shape_dirs=0.5 * shape_dirs, pose_dirs=0.5 * pose_dirs, skin_weights=weights,
        joint_regressor_skel=skel, joint_regressor_eval=evalreg, kinematic_parents=parents,
        faces=faces)
    return BodyModelAssets(
        template_adult=template, template_infant=infant_template, shape_dirs=shape_dirs,
        pose_dirs=pose_dirs, skin_weights=weights, joint_regressor_skel=skel,
        joint_regressor_eval=evalreg, kinematic_parents=parents, faces=faces,
        infant_assets=infant)


def mesh_height(vertices):
    """Bounding-box extent along the model's up axis (y)."""
    return float(vertices[:, 1].max() - vertices[:, 1].min())
