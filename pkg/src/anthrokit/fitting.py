"""Fitting the body model to posed landmarks (the sparse baseline).

The objective is the mean squared landmark distance over shape, joint
rotations and root translation. Its gradient is computed analytically by
back-propagating through the skinning and the kinematic chain.
"""

from __future__ import annotations

import numpy as np

from . import registry
from .body import (
    BodyModel,
    PoseParams,
    ShapeParams,
    global_transforms,
    landmarks_of,
    measure_ground_truth,
    rodrigues,
    rodrigues_jacobian,
    skin,
    wrap_rotvecs,
)
from .errors import DimensionMismatch
from .landmarks import LandmarkSet
from .optim import OptimConfig, adam_minimize

# Adam step scales per parameter group: shape units, radians, millimeters
SHAPE_STEP = 0.2
ROTATION_STEP = 0.1
TRANSLATION_STEP = 10.0


def pack(shape: ShapeParams, pose: PoseParams) -> np.ndarray:
    return np.concatenate([shape.coeffs, pose.joint_rotations.reshape(-1), pose.root_translation])


def unpack(model: BodyModel, x):
    s, j = model.n_shape, model.n_joints
    shape = ShapeParams(x[:s].copy())
    rot = wrap_rotvecs(x[s:s + 3 * j].reshape(j, 3))
    return shape, PoseParams(rot, x[s + 3 * j:].copy())


def landmark_objective(model: BodyModel, x, observed):
    """Mean squared landmark distance and its gradient w.r.t. packed params.

    ``x`` is ``[shape (S), rotations (3J), translation (3)]``; ``observed``
    is a (70, 3) array.
    """
    s, nj = model.n_shape, model.n_joints
    beta = x[:s]
    rotvecs = x[s:s + 3 * nj].reshape(nj, 3)
    trans = x[s + 3 * nj:]
    ids = model.landmark_vertex_ids
    basis = model.shape_basis[ids]  # (L, 3, S)
    w = model.skin_weights[ids]  # (L, J)
    verts = model.template_vertices[ids] + basis @ beta
    joints = model.joint_rest + model.joint_shape_basis @ beta
    rots = rodrigues(rotvecs)
    g_rot, g_tr = global_transforms(model, joints, rots)
    pts = skin(verts, w, g_rot, g_tr) + trans

    n = len(ids)
    diff = pts - observed
    f = float(np.sum(diff * diff) / n)
    g = 2.0 * diff / n  # dE/dpts

    # adjoints of the world transforms
    bar_grot = np.einsum("lj,la,lb->jab", w, g, verts)
    bar_gtr = w.T @ g
    blend_r = np.einsum("lj,jab->lab", w, g_rot)
    bar_verts = np.einsum("lab,la->lb", blend_r, g) + (1.0 - w.sum(axis=1))[:, None] * g

    bar_rot = np.zeros((nj, 3, 3))
    bar_joints = np.zeros((nj, 3))
    for j in range(nj - 1, -1, -1):
        p = model.parents[j]
        r = rots[j]
        local_t = joints[j] - r @ joints[j]
        if p < 0:
            bar_r = bar_grot[j]
            bar_lt = bar_gtr[j]
        else:
            bar_r = g_rot[p].T @ bar_grot[j]
            bar_grot[p] += bar_grot[j] @ r.T + np.outer(bar_gtr[j], local_t)
            bar_lt = g_rot[p].T @ bar_gtr[j]
            bar_gtr[p] += bar_gtr[j]
        bar_joints[j] += bar_lt - r.T @ bar_lt
        bar_rot[j] = bar_r - np.outer(bar_lt, joints[j])

    grad_rot = np.einsum("niab,nab->ni", rodrigues_jacobian(rotvecs), bar_rot)
    grad_beta = np.einsum("las,la->s", basis, bar_verts) + np.einsum("jas,ja->s", model.joint_shape_basis, bar_joints)
    grad = np.concatenate([grad_beta, grad_rot.reshape(-1), g.sum(axis=0)])
    return f, grad


def _kabsch(src, dst):
    """Proper rotation R and translation t minimizing |R src + t - dst|."""
    cs, cd = src.mean(axis=0), dst.mean(axis=0)
    h = (src - cs).T @ (dst - cd)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return r, cd - r @ cs


_PELVIS_ANCHORS = (
    "Rt. Asis", "Lt. Asis", "Rt. Psis", "Lt. Psis",
    "Rt. Iliocristale", "Lt. Iliocristale", "Rt. Trochanterion", "Lt. Trochanterion", "Crotch",
)


def rigid_init(model: BodyModel, observed: LandmarkSet) -> tuple[ShapeParams, PoseParams]:
    """Zero shape and joint pose, with the root placed by a Procrustes fit
    of the pelvis landmarks."""
    idx = [registry.landmark_index(n) for n in _PELVIS_ANCHORS]
    rest = landmarks_of(model, ShapeParams.zeros(model.n_shape), PoseParams.zeros(model.n_joints)).coords
    r, t = _kabsch(rest[idx], observed.coords[idx])
    from scipy.spatial.transform import Rotation

    rot = np.zeros((model.n_joints, 3))
    rot[0] = Rotation.from_matrix(r).as_rotvec()
    # R (x - J0) + J0 + trans = r x + t
    j0 = model.joint_rest[0]
    trans = t - j0 + r @ j0
    return ShapeParams.zeros(model.n_shape), PoseParams(rot, trans)


def fit_body_to_landmarks(model: BodyModel, observed: LandmarkSet, init=None, config: OptimConfig | None = None):
    """Fit shape, pose and translation to observed landmarks.

    Returns ``(shape, pose, rms_mm)``. Failure to converge is not an error;
    the residual tells the caller how good the fit is.
    """
    observed.validate()
    config = config or OptimConfig()
    if init is None:
        init = rigid_init(model, observed)
    shape0, pose0 = init
    x0 = pack(shape0, pose0)
    if len(x0) != model.n_shape + 3 * model.n_joints + 3:
        raise DimensionMismatch("initial parameters do not match the model")
    scale = np.concatenate([
        np.full(model.n_shape, SHAPE_STEP),
        np.full(3 * model.n_joints, ROTATION_STEP),
        np.full(3, TRANSLATION_STEP),
    ])
    target = observed.coords
    x, f, _ = adam_minimize(lambda z: landmark_objective(model, z, target), x0, config, scale)
    shape, pose = unpack(model, x)
    return shape, pose, float(np.sqrt(max(f, 0.0)))


def baseline_measurements(model: BodyModel, observed: LandmarkSet, config: OptimConfig | None = None, init=None):
    """Fit, drop the pose, and measure the rest-pose mesh.

    Returns ``(measurements, rms_mm)``.
    """
    shape, _, rms = fit_body_to_landmarks(model, observed, init, config)
    return measure_ground_truth(model, shape), rms
