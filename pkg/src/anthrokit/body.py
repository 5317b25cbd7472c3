"""A small parametric articulated body model.

The body is a union of closed, capped elliptical tubes (torso, neck, head,
limbs, hands, feet) rigged to a 16-joint skeleton with linear blend
skinning and an 8-mode linear shape space. Joint rest positions move
linearly with shape, as in SMPL-style models, so shape modes that change
limb length also move the joints.

Coordinates are millimeters with y up, x toward the subject's left and z
forward. The floor is at y = 0 in the rest (A-) pose.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import registry
from .errors import DimensionMismatch, EmptyCrossSection, FormatError, NonFinite, ValidationError
from .landmarks import LandmarkSet
from .mesh import Mesh, loop_perimeter, plane_cross_section

MODEL_FORMAT = "anthrokit-body/1"

JOINT_NAMES = (
    "pelvis",
    "spine",
    "neck",
    "head",
    "l_shoulder",
    "l_elbow",
    "l_wrist",
    "r_shoulder",
    "r_elbow",
    "r_wrist",
    "l_hip",
    "l_knee",
    "l_ankle",
    "r_hip",
    "r_knee",
    "r_ankle",
)
JOINT_PARENTS = (-1, 0, 1, 2, 1, 4, 5, 1, 7, 8, 0, 10, 11, 0, 13, 14)
N_JOINTS = len(JOINT_NAMES)
N_SHAPE = 8

SHAPE_MODE_NAMES = (
    "stature",
    "leg length",
    "arm length",
    "chest girth",
    "waist girth",
    "hip girth",
    "limb girth",
    "head and neck",
)

MEASUREMENT_KINDS = ("circumference", "length", "height", "stature")


@dataclass(frozen=True)
class MeasurementDef:
    """How one body measurement is taken on the rest-pose mesh.

    ``circumference``: perimeter of the slice loop nearest the anchor, cut by
    the plane through the anchor with ``plane_normal``. ``length``: distance
    between two anchors. ``height``: anchor height above the lowest mesh
    point. ``stature``: vertical extent of the mesh.
    """

    name: str
    kind: str
    anchors: tuple = ()
    plane_normal: tuple = (0.0, 1.0, 0.0)

    def __post_init__(self):
        need = {"circumference": 1, "length": 2, "height": 1, "stature": 0}
        if self.kind not in need:
            raise ValidationError(f"unknown measurement kind {self.kind!r}")
        if len(self.anchors) != need[self.kind]:
            raise ValidationError(f"{self.name}: {self.kind} needs {need[self.kind]} anchors")
        for a in self.anchors:
            registry.landmark_index(a)


DEFAULT_MEASUREMENTS = (
    MeasurementDef("ankle C.", "circumference", ("Lt. Medial Malleolus",)),
    MeasurementDef("shoulder-elbow L.", "length", ("Rt. Acromion", "Rt. Olecranon")),
    MeasurementDef("shoulder-wrist L.", "length", ("Rt. Acromion", "Rt. Ulnar Styloid")),
    MeasurementDef("spine-wrist L.", "length", ("Cervicale", "Rt. Ulnar Styloid")),
    MeasurementDef("chest C.", "circumference", ("Substernale",)),
    MeasurementDef("crotch H.", "height", ("Crotch",)),
    MeasurementDef("head C.", "circumference", ("Sellion",)),
    MeasurementDef("hip C. H.", "height", ("Rt. Trochanterion",)),
    MeasurementDef("hip C.", "circumference", ("Rt. Trochanterion",)),
    MeasurementDef("neck base C.", "circumference", ("Cervicale",)),
    MeasurementDef("stature", "stature"),
)
assert tuple(m.name for m in DEFAULT_MEASUREMENTS) == registry.MEASUREMENT_NAMES


@dataclass
class ShapeParams:
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float).reshape(-1)
        if not np.all(np.isfinite(self.coeffs)):
            raise NonFinite("shape coefficients must be finite")

    @classmethod
    def zeros(cls, n=N_SHAPE):
        return cls(np.zeros(n))


@dataclass
class PoseParams:
    joint_rotations: np.ndarray  # (J, 3) axis-angle, radians
    root_translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.joint_rotations = np.asarray(self.joint_rotations, dtype=float)
        self.root_translation = np.asarray(self.root_translation, dtype=float).reshape(3)
        if self.joint_rotations.ndim != 2 or self.joint_rotations.shape[1] != 3:
            raise DimensionMismatch("joint rotations must have shape (J, 3)")
        if not (np.all(np.isfinite(self.joint_rotations)) and np.all(np.isfinite(self.root_translation))):
            raise NonFinite("pose parameters must be finite")
        if np.any(np.linalg.norm(self.joint_rotations, axis=1) > np.pi + 1e-9):
            raise ValidationError("axis-angle norms must not exceed pi")

    @classmethod
    def zeros(cls, n_joints=N_JOINTS):
        return cls(np.zeros((n_joints, 3)), np.zeros(3))


@dataclass
class BodyModel:
    template_vertices: np.ndarray  # (V, 3)
    faces: np.ndarray  # (F, 3)
    joint_names: tuple
    parents: tuple
    joint_rest: np.ndarray  # (J, 3)
    skin_weights: np.ndarray  # (V, J)
    shape_basis: np.ndarray  # (V, 3, S)
    joint_shape_basis: np.ndarray  # (J, 3, S)
    landmark_vertex_ids: np.ndarray  # (70,)
    measurement_defs: tuple = DEFAULT_MEASUREMENTS
    seed: int = 0

    @property
    def n_vertices(self):
        return len(self.template_vertices)

    @property
    def n_joints(self):
        return len(self.joint_names)

    @property
    def n_shape(self):
        return self.shape_basis.shape[2]

    def check(self):
        """Validate the structural invariants; returns self."""
        w = self.skin_weights
        if np.any(w < 0) or np.max(np.abs(w.sum(axis=1) - 1.0)) > 1e-9:
            raise ValidationError("skin weights must be nonnegative rows summing to 1")
        roots = [j for j, p in enumerate(self.parents) if p < 0]
        if roots != [0] or any(not 0 <= p < j for j, p in enumerate(self.parents) if j > 0):
            raise ValidationError("skeleton must be a tree rooted at joint 0 with parents before children")
        ids = self.landmark_vertex_ids
        if len(ids) != registry.N_LANDMARKS or len(set(ids.tolist())) != len(ids):
            raise ValidationError("landmark vertex ids must be 70 distinct indices")
        if ids.min() < 0 or ids.max() >= self.n_vertices:
            raise ValidationError("landmark vertex id out of range")
        return self

    def with_shape_modes(self, modes):
        """Copy restricted to a subset of shape basis columns."""
        modes = list(modes)
        return BodyModel(
            self.template_vertices,
            self.faces,
            self.joint_names,
            self.parents,
            self.joint_rest,
            self.skin_weights,
            self.shape_basis[:, :, modes],
            self.joint_shape_basis[:, :, modes],
            self.landmark_vertex_ids,
            self.measurement_defs,
            self.seed,
        )


# ---------------------------------------------------------------------------
# construction


@dataclass
class _Part:
    name: str
    joint: int
    parent: int  # joint blended in near the proximal end, -1 for none
    blend: float  # fraction of the axis over which the blend happens
    start: np.ndarray
    end: np.ndarray
    front: np.ndarray  # reference direction, orthogonalized against the axis
    profile: np.ndarray  # rows (t, radius along side, radius along front)
    rings: int
    segments: int
    ring_margin: float = 0.03
    side: int = 0  # +1 left, -1 right, 0 midline
    group: str = ""


def _smoothstep(x):
    x = np.clip(x, 0.0, 1.0)
    return x * x * (3.0 - 2.0 * x)


def _arm_axis(side):
    a = np.radians(30.0)
    return np.array([side * np.sin(a), -np.cos(a), 0.0])


def _skeleton():
    j = np.zeros((N_JOINTS, 3))
    j[0] = (0, 950, 0)
    j[1] = (0, 1150, 0)
    j[2] = (0, 1450, 0)
    j[3] = (0, 1560, 0)
    for side, (sh, el, wr) in ((1, (4, 5, 6)), (-1, (7, 8, 9))):
        u = _arm_axis(side)
        j[sh] = (side * 190, 1420, 0)
        j[el] = j[sh] + 290 * u
        j[wr] = j[el] + 250 * u
    for side, (hp, kn, an) in ((1, (10, 11, 12)), (-1, (13, 14, 15))):
        j[hp] = (side * 90, 900, 0)
        j[kn] = (side * 110, 480, 0)
        j[an] = (side * 120, 80, 0)
    return j


def _parts(joints, rng):
    def jitter(profile):
        p = np.array(profile, dtype=float)
        p[:, 1:] *= 1.0 + 0.03 * rng.uniform(-1, 1, size=p[:, 1:].shape)
        return p

    z = np.array([0.0, 0.0, 1.0])
    y = np.array([0.0, 1.0, 0.0])
    parts = [
        _Part("torso", 1, 0, 0.0, np.array([0, 770.0, 0]), np.array([0, 1460.0, 0]), z,
              jitter([(0.0, 120, 80), (0.16, 175, 110), (0.33, 150, 95), (0.48, 145, 95),
                      (0.70, 165, 115), (0.88, 170, 100), (1.0, 120, 75)]),
              36, 40, 0.01, 0, "torso"),
        _Part("neck", 2, 1, 0.3, np.array([0, 1400.0, -10]), np.array([0, 1560.0, 0]), z,
              jitter([(0.0, 58, 55), (1.0, 50, 50)]), 8, 24, 0.02, 0, "neck"),
    ]
    head_t = np.linspace(0, 1, 11)
    head_r = np.sqrt(np.clip(1 - (2 * head_t - 1) ** 2, 0, None))
    parts.append(_Part("head", 3, -1, 0.0, np.array([0, 1522.0, 15]), np.array([0, 1738.0, 15]), z,
                       jitter(np.column_stack([head_t, 78 * head_r, 95 * head_r])), 18, 32, 0.03, 0, "head"))
    for side, prefix, (sh, el, wr) in ((1, "l", (4, 5, 6)), (-1, "r", (7, 8, 9))):
        u = _arm_axis(side)
        parts += [
            _Part(f"{prefix}_upperarm", sh, 1, 0.15, joints[sh], joints[el], z,
                  jitter([(0, 50, 50), (1, 38, 40)]), 12, 20, 0.03, side, "arm"),
            _Part(f"{prefix}_forearm", el, sh, 0.15, joints[el], joints[wr], z,
                  jitter([(0, 38, 40), (1, 27, 24)]), 12, 20, 0.03, side, "arm"),
            _Part(f"{prefix}_hand", wr, el, 0.15, joints[wr], joints[wr] + 180 * u, z,
                  jitter([(0, 30, 20), (0.5, 42, 16), (1, 25, 12)]), 8, 16, 0.04, side, "arm"),
        ]
    for side, prefix, (hp, kn, an) in ((1, "l", (10, 11, 12)), (-1, "r", (13, 14, 15))):
        parts += [
            _Part(f"{prefix}_thigh", hp, 0, 0.15, np.array([side * 90, 830.0, 0]), joints[kn], z,
                  jitter([(0, 85, 85), (1, 55, 55)]), 14, 24, 0.03, side, "leg"),
            _Part(f"{prefix}_shin", kn, hp, 0.12, joints[kn], joints[an], z,
                  jitter([(0, 55, 55), (0.7, 42, 45), (1, 35, 35)]), 14, 24, 0.03, side, "leg"),
            _Part(f"{prefix}_foot", an, -1, 0.0, np.array([side * 120, 40.0, -50]),
                  np.array([side * 125, 40.0, 190]), y,
                  jitter([(0, 45, 40), (1, 45, 40)]), 8, 16, 0.04, side, "foot"),
        ]
    return parts


def _build_tube(part, v_offset):
    """Vertices, faces and per-vertex geometry for one capped tube."""
    axis = part.end - part.start
    length = np.linalg.norm(axis)
    u = axis / length
    front = part.front - np.dot(part.front, u) * u
    front /= np.linalg.norm(front)
    side_dir = np.cross(u, front)

    ts = np.linspace(part.ring_margin, 1 - part.ring_margin, part.rings)
    r_side = np.interp(ts, part.profile[:, 0], part.profile[:, 1])
    r_front = np.interp(ts, part.profile[:, 0], part.profile[:, 2])
    ang = 2 * np.pi * np.arange(part.segments) / part.segments
    cos, sin = np.cos(ang), np.sin(ang)

    radial = (cos[None, :, None] * front * r_front[:, None, None]
              + sin[None, :, None] * side_dir * r_side[:, None, None])  # (R, S, 3)
    centers = part.start + ts[:, None] * axis
    verts = (centers[:, None, :] + radial).reshape(-1, 3)
    t_all = np.repeat(ts, part.segments)
    radial = radial.reshape(-1, 3)
    verts = np.vstack([verts, part.start, part.end])
    t_all = np.concatenate([t_all, [0.0, 1.0]])
    radial = np.vstack([radial, np.zeros((2, 3))])

    n_ring = part.rings * part.segments
    first, last = v_offset + n_ring, v_offset + n_ring + 1
    faces = []
    m = part.segments
    for r in range(part.rings - 1):
        for s in range(m):
            a = v_offset + r * m + s
            b = v_offset + r * m + (s + 1) % m
            faces.append([a, b, b + m])
            faces.append([a, b + m, a + m])
    top = v_offset + (part.rings - 1) * m
    for s in range(m):
        faces.append([first, v_offset + (s + 1) % m, v_offset + s])
        faces.append([last, top + s, top + (s + 1) % m])
    return verts, np.array(faces), t_all, radial, u


# landmark placement: (part, t along the axis or "start"/"end", direction in
# world coordinates for the left side; the right side mirrors x)
_FRONT, _BACK, _UP = (0, 0, 1), (0, 0, -1), (0, 1, 0)
_LM_MID = {
    "Sellion": ("head", 0.62, _FRONT),
    "Supramenton": ("head", 0.12, (0, -0.3, 1)),
    "Nuchale": ("neck", 0.85, _BACK),
    "Cervicale": ("neck", 0.45, _BACK),
    "Suprasternale": ("torso", 0.95, _FRONT),
    "Substernale": ("torso", 0.638, _FRONT),
    "10th Rib Midspine": ("torso", 0.507, _BACK),
    "Crotch": ("torso", "start", None),
}
_LM_SIDED = {
    "Infraorbitale": ("head", 0.55, (0.35, 0, 1)),
    "Tragion": ("head", 0.5, (1, 0, 0)),
    "Gonion": ("head", 0.25, (1, 0, 0.4)),
    "Clavicale": ("torso", 0.957, (0.5, 0, 1)),
    "Thelion": ("torso", 0.725, (0.45, 0, 1)),
    "10th Rib": ("torso", 0.507, (1, 0, 0.3)),
    "Asis": ("torso", 0.26, (0.6, 0, 1)),
    "Psis": ("torso", 0.275, (0.25, 0, -1)),
    "Iliocristale": ("torso", 0.32, (1, 0, 0)),
    "Trochanterion": ("torso", 0.174, (1, 0, 0)),
    "Axilla Ant.": ("torso", 0.81, (0.8, 0, 0.6)),
    "Axilla Post.": ("torso", 0.81, (0.8, 0, -0.6)),
    "Acromion": ("upperarm", 0.05, _UP),
    "Olecranon": ("upperarm", 0.95, _BACK),
    "Humeral Lateral Epicn.": ("upperarm", 0.9, (1, 0, 0)),
    "Humeral Medial Epicn.": ("upperarm", 0.9, (-1, 0, 0)),
    "Radiale": ("forearm", 0.08, (1, 0, 0.3)),
    "Radial Styloid": ("forearm", 0.95, (0.3, 0, 1)),
    "Ulnar Styloid": ("forearm", 0.95, (-0.3, 0, -1)),
    "Metacarpal-Phal. II": ("hand", 0.6, _FRONT),
    "Metacarpal-Phal. V": ("hand", 0.6, _BACK),
    "Dactylion": ("hand", "end", None),
    "Knee Crease": ("thigh", 0.97, _BACK),
    "Femoral Lateral Epicn.": ("thigh", 0.93, (1, 0, 0)),
    "Femoral Medial Epicn.": ("thigh", 0.93, (-1, 0, 0)),
    "Lateral Malleolus": ("shin", 0.95, (1, 0, 0)),
    "Medial Malleolus": ("shin", 0.9, (-1, 0, 0)),
    "Calcaneous Post.": ("foot", "start", None),
    "Metatarsal-Phal. I": ("foot", 0.75, (-1, 0, 0)),
    "Metatarsal-Phal. V": ("foot", 0.75, (1, 0, 0)),
    "Digit II": ("foot", "end", None),
}


def _landmark_spec(name):
    if name in _LM_MID:
        return _LM_MID[name]
    side, base = name.split(". ", 1)
    part, t, d = _LM_SIDED[base]
    sign = 1 if side == "Lt" else -1
    if part != "torso" and part != "head":
        part = ("l_" if sign > 0 else "r_") + part
    if d is not None:
        d = (sign * d[0], d[1], d[2])
    return part, t, d


def make_default_model(seed: int = 0) -> BodyModel:
    """Build the default synthetic body.

    The seed jitters the cross-section profiles by up to 3 %; the same seed
    always yields the same model.
    """
    rng = np.random.default_rng(seed)
    joints = _skeleton()
    parts = _parts(joints, rng)

    verts, faces, ts, radials, owner = [], [], [], [], []
    spans = {}
    offset = 0
    axes = {}
    for k, part in enumerate(parts):
        v, f, t, r, u = _build_tube(part, offset)
        spans[part.name] = (offset, offset + len(v))
        verts.append(v)
        faces.append(f)
        ts.append(t)
        radials.append(r)
        owner.append(np.full(len(v), k))
        axes[part.name] = u
        offset += len(v)
    verts = np.vstack(verts)
    faces = np.vstack(faces)
    ts = np.concatenate(ts)
    radials = np.vstack(radials)
    owner = np.concatenate(owner)
    n_v = len(verts)

    weights = np.zeros((n_v, N_JOINTS))
    for k, part in enumerate(parts):
        idx = np.nonzero(owner == k)[0]
        if part.name == "torso":
            w_spine = _smoothstep((verts[idx, 1] - 1000.0) / 100.0)
            weights[idx, 1] = w_spine
            weights[idx, 0] = 1.0 - w_spine
        elif part.parent >= 0 and part.blend > 0:
            w_self = 0.5 + 0.5 * _smoothstep(ts[idx] / part.blend)
            weights[idx, part.joint] = w_self
            weights[idx, part.parent] = 1.0 - w_self
        else:
            weights[idx, part.joint] = 1.0

    basis = np.zeros((n_v, 3, N_SHAPE))
    jbasis = np.zeros((N_JOINTS, 3, N_SHAPE))
    groups = np.array([parts[k].group for k in owner])
    names = np.array([parts[k].name for k in owner])
    is_arm = groups == "arm"
    arm_joint = np.zeros(N_JOINTS, dtype=bool)
    arm_joint[[4, 5, 6, 7, 8, 9]] = True

    # 0: overall scale about the floor origin
    basis[:, :, 0] = 0.04 * verts
    jbasis[:, :, 0] = 0.04 * joints
    # 1: leg length; everything above the hips rides up rigidly
    basis[:, 1, 1] = np.where(is_arm, 0.04 * 880.0, 0.04 * np.minimum(verts[:, 1], 880.0))
    jbasis[:, 1, 1] = np.where(arm_joint, 0.04 * 880.0, 0.04 * np.minimum(joints[:, 1], 880.0))
    # 2: arm length, stretching along each arm from the shoulder
    for side, prefix, sh in ((1, "l", 4), (-1, "r", 7)):
        u = _arm_axis(side)
        mask = is_arm & np.char.startswith(names, prefix + "_")
        along = (verts[mask] - joints[sh]) @ u
        basis[mask, :, 2] = 0.06 * along[:, None] * u
        for j in (sh + 1, sh + 2):
            jbasis[j, :, 2] = 0.06 * ((joints[j] - joints[sh]) @ u) * u
    # 3-5: torso girth bumps, radial about the vertical torso axis
    torso = names == "torso"
    radial_xz = verts * np.array([1.0, 0.0, 1.0])
    for mode, center, width, amp in ((3, 1250.0, 90.0, 0.07), (4, 1060.0, 70.0, 0.09), (5, 880.0, 70.0, 0.07)):
        g = np.exp(-0.5 * ((verts[:, 1] - center) / width) ** 2)
        basis[torso, :, mode] = amp * g[torso, None] * radial_xz[torso]
    thigh = np.char.endswith(names, "_thigh")
    basis[thigh, :, 5] = 0.07 * (1.0 - ts[thigh, None]) * radials[thigh]
    # 6: limb girth
    limb = is_arm | (groups == "leg")
    basis[limb, :, 6] = 0.10 * radials[limb]
    # 7: head size and neck thickness
    head = names == "head"
    head_center = np.array([0.0, 1630.0, 15.0])
    basis[head, :, 7] = 0.06 * (verts[head] - head_center)
    jbasis[3, :, 7] = 0.06 * (joints[3] - head_center)
    neck = names == "neck"
    basis[neck, :, 7] = 0.10 * radials[neck]

    lm_ids = []
    for name in registry.LANDMARK_NAMES:
        part_name, t, direction = _landmark_spec(name)
        lo, hi = spans[part_name]
        part = next(p for p in parts if p.name == part_name)
        n_ring = part.rings * part.segments
        if t == "start":
            lm_ids.append(lo + n_ring)
            continue
        if t == "end":
            lm_ids.append(lo + n_ring + 1)
            continue
        ring_t = np.linspace(part.ring_margin, 1 - part.ring_margin, part.rings)
        ring = int(np.argmin(np.abs(ring_t - t)))
        cand = np.arange(lo + ring * part.segments, lo + (ring + 1) * part.segments)
        d = np.asarray(direction, dtype=float)
        d /= np.linalg.norm(d)
        rad = radials[cand]
        rad = rad / np.linalg.norm(rad, axis=1, keepdims=True)
        lm_ids.append(int(cand[np.argmax(rad @ d)]))

    model = BodyModel(
        template_vertices=verts,
        faces=faces.astype(np.int64),
        joint_names=JOINT_NAMES,
        parents=JOINT_PARENTS,
        joint_rest=joints,
        skin_weights=weights,
        shape_basis=basis,
        joint_shape_basis=jbasis,
        landmark_vertex_ids=np.array(lm_ids, dtype=np.int64),
        measurement_defs=DEFAULT_MEASUREMENTS,
        seed=int(seed),
    )
    return model.check()


def hinge_axes(model: BodyModel) -> dict:
    """Flexion axes of elbows and knees in the rest pose.

    Positive rotation about an elbow axis bends the forearm forward; about a
    knee axis it bends the shin backward.
    """
    z = np.array([0.0, 0.0, 1.0])
    j = model.joint_rest
    out = {}
    for el, wr in ((5, 6), (8, 9)):
        u = j[wr] - j[el]
        a = np.cross(u / np.linalg.norm(u), z)
        out[el] = a / np.linalg.norm(a)
    for kn, an in ((11, 12), (14, 15)):
        u = j[an] - j[kn]
        a = np.cross(z, u / np.linalg.norm(u))
        out[kn] = a / np.linalg.norm(a)
    return out


# ---------------------------------------------------------------------------
# kinematics


def _skew(v):
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def rodrigues(rotvecs):
    """Rotation matrices for an array of axis-angle vectors, shape (..., 3)."""
    v = np.asarray(rotvecs, dtype=float)
    theta = np.linalg.norm(v, axis=-1)
    k = _skew(v)
    k2 = k @ k
    small = theta < 1e-8
    safe = np.where(small, 1.0, theta)
    a = np.where(small, 1.0 - theta**2 / 6.0, np.sin(safe) / safe)
    b = np.where(small, 0.5 - theta**2 / 24.0, (1.0 - np.cos(safe)) / safe**2)
    return np.eye(3) + a[..., None, None] * k + b[..., None, None] * k2


_UNIT_SKEW = np.zeros((3, 3, 3))
_UNIT_SKEW[0, 1, 2], _UNIT_SKEW[0, 2, 1] = -1.0, 1.0
_UNIT_SKEW[1, 0, 2], _UNIT_SKEW[1, 2, 0] = 1.0, -1.0
_UNIT_SKEW[2, 0, 1], _UNIT_SKEW[2, 1, 0] = -1.0, 1.0


def rodrigues_jacobian(rotvecs):
    """Derivatives of :func:`rodrigues`.

    For ``rotvecs`` of shape (N, 3) returns (N, 3, 3, 3) where
    ``out[n, i]`` is dR_n / dv_i. Uses the closed form of Gallego and Yezzi
    away from zero and its first-order expansion near it.
    """
    v = np.atleast_2d(np.asarray(rotvecs, dtype=float))
    theta2 = np.einsum("ni,ni->n", v, v)
    k = _skew(v)
    small = theta2 < 1e-10
    # series branch: E_i + (E_i K + K E_i) / 2
    out = _UNIT_SKEW[None] + 0.5 * (
        np.einsum("iab,nbc->niac", _UNIT_SKEW, k) + np.einsum("nab,ibc->niac", k, _UNIT_SKEW)
    )
    if not small.all():
        big = ~small
        vb, kb = v[big], k[big]
        r = rodrigues(vb)
        cols = np.swapaxes(np.eye(3) - r, 1, 2)  # cols[n, i] = (I - R)[:, i]
        w = np.cross(vb[:, None, :], cols)
        lhs = vb[:, :, None, None] * kb[:, None] + _skew(w)
        out[big] = np.einsum("niab,nbc->niac", lhs, r) / theta2[big, None, None, None]
    return out


def wrap_rotvecs(rotvecs):
    """Map axis-angle vectors to the equivalent one with norm <= pi."""
    v = np.array(rotvecs, dtype=float)
    theta = np.linalg.norm(v, axis=-1)
    over = theta > np.pi
    if np.any(over):
        t = theta[over]
        k = np.ceil((t - np.pi) / (2 * np.pi))
        v[over] *= ((t - 2 * np.pi * k) / t)[:, None]
    return v


def shaped_rest(model: BodyModel, shape: ShapeParams):
    """Rest-pose vertices and joint positions for a shape."""
    c = _check_shape(model, shape)
    return (model.template_vertices + model.shape_basis @ c,
            model.joint_rest + model.joint_shape_basis @ c)


def global_transforms(model: BodyModel, joints, rotations):
    """World rotation and translation of every joint.

    ``G_j(x) = G_parent(R_j (x - J_j) + J_j)``; returned as (J, 3, 3) and
    (J, 3) arrays.
    """
    n = len(joints)
    g_rot = np.empty((n, 3, 3))
    g_tr = np.empty((n, 3))
    for j in range(n):
        r = rotations[j]
        local_t = joints[j] - r @ joints[j]
        p = model.parents[j]
        if p < 0:
            g_rot[j] = r
            g_tr[j] = local_t
        else:
            g_rot[j] = g_rot[p] @ r
            g_tr[j] = g_rot[p] @ local_t + g_tr[p]
    return g_rot, g_tr


def skin(points, weights, g_rot, g_tr):
    """Linear blend skinning, written as an offset from the rest position so
    that the identity pose reproduces the input bit for bit."""
    eye = np.eye(3)
    blend_r = np.einsum("vj,jab->vab", weights, g_rot - eye)
    blend_t = weights @ g_tr
    return points + np.einsum("vab,vb->va", blend_r, points) + blend_t


def _check_shape(model, shape):
    c = shape.coeffs
    if c.shape != (model.n_shape,):
        raise DimensionMismatch(f"expected {model.n_shape} shape coefficients, got {c.shape}")
    return c


def _check_pose(model, pose):
    if pose.joint_rotations.shape != (model.n_joints, 3):
        raise DimensionMismatch(
            f"expected ({model.n_joints}, 3) joint rotations, got {pose.joint_rotations.shape}"
        )


def pose_mesh(model: BodyModel, shape: ShapeParams, pose: PoseParams) -> Mesh:
    """Shape the template, pose it with LBS and add the root translation."""
    _check_pose(model, pose)
    verts, joints = shaped_rest(model, shape)
    g_rot, g_tr = global_transforms(model, joints, rodrigues(pose.joint_rotations))
    return Mesh(skin(verts, model.skin_weights, g_rot, g_tr) + pose.root_translation, model.faces)


def landmarks_of(model: BodyModel, shape: ShapeParams, pose: PoseParams,
                 subject_id="", pose_id="") -> LandmarkSet:
    """The 70 posed landmark vertices, computed without posing the full mesh."""
    _check_pose(model, pose)
    c = _check_shape(model, shape)
    ids = model.landmark_vertex_ids
    verts = model.template_vertices[ids] + model.shape_basis[ids] @ c
    joints = model.joint_rest + model.joint_shape_basis @ c
    g_rot, g_tr = global_transforms(model, joints, rodrigues(pose.joint_rotations))
    pts = skin(verts, model.skin_weights[ids], g_rot, g_tr) + pose.root_translation
    return LandmarkSet(pts, subject_id, pose_id)


def repose_to_apose(model: BodyModel, shape: ShapeParams) -> Mesh:
    return pose_mesh(model, shape, PoseParams.zeros(model.n_joints))


# ---------------------------------------------------------------------------
# measurements


def measure_mesh(model: BodyModel, mesh: Mesh) -> np.ndarray:
    """Evaluate the model's measurement definitions on a rest-pose mesh.

    Returns the 11 values in millimeters, in registry order.
    """
    verts = mesh.vertices
    lms = verts[model.landmark_vertex_ids]
    floor = verts[:, 1].min()
    out = np.empty(len(model.measurement_defs))
    for k, m in enumerate(model.measurement_defs):
        pts = [lms[registry.landmark_index(a)] for a in m.anchors]
        if m.kind == "length":
            out[k] = np.linalg.norm(pts[0] - pts[1])
        elif m.kind == "height":
            out[k] = pts[0][1] - floor
        elif m.kind == "stature":
            out[k] = verts[:, 1].max() - floor
        else:
            section = plane_cross_section(mesh, pts[0], m.plane_normal)
            dists = [np.linalg.norm(loop.mean(axis=0) - pts[0]) for loop in section.loops]
            out[k] = loop_perimeter(section.loops[int(np.argmin(dists))])
    return out


def measure_ground_truth(model: BodyModel, shape: ShapeParams) -> np.ndarray:
    """Measurements of a shape taken on its rest-pose (A-pose) mesh."""
    return measure_mesh(model, repose_to_apose(model, shape))


# ---------------------------------------------------------------------------
# serialization


def model_to_json(model: BodyModel) -> str:
    """Versioned text serialization; floats use shortest round-trip repr."""
    w = model.skin_weights
    doc = {
        "format": MODEL_FORMAT,
        "seed": model.seed,
        "counts": {
            "vertices": model.n_vertices,
            "faces": len(model.faces),
            "joints": model.n_joints,
            "shape": model.n_shape,
            "landmarks": len(model.landmark_vertex_ids),
        },
        "vertices": model.template_vertices.tolist(),
        "faces": model.faces.tolist(),
        "joints": [
            {"name": n, "parent": int(p), "rest": r.tolist()}
            for n, p, r in zip(model.joint_names, model.parents, model.joint_rest)
        ],
        "skin_weights": [
            [[int(j), float(w[v, j])] for j in np.nonzero(w[v])[0]] for v in range(model.n_vertices)
        ],
        "shape_basis": model.shape_basis.tolist(),
        "joint_shape_basis": model.joint_shape_basis.tolist(),
        "landmark_vertex_ids": model.landmark_vertex_ids.tolist(),
        "landmark_names": list(registry.LANDMARK_NAMES),
        "measurement_defs": [
            {"name": m.name, "kind": m.kind, "anchors": list(m.anchors), "plane_normal": list(m.plane_normal)}
            for m in model.measurement_defs
        ],
    }
    return json.dumps(doc, separators=(",", ":")) + "\n"


def model_from_json(text: str) -> BodyModel:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"body model is not valid JSON: {exc}") from None
    if doc.get("format") != MODEL_FORMAT:
        raise FormatError(f"unsupported body model format {doc.get('format')!r}")
    if doc["landmark_names"] != list(registry.LANDMARK_NAMES):
        raise FormatError("body model landmark registry differs from this version")
    n_v = doc["counts"]["vertices"]
    weights = np.zeros((n_v, doc["counts"]["joints"]))
    for v, row in enumerate(doc["skin_weights"]):
        for j, val in row:
            weights[v, j] = val
    model = BodyModel(
        template_vertices=np.array(doc["vertices"], dtype=float),
        faces=np.array(doc["faces"], dtype=np.int64),
        joint_names=tuple(j["name"] for j in doc["joints"]),
        parents=tuple(j["parent"] for j in doc["joints"]),
        joint_rest=np.array([j["rest"] for j in doc["joints"]], dtype=float),
        skin_weights=weights,
        shape_basis=np.array(doc["shape_basis"], dtype=float),
        joint_shape_basis=np.array(doc["joint_shape_basis"], dtype=float),
        landmark_vertex_ids=np.array(doc["landmark_vertex_ids"], dtype=np.int64),
        measurement_defs=tuple(
            MeasurementDef(m["name"], m["kind"], tuple(m["anchors"]), tuple(m["plane_normal"]))
            for m in doc["measurement_defs"]
        ),
        seed=doc["seed"],
    )
    return model.check()


def save_model(path, model: BodyModel):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(model_to_json(model))


def load_model(path) -> BodyModel:
    with open(path, encoding="utf-8") as fh:
        return model_from_json(fh.read())


__all__ = [
    "BodyModel",
    "MeasurementDef",
    "PoseParams",
    "ShapeParams",
    "EmptyCrossSection",
    "make_default_model",
    "pose_mesh",
    "landmarks_of",
    "measure_ground_truth",
    "measure_mesh",
    "repose_to_apose",
]
