"""Seeded synthetic datasets: subject shapes, pose families and records.

Every subject and every pose draws from its own random stream, keyed by
``(seed, subject index, pose index)``, so the output does not depend on
the order or the number of threads used to compute it.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.spatial.transform import Rotation

from .body import BodyModel, PoseParams, ShapeParams, hinge_axes, landmarks_of, measure_ground_truth, pose_mesh
from .errors import FormatError, ValidationError
from .landmarks import LandmarkSet, Record, write_dataset
from .mesh import perturb_landmark_on_surface, vertex_normals

PARAMS_FORMAT = "#anthrokit-params/1"
FAMILIES = ("standing", "sitting", "varied")

SHAPE_CLIP = 2.5
SEX_STATURE_SHIFT = 0.6
STANDING_JITTER = np.radians(10.0)
SITTING_FLEXION = np.radians((70.0, 110.0))
VARIED_LIMIT = np.radians(90.0)
ROOT_TRANSLATION_MM = 500.0

_ELBOWS, _KNEES, _HIPS = (5, 8), (11, 14), (10, 13)


@dataclass(frozen=True)
class PoseMix:
    standing: float = 1 / 12
    sitting: float = 1 / 12
    varied: float = 10 / 12

    def __post_init__(self):
        vals = (self.standing, self.sitting, self.varied)
        if min(vals) < 0 or abs(sum(vals) - 1.0) > 1e-9:
            raise ValidationError(f"pose mix fractions must be >= 0 and sum to 1, got {vals}")

    @classmethod
    def parse(cls, text):
        """Parse ``"a,b,c"``; each entry may be a fraction such as ``1/12``."""
        try:
            parts = [Fraction(p.strip()) for p in str(text).split(",")]
        except (ValueError, ZeroDivisionError):
            raise ValidationError(f"bad pose mix {text!r}") from None
        if len(parts) != 3:
            raise ValidationError("pose mix needs three fractions: standing,sitting,varied")
        if sum(parts) != 1:
            raise ValidationError(f"pose mix fractions must sum to 1, got {text!r}")
        return cls(*(float(p) for p in parts))

    def as_tuple(self):
        return (self.standing, self.sitting, self.varied)


def _random_axis(rng):
    a = rng.normal(size=3)
    return a / np.linalg.norm(a)


def _jitter(rng, n, max_angle):
    axes = np.stack([_random_axis(rng) for _ in range(n)])
    return axes * rng.uniform(0.0, max_angle, size=(n, 1))


def _compose(outer, inner):
    """Rotation vector of ``R(outer) @ R(inner)``."""
    return (Rotation.from_rotvec(outer) * Rotation.from_rotvec(inner)).as_rotvec()


def sample_pose(model: BodyModel, family: str, rng) -> PoseParams:
    """Draw a pose from one of the three families.

    ``standing``: every joint jittered by at most 10 degrees, random heading.
    ``sitting``: hips and knees flexed 70-110 degrees plus the standing
    jitter. ``varied``: random orientation, every joint rotated up to 90
    degrees about a random axis, elbows and knees hinge-only.
    """
    nj = model.n_joints
    trans = rng.uniform(-ROOT_TRANSLATION_MM, ROOT_TRANSLATION_MM, size=3)
    if family == "varied":
        rot = _jitter(rng, nj, VARIED_LIMIT)
        axes = hinge_axes(model)
        for j in _ELBOWS + _KNEES:
            rot[j] = axes[j] * rng.uniform(0.0, VARIED_LIMIT)
        rot[0] = Rotation.random(random_state=rng).as_rotvec()
        return PoseParams(rot, trans)
    if family not in FAMILIES:
        raise ValidationError(f"unknown pose family {family!r}")
    rot = _jitter(rng, nj, STANDING_JITTER)
    heading = np.array([0.0, rng.uniform(-np.pi, np.pi), 0.0])
    rot[0] = _compose(heading, rot[0])
    if family == "sitting":
        axes = hinge_axes(model)
        for j in _HIPS:
            rot[j] = _compose(np.array([-rng.uniform(*SITTING_FLEXION), 0.0, 0.0]), rot[j])
        for j in _KNEES:
            rot[j] = _compose(axes[j] * rng.uniform(*SITTING_FLEXION), rot[j])
    return PoseParams(rot, trans)


def sample_shape(n_shape, rng):
    """Zero-mean shape draw (clipped standard normal) and a sex tag."""
    coeffs = np.clip(rng.normal(size=n_shape), -SHAPE_CLIP, SHAPE_CLIP)
    sex = "M" if rng.random() < 0.5 else "F"
    coeffs[0] += SEX_STATURE_SHIFT if sex == "M" else -SEX_STATURE_SHIFT
    return ShapeParams(coeffs), sex


def allocate_families(n, mix: PoseMix, rng):
    """Family label for each of ``n`` poses, proportions matched by largest
    remainder and shuffled."""
    quotas = np.array(mix.as_tuple()) * n
    counts = np.floor(quotas).astype(int)
    rest = n - counts.sum()
    order = np.argsort(-(quotas - counts), kind="stable")
    counts[order[:rest]] += 1
    labels = np.repeat(np.arange(3), counts)
    return [FAMILIES[k] for k in rng.permutation(labels)]


@dataclass
class Sample:
    record: Record
    shape: ShapeParams
    pose: PoseParams
    family: str


def generate_samples(model: BodyModel, n_subjects, poses_per_subject, pose_mix: PoseMix | None = None,
                     seed=0, threads=1, subject_offset=0):
    """Generate posed landmark records with rest-pose ground truth.

    Returns a list of :class:`Sample` ordered by subject then pose.
    """
    if n_subjects < 1 or poses_per_subject < 1:
        raise ValidationError("n_subjects and poses_per_subject must be >= 1")
    pose_mix = pose_mix or PoseMix()
    families = allocate_families(n_subjects * poses_per_subject, pose_mix, np.random.default_rng([seed, 2]))

    subjects = []
    for s in range(subject_offset, subject_offset + n_subjects):
        shape, sex = sample_shape(model.n_shape, np.random.default_rng([seed, 0, s]))
        subjects.append((f"S{s:04d}", shape, sex))

    def measure(item):
        return measure_ground_truth(model, item[1])

    def make(k):
        si, pi = divmod(k, poses_per_subject)
        sid, shape, sex = subjects[si]
        family = families[k]
        pose = sample_pose(model, family, np.random.default_rng([seed, 1, si + subject_offset, pi]))
        lm = landmarks_of(model, shape, pose, sid, f"{family}-{pi:03d}")
        return lm, pose, family

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        truth = list(pool.map(measure, subjects))
        posed = list(pool.map(make, range(n_subjects * poses_per_subject)))

    out = []
    for k, (lm, pose, family) in enumerate(posed):
        si = k // poses_per_subject
        _, shape, sex = subjects[si]
        out.append(Sample(Record(lm, truth[si].copy(), sex), shape, pose, family))
    return out


def generate_dataset(model: BodyModel, n_subjects, poses_per_subject, pose_mix: PoseMix | None = None,
                     seed=0, path=None, params_path=None, threads=1, subject_offset=0):
    """Generate a dataset and optionally write it (plus a parameter sidecar).

    The sidecar records each record's shape and pose so the exact posed
    mesh can be rebuilt later, e.g. for on-surface landmark noise.
    """
    samples = generate_samples(model, n_subjects, poses_per_subject, pose_mix, seed, threads, subject_offset)
    if path is not None:
        write_dataset(path, [s.record for s in samples])
    if params_path is not None:
        write_params(params_path, samples, model.seed)
    return samples


def write_params(path, samples, model_seed):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if samples:
            ns = len(samples[0].shape.coeffs)
            nj = len(samples[0].pose.joint_rotations)
        else:
            ns = nj = 0
        fh.write(f"{PARAMS_FORMAT}\tmodel_seed={model_seed}\tshape={ns}\tjoints={nj}\n")
        for s in samples:
            vals = np.concatenate([s.shape.coeffs, s.pose.joint_rotations.reshape(-1), s.pose.root_translation])
            fh.write("\t".join([s.record.subject_id, s.record.pose_id, s.family, *(repr(float(v)) for v in vals)]) + "\n")


def read_params(path):
    """Read a parameter sidecar.

    Returns ``(model_seed, {(subject_id, pose_id): (ShapeParams, PoseParams)})``.
    """
    if not os.path.isfile(path):
        raise FormatError(f"no such params file: {path}")
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    head = lines[0].split("\t") if lines else []
    if not head or head[0] != PARAMS_FORMAT:
        raise FormatError(f"{path}: missing header {PARAMS_FORMAT!r}")
    meta = dict(h.split("=", 1) for h in head[1:])
    ns, nj = int(meta["shape"]), int(meta["joints"])
    table = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        f = line.split("\t")
        if len(f) != 3 + ns + 3 * nj + 3:
            raise FormatError(f"{path}:{lineno}: wrong field count")
        vals = np.array([float(x) for x in f[3:]])
        table[(f[0], f[1])] = (
            ShapeParams(vals[:ns]),
            PoseParams(vals[ns:ns + 3 * nj].reshape(nj, 3), vals[ns + 3 * nj:]),
        )
    return int(meta["model_seed"]), table


def single_subject_poses(model: BodyModel, shape: ShapeParams, n_poses, pose_mix: PoseMix | None = None,
                         seed=0, subject_id="REF"):
    """A-pose reference and ``n_poses`` posed landmark sets of one subject,
    the input of pose-independent feature selection."""
    pose_mix = pose_mix or PoseMix()
    ref = landmarks_of(model, shape, PoseParams.zeros(model.n_joints), subject_id, "apose")
    families = allocate_families(n_poses, pose_mix, np.random.default_rng([seed, 4]))
    posed = []
    for k, family in enumerate(families):
        pose = sample_pose(model, family, np.random.default_rng([seed, 3, k]))
        posed.append(landmarks_of(model, shape, pose, subject_id, f"{family}-{k:05d}"))
    return ref, posed


def perturb_landmarks(model: BodyModel, shape: ShapeParams, pose: PoseParams, landmarks, max_dist_mm=5.6,
                      seed=0, key=0):
    """Slide every landmark along its posed mesh by up to ``max_dist_mm``.

    ``key`` distinguishes records so each gets its own random streams.
    """
    mesh = pose_mesh(model, shape, pose)
    normals = vertex_normals(mesh)
    out = np.array([
        perturb_landmark_on_surface(mesh, p, max_dist_mm, np.random.default_rng([seed, 6, key, i]), normals=normals)
        for i, p in enumerate(landmarks.coords)
    ])
    return LandmarkSet(out, landmarks.subject_id, landmarks.pose_id)
