"""Landmark sets, pelvis-frame normalization and the landmark dataset file.

Coordinates are millimeters throughout. A landmark set is stored as a
``(70, 3)`` array ordered by :data:`anthrokit.registry.LANDMARK_NAMES`.
"""

from __future__ import annotations

import io
import os
from dataclasses import dataclass, field

import numpy as np

from . import registry
from .errors import DegeneratePelvis, DimensionMismatch, FormatError, NonFinite
from .registry import LANDMARK_NAMES, N_LANDMARKS, N_MEASUREMENTS

DATASET_FORMAT = "#anthrokit-landmarks/1"
NORMALIZATION_ID = "pelvis-frame/1"

_MIN_TRIANGLE_AREA = 1e-6  # mm^2
_MIN_PROJECTION = 1e-6  # mm
_UNIT_SCALE = {"mm": 1.0, "cm": 10.0}


@dataclass
class LandmarkSet:
    """70 landmarks of one subject in one pose.

    Construction only checks the shape; finiteness is checked by
    :meth:`validate` (missing landmarks are carried as NaN until then).
    """

    coords: np.ndarray
    subject_id: str = ""
    pose_id: str = ""

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=float)
        if self.coords.shape != (N_LANDMARKS, 3):
            raise DimensionMismatch(
                f"expected ({N_LANDMARKS}, 3) coordinates, got {self.coords.shape}"
            )

    def validate(self):
        if not np.all(np.isfinite(self.coords)):
            bad = sorted({LANDMARK_NAMES[i] for i in np.nonzero(~np.isfinite(self.coords))[0]})
            raise NonFinite(
                f"{self.subject_id}/{self.pose_id}: non-finite landmarks {bad}"
            )
        return self

    def __getitem__(self, name):
        return self.coords[registry.landmark_index(name)]

    def transformed(self, rotation, translation):
        """Copy with every point mapped by ``x -> R x + t``."""
        return LandmarkSet(
            self.coords @ np.asarray(rotation).T + np.asarray(translation),
            self.subject_id,
            self.pose_id,
        )


@dataclass(frozen=True)
class PelvisFrame:
    """Rigid transform ``x -> rotation @ x + translation``."""

    rotation: np.ndarray
    translation: np.ndarray

    def apply(self, points):
        return np.asarray(points) @ self.rotation.T + self.translation

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))


def pelvis_frame(landmarks: LandmarkSet) -> PelvisFrame:
    """Compute the rigid transform that puts a landmark set in the pelvis frame.

    The triangle (mid-Psis, Lt. Asis, Rt. Asis) gets its centroid at the
    origin and its unit normal on +y, oriented toward the Nuchale side. A
    final turn about y puts Rt. Asis on the +z half axis.
    """
    landmarks.validate()
    mid_psis = 0.5 * (landmarks[registry.LT_PSIS] + landmarks[registry.RT_PSIS])
    lt_asis = landmarks[registry.LT_ASIS]
    rt_asis = landmarks[registry.RT_ASIS]
    centroid = (mid_psis + lt_asis + rt_asis) / 3.0

    normal = np.cross(lt_asis - mid_psis, rt_asis - mid_psis)
    area = 0.5 * np.linalg.norm(normal)
    if area < _MIN_TRIANGLE_AREA:
        raise DegeneratePelvis(f"pelvis triangle area {area:.3g} mm^2 is degenerate")
    normal = normal / (2.0 * area)

    side = float(np.dot(landmarks[registry.NUCHALE] - centroid, normal))
    if side == 0.0:
        raise DegeneratePelvis("Nuchale lies in the pelvis triangle plane")
    if side < 0.0:
        normal = -normal

    forward = rt_asis - centroid
    forward = forward - np.dot(forward, normal) * normal
    norm = np.linalg.norm(forward)
    if norm < _MIN_PROJECTION:
        raise DegeneratePelvis("Rt. Asis projects onto the pelvis normal axis")
    forward = forward / norm

    # rows are the new x, y, z axes; x = y cross z keeps det = +1
    rotation = np.stack([np.cross(normal, forward), normal, forward])
    return PelvisFrame(rotation, -rotation @ centroid)


def normalize(landmarks: LandmarkSet) -> tuple[LandmarkSet, PelvisFrame]:
    """Express a landmark set in its pelvis frame.

    Returns the normalized set and the frame; ``frame.apply(landmarks.coords)``
    reproduces the normalized coordinates exactly.

    Raises
    ------
    NonFinite
        If any coordinate is NaN or infinite.
    DegeneratePelvis
        If the pelvis anchors are (nearly) collinear or Nuchale is coplanar.
    """
    frame = pelvis_frame(landmarks)
    out = LandmarkSet(frame.apply(landmarks.coords), landmarks.subject_id, landmarks.pose_id)
    return out, frame


def flatten(landmarks: LandmarkSet) -> np.ndarray:
    return landmarks.coords.reshape(-1).copy()


def unflatten(vector, subject_id="", pose_id="") -> LandmarkSet:
    vector = np.asarray(vector, dtype=float)
    if vector.shape != (3 * N_LANDMARKS,):
        raise DimensionMismatch(f"expected {3 * N_LANDMARKS} values, got {vector.shape}")
    return LandmarkSet(vector.reshape(N_LANDMARKS, 3).copy(), subject_id, pose_id)


# ---------------------------------------------------------------------------
# dataset file


@dataclass
class Record:
    """One dataset line: landmarks plus optional labels."""

    landmarks: LandmarkSet
    measurements: np.ndarray | None = None
    sex: str | None = None

    @property
    def subject_id(self):
        return self.landmarks.subject_id

    @property
    def pose_id(self):
        return self.landmarks.pose_id


@dataclass
class Dataset:
    records: list = field(default_factory=list)
    unit: str = "mm"

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def subjects(self):
        """Subject ids in order of first appearance."""
        return list(dict.fromkeys(r.subject_id for r in self.records))


def _fmt(value):
    if not np.isfinite(value):
        return "NA"
    return repr(float(value))


def format_dataset(records, unit="mm") -> str:
    """Serialize records to the tab-separated landmark dataset format.

    Coordinates and measurements are given in millimeters and written in
    ``unit``. Floats use the shortest round-trip representation.
    """
    if unit not in _UNIT_SCALE:
        raise FormatError(f"unsupported unit {unit!r}")
    scale = _UNIT_SCALE[unit]
    buf = io.StringIO()
    buf.write("\t".join([DATASET_FORMAT, f"unit={unit}", *LANDMARK_NAMES]) + "\n")
    for rec in records:
        fields = [rec.subject_id, rec.pose_id]
        fields.extend(_fmt(v / scale) for v in rec.landmarks.coords.reshape(-1))
        if rec.measurements is not None:
            fields.extend(_fmt(v / scale) for v in rec.measurements)
        if rec.sex is not None:
            fields.append(rec.sex)
        buf.write("\t".join(fields) + "\n")
    return buf.getvalue()


def write_dataset(path, records, unit="mm"):
    text = format_dataset(records, unit)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _parse_float(token, where):
    if token == "NA":
        return np.nan
    try:
        return float(token)
    except ValueError:
        raise FormatError(f"{where}: bad number {token!r}") from None


def _parse_header(line, source):
    header = line.rstrip("\n").split("\t")
    if header[0] != DATASET_FORMAT:
        raise FormatError(f"{source}: missing header {DATASET_FORMAT!r}")
    if len(header) != 2 + N_LANDMARKS or not header[1].startswith("unit="):
        raise FormatError(f"{source}: malformed header")
    unit = header[1][len("unit="):]
    if unit not in _UNIT_SCALE:
        raise FormatError(f"{source}: unsupported unit {unit!r}")
    names = header[2:]
    order = None
    if tuple(names) != LANDMARK_NAMES:
        try:
            order = [names.index(n) for n in LANDMARK_NAMES]
        except ValueError:
            raise FormatError(f"{source}: landmark names do not match the registry") from None
    return unit, order


def _iter_records(lines, source):
    """Yield the unit, then one :class:`Record` per non-blank line."""
    lines = iter(lines)
    first = next(lines, None)
    if first is None:
        raise FormatError(f"{source}: empty file")
    unit, order = _parse_header(first, source)
    yield unit
    scale = _UNIT_SCALE[unit]
    n_coord = 3 * N_LANDMARKS
    for lineno, line in enumerate(lines, start=2):
        line = line.rstrip("\n")
        if not line.strip():
            continue
        fields = line.split("\t")
        where = f"{source}:{lineno}"
        sex = None
        if fields[-1] in ("M", "F", "-"):
            sex = fields.pop()
        if len(fields) == 2 + n_coord:
            meas = None
        elif len(fields) == 2 + n_coord + N_MEASUREMENTS:
            meas = np.array([_parse_float(t, where) for t in fields[2 + n_coord:]]) * scale
        else:
            raise FormatError(f"{where}: expected {2 + n_coord} or {2 + n_coord + N_MEASUREMENTS} fields, got {len(fields)}")
        coords = np.array([_parse_float(t, where) for t in fields[2:2 + n_coord]]).reshape(N_LANDMARKS, 3)
        if order is not None:
            coords = coords[order]
        yield Record(LandmarkSet(coords * scale, fields[0], fields[1]), meas, sex)


def parse_dataset(text, source="<string>") -> Dataset:
    """Parse the landmark dataset format; values are converted to mm."""
    it = _iter_records(text.splitlines(), source)
    unit = next(it)
    return Dataset(list(it), unit)


def iter_dataset(path):
    """Stream the records of a dataset file without loading it whole."""
    if not os.path.isfile(path):
        raise FormatError(f"no such dataset file: {path}")
    with open(path, encoding="utf-8") as fh:
        it = _iter_records(fh, str(path))
        next(it)
        yield from it


def read_dataset(path) -> Dataset:
    if not os.path.isfile(path):
        raise FormatError(f"no such dataset file: {path}")
    with open(path, encoding="utf-8") as fh:
        return parse_dataset(fh.read(), source=str(path))
