"""Pose-independent landmark-pair distances and the regressor input vector.

A pair is kept when the median, over many poses of one subject, of the
absolute change of its distance relative to the A-pose stays below a
threshold.
"""

from __future__ import annotations

import hashlib
import os
import tempfile
from dataclasses import dataclass

import numpy as np

from . import registry
from .errors import EmptyStream, FormatError, ValidationError
from .landmarks import LandmarkSet

SELECTION_FORMAT = "#anthrokit-selection/1"
MEDIAN_RULE = "lower"  # order statistic (n - 1) // 2, 0-based
DEFAULT_THRESHOLD_MM = 10.0
DEFAULT_MEMORY_CAP = 20_000  # poses held in RAM before spilling to disk
COORD_QUANTUM_MM = 1e-4

_I, _J = registry.pair_arrays()


def pairwise_distances(landmarks) -> np.ndarray:
    """All 2415 landmark-pair distances in lexicographic pair order.

    Accepts a :class:`LandmarkSet`, a (70, 3) array or a stacked
    (N, 70, 3) array; the last case returns an (N, 2415) array.
    """
    coords = landmarks.coords if isinstance(landmarks, LandmarkSet) else np.asarray(landmarks, dtype=float)
    d = coords[..., _I, :] - coords[..., _J, :]
    return np.sqrt(np.einsum("...k,...k->...", d, d))


def lower_median(values, axis=0):
    """Lower-middle order statistic along ``axis`` (no averaging)."""
    values = np.asarray(values)
    k = (values.shape[axis] - 1) // 2
    return np.take(np.partition(values, k, axis=axis), k, axis=axis)


@dataclass(frozen=True, eq=False)
class FeatureSelection:
    """Selected pairs with the per-pair statistics they were chosen from."""

    pairs: tuple
    threshold_mm: float
    per_pair_median_dev_mm: np.ndarray
    reference_subject_id: str = ""
    n_poses: int = 0
    median_rule: str = MEDIAN_RULE

    def __post_init__(self):
        med = np.asarray(self.per_pair_median_dev_mm, dtype=float)
        if med.shape != (registry.N_PAIRS,):
            raise ValidationError(f"expected {registry.N_PAIRS} medians, got {med.shape}")
        pairs = tuple((int(i), int(j)) for i, j in self.pairs)
        if list(pairs) != sorted(set(pairs)) or any(not 0 <= i < j < registry.N_LANDMARKS for i, j in pairs):
            raise ValidationError("pairs must be unique, sorted, with i < j")
        if pairs and not np.all(med[[registry.pair_index(i, j) for i, j in pairs]] < self.threshold_mm):
            raise ValidationError("every selected pair needs a median deviation below the threshold")
        object.__setattr__(self, "pairs", pairs)
        object.__setattr__(self, "per_pair_median_dev_mm", med)

    def __eq__(self, other):
        if not isinstance(other, FeatureSelection):
            return NotImplemented
        return (
            self.pairs == other.pairs
            and self.threshold_mm == other.threshold_mm
            and np.array_equal(self.per_pair_median_dev_mm, other.per_pair_median_dev_mm)
            and (self.reference_subject_id, self.n_poses, self.median_rule)
            == (other.reference_subject_id, other.n_poses, other.median_rule)
        )

    @property
    def pair_positions(self):
        return np.array([registry.pair_index(i, j) for i, j in self.pairs], dtype=np.intp)

    @property
    def n_features(self):
        return 3 * registry.N_LANDMARKS + len(self.pairs)

    @property
    def digest(self):
        """Hash of what the feature map depends on: registry and pair names."""
        h = hashlib.sha256(registry.REGISTRY_VERSION.encode())
        for i, j in self.pairs:
            h.update(f"\n{registry.LANDMARK_NAMES[i]}\t{registry.LANDMARK_NAMES[j]}".encode())
        return h.hexdigest()[:16]

    def with_threshold(self, threshold_mm):
        """Reselect from the stored medians at another threshold."""
        return FeatureSelection(
            _pairs_below(self.per_pair_median_dev_mm, threshold_mm), float(threshold_mm),
            self.per_pair_median_dev_mm, self.reference_subject_id, self.n_poses, self.median_rule,
        )


def _pairs_below(medians, threshold_mm):
    if not threshold_mm > 0:
        raise ValidationError("threshold_mm must be > 0")
    keep = np.nonzero(medians < threshold_mm)[0]
    return tuple((int(_I[k]), int(_J[k])) for k in keep)


class _DeviationStore:
    """Per-sample deviation rows; kept in RAM up to ``cap`` rows, then
    spilled to a raw float64 file that is read back column block by block."""

    def __init__(self, cap, spill_dir=None):
        self.cap = max(1, int(cap))
        self.spill_dir = spill_dir
        self.chunks = []
        self.n = 0
        self.fh = None
        self.path = None

    def add(self, rows):
        rows = np.ascontiguousarray(rows, dtype=np.float64)
        self.n += len(rows)
        if self.fh is None and self.n > self.cap:
            fd, self.path = tempfile.mkstemp(prefix="anthrokit-dev-", suffix=".f64", dir=self.spill_dir)
            self.fh = os.fdopen(fd, "wb")
            for c in self.chunks:
                self.fh.write(c.tobytes())
            self.chunks = []
        if self.fh is not None:
            self.fh.write(rows.tobytes())
        else:
            self.chunks.append(rows)

    def medians(self):
        if self.fh is None:
            return lower_median(np.concatenate(self.chunks), axis=0)
        self.fh.close()
        try:
            mm = np.memmap(self.path, dtype=np.float64, mode="r", shape=(self.n, registry.N_PAIRS))
            width = max(1, (self.cap * registry.N_PAIRS) // self.n)
            out = np.empty(registry.N_PAIRS)
            for a in range(0, registry.N_PAIRS, width):
                out[a:a + width] = lower_median(np.array(mm[:, a:a + width]), axis=0)
            del mm
            return out
        finally:
            os.unlink(self.path)


def select_features(reference_apose: LandmarkSet, posed_samples, threshold_mm=DEFAULT_THRESHOLD_MM,
                    memory_cap=DEFAULT_MEMORY_CAP, spill_dir=None, chunk=1024) -> FeatureSelection:
    """Select pose-independent pair distances.

    Parameters
    ----------
    reference_apose : LandmarkSet
        The subject in the A-pose.
    posed_samples : iterable of LandmarkSet, or array (N, 70, 3)
        The same subject in other poses. Consumed once, in chunks.
    threshold_mm : float
        Pairs with median deviation strictly below this are kept.
    memory_cap : int
        Number of poses whose deviations are kept in memory; beyond it
        deviations are spilled to a temporary file.

    Returns
    -------
    FeatureSelection
    """
    if not threshold_mm > 0:
        raise ValidationError("threshold_mm must be > 0")
    reference_apose.validate()
    ref = pairwise_distances(reference_apose)
    store = _DeviationStore(memory_cap, spill_dir)

    def flush(buf):
        store.add(np.abs(pairwise_distances(np.stack(buf)) - ref))

    if isinstance(posed_samples, np.ndarray):
        for a in range(0, len(posed_samples), chunk):
            flush(posed_samples[a:a + chunk])
    else:
        buf = []
        for s in posed_samples:
            buf.append(s.validate().coords)
            if len(buf) == chunk:
                flush(buf)
                buf = []
        if buf:
            flush(buf)
    if store.n == 0:
        raise EmptyStream("no posed samples")
    med = store.medians()
    return FeatureSelection(_pairs_below(med, threshold_mm), float(threshold_mm), med,
                            reference_apose.subject_id, store.n)


def feature_vector(landmarks: LandmarkSet, selection: FeatureSelection) -> np.ndarray:
    """Flattened coordinates followed by the selected pair distances.

    The input must already be normalized. Coordinates are first snapped to
    a 1e-4 mm grid so that rigidly moved copies of a landmark set, whose
    normalized coordinates differ only by rounding, map to identical
    features.
    """
    return feature_matrix(landmarks.coords[None], selection)[0]


def feature_matrix(coords, selection: FeatureSelection) -> np.ndarray:
    """Batch form of :func:`feature_vector` for an (N, 70, 3) array."""
    coords = quantize(np.asarray(coords, dtype=float))
    d = coords[:, _I, :] - coords[:, _J, :]
    pos = selection.pair_positions
    dist = np.sqrt(np.einsum("npk,npk->np", d[:, pos], d[:, pos]))
    return np.concatenate([coords.reshape(len(coords), -1), dist], axis=1)


def quantize(coords):
    # divide by the exact integer 1/quantum so values already on the grid
    # come back unchanged
    steps = round(1.0 / COORD_QUANTUM_MM)
    q = np.round(coords * steps) / steps
    return q + 0.0  # fold -0.0 into 0.0


# ---------------------------------------------------------------------------
# file format


def format_selection(sel: FeatureSelection) -> str:
    names = registry.LANDMARK_NAMES
    lines = [
        SELECTION_FORMAT,
        f"registry\t{registry.REGISTRY_VERSION}",
        f"threshold_mm\t{sel.threshold_mm!r}",
        f"reference_subject_id\t{sel.reference_subject_id}",
        f"n_poses\t{sel.n_poses}",
        f"median_rule\t{sel.median_rule}",
        f"digest\t{sel.digest}",
        f"n_selected\t{len(sel.pairs)}",
    ]
    lines += [f"pair\t{names[i]}\t{names[j]}" for i, j in sel.pairs]
    lines += [
        f"median\t{names[i]}\t{names[j]}\t{float(m)!r}"
        for i, j, m in zip(_I, _J, sel.per_pair_median_dev_mm)
    ]
    return "\n".join(lines) + "\n"


def save_selection(path, sel: FeatureSelection):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_selection(sel))


def parse_selection(text, source="<string>") -> FeatureSelection:
    lines = text.splitlines()
    if not lines or lines[0] != SELECTION_FORMAT:
        raise FormatError(f"{source}: missing header {SELECTION_FORMAT!r}")
    meta, pairs = {}, []
    med = np.full(registry.N_PAIRS, np.nan)
    try:
        for line in lines[1:]:
            f = line.split("\t")
            if f[0] == "pair":
                pairs.append(_name_pair(f[1], f[2]))
            elif f[0] == "median":
                med[registry.pair_index(*_name_pair(f[1], f[2]))] = float(f[3])
            elif line:
                meta[f[0]] = f[1] if len(f) > 1 else ""
        n_sel = int(meta["n_selected"])
        sel = FeatureSelection(
            tuple(sorted(pairs)), float(meta["threshold_mm"]), med,
            meta.get("reference_subject_id", ""), int(meta["n_poses"]), meta.get("median_rule", MEDIAN_RULE),
        )
    except (KeyError, IndexError, ValueError) as exc:
        raise FormatError(f"{source}: {exc}") from None
    if np.isnan(med).any():
        raise FormatError(f"{source}: expected {registry.N_PAIRS} medians")
    if n_sel != len(pairs):
        raise FormatError(f"{source}: n_selected={n_sel} but {len(pairs)} pairs listed")
    return sel


def _name_pair(a, b):
    i, j = registry.landmark_index(a), registry.landmark_index(b)
    return (i, j) if i < j else (j, i)


def load_selection(path) -> FeatureSelection:
    with open(path, encoding="utf-8") as fh:
        return parse_selection(fh.read(), str(path))
