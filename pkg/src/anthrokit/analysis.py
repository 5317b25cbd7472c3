"""Evaluation metrics and the landmark/measurement ambiguity study.

The ambiguity study looks for a unit shape direction that moves the
rest-pose landmarks as little as possible, then measures how much the
body measurements change along it.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import registry
from .body import BodyModel, PoseParams, ShapeParams, landmarks_of, measure_ground_truth
from .errors import IdMismatch, LengthMismatch, NonFinite, TooFewFrames, ValidationError
from .optim import OptimConfig, adam_minimize

EVAL_FORMAT = "#anthrokit-eval/1"
AMBIGUITY_FORMAT = "#anthrokit-ambiguity/1"

# landmark term in meters, so that a unit shape step is comparable to the
# unit-norm penalty (in millimeters the minimizer collapses to zero)
LANDMARK_UNIT_SCALE = 1e-3
AMBIGUITY_CONFIG = OptimConfig(lr=0.05, max_iter=5000, patience=500, tol=1e-10, final_lr_fraction=0.001, n_starts=5)
SCREEN_CANDIDATES = 4096  # random unit directions scored before choosing starts
DEFAULT_N_STEPS = 51
DEFAULT_MAX_LANDMARK_MM = 25.0


# ---------------------------------------------------------------------------
# metrics


@dataclass
class EvalReport:
    """Per-measurement errors in millimeters.

    For ``mode="static"`` ``values`` holds the MAE per measurement and
    ``summary`` the aMAE; for ``mode="sequence"`` ``values`` holds the
    population standard deviation of frame-minus-first-frame differences
    and ``summary`` their mean.
    """

    names: tuple
    values: np.ndarray
    summary: float
    n_subjects: int
    n_records: int
    mode: str = "static"
    strata: dict = field(default_factory=dict)

    @property
    def amae(self):
        return self.summary

    @property
    def mae(self):
        return self.values


def _subject_of(key):
    return key[0] if isinstance(key, tuple) else key


def _pair(gt, est, gt_ids, est_ids):
    gt = np.atleast_2d(np.asarray(gt, dtype=float))
    est = np.atleast_2d(np.asarray(est, dtype=float))
    if len(gt) != len(est):
        raise LengthMismatch(f"{len(gt)} ground-truth vs {len(est)} estimated vectors")
    if len(gt) == 0:
        raise LengthMismatch("no vectors to compare")
    if gt.shape[1] != est.shape[1]:
        raise LengthMismatch(f"{gt.shape[1]} vs {est.shape[1]} measurements per vector")
    if gt_ids is None and est_ids is None:
        return gt, est, list(range(len(gt)))
    if gt_ids is None or est_ids is None or len(gt_ids) != len(gt) or len(est_ids) != len(est):
        raise IdMismatch("ids must be given for both sides, one per vector")
    pos = {k: i for i, k in enumerate(est_ids)}
    if len(pos) != len(est_ids) or len(set(gt_ids)) != len(gt_ids):
        raise IdMismatch("duplicate ids")
    try:
        order = [pos[k] for k in gt_ids]
    except KeyError as exc:
        raise IdMismatch(f"id {exc.args[0]!r} has no estimate") from None
    return gt, est[order], list(gt_ids)


def mae(gt, est, gt_ids=None, est_ids=None, sexes=None, names=registry.MEASUREMENT_NAMES) -> EvalReport:
    """Mean absolute error per measurement and its average (aMAE).

    Parameters
    ----------
    gt, est : array-like (N, M)
    gt_ids, est_ids : sequences of hashable, optional
        Record keys (a subject id, or a ``(subject_id, pose_id)`` tuple);
        when given, estimates are paired to ground truth by key.
    sexes : sequence of str, optional
        Sex tag per ground-truth row; adds ``"M"``/``"F"`` strata.
    """
    gt, est, keys = _pair(gt, est, gt_ids, est_ids)
    if not (np.all(np.isfinite(gt)) and np.all(np.isfinite(est))):
        raise NonFinite("measurement vectors must be finite")
    per = np.mean(np.abs(gt - est), axis=0)
    names = tuple(names) if len(names) == gt.shape[1] else tuple(f"m{k}" for k in range(gt.shape[1]))
    report = EvalReport(names, per, float(np.mean(per)), len({_subject_of(k) for k in keys}), len(gt))
    if sexes is not None:
        sexes = np.asarray(sexes)
        for tag in ("M", "F"):
            sel = sexes == tag
            if sel.any():
                sub = [k for k, s in zip(keys, sel) if s] if gt_ids is not None else None
                report.strata[tag] = mae(gt[sel], est[sel], sub, sub, None, names)
    return report


def sequence_std(frames) -> np.ndarray:
    """Population std over frames t >= 1 of ``m(t) - m(0)``, per measurement."""
    frames = np.atleast_2d(np.asarray(frames, dtype=float))
    if len(frames) < 2:
        raise TooFewFrames("sequence_std needs at least 2 frames")
    return np.std(frames[1:] - frames[0], axis=0)


def sequence_report(sequences, names=registry.MEASUREMENT_NAMES) -> EvalReport:
    """Average :func:`sequence_std` over several subjects' sequences.

    ``sequences`` maps subject id to an (F, M) array of per-frame values.
    """
    if not sequences:
        raise TooFewFrames("no sequences")
    stds = np.stack([sequence_std(v) for v in sequences.values()])
    per = stds.mean(axis=0)
    return EvalReport(tuple(names), per, float(per.mean()), len(sequences),
                      int(sum(len(v) for v in sequences.values())), mode="sequence")


def format_report_csv(report: EvalReport) -> str:
    col = "mae_mm" if report.mode == "static" else "std_mm"
    foot = "aMAE" if report.mode == "static" else "mean_std"
    lines = [
        f"{EVAL_FORMAT}\tmode={report.mode}\tstd=population\tn_subjects={report.n_subjects}\tn_records={report.n_records}",
        f"measurement,{col}",
    ]
    lines += [f"{n},{float(v)!r}" for n, v in zip(report.names, report.values)]
    lines.append(f"{foot},{report.summary!r}")
    return "\n".join(lines) + "\n"


def report_to_dict(report: EvalReport) -> dict:
    d = {
        "format": EVAL_FORMAT.lstrip("#"),
        "mode": report.mode,
        "std_convention": "population",
        "n_subjects": report.n_subjects,
        "n_records": report.n_records,
        "values_mm": {n: float(v) for n, v in zip(report.names, report.values)},
        ("amae_mm" if report.mode == "static" else "mean_std_mm"): report.summary,
    }
    if report.strata:
        d["strata"] = {k: report_to_dict(v) for k, v in sorted(report.strata.items())}
    return d


def write_report(csv_path, json_path, report: EvalReport):
    with open(csv_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_report_csv(report))
    if json_path is not None:
        with open(json_path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(report_to_dict(report), fh, indent=2, sort_keys=True)
            fh.write("\n")


# ---------------------------------------------------------------------------
# ambiguity


def landmark_blocks(model: BodyModel) -> np.ndarray:
    """Per-landmark (70, 3, S) Jacobian of the rest-pose landmarks w.r.t. shape.

    At zero pose the skinning is the identity, so the landmark map is
    exactly affine in the shape and these blocks are constant.
    """
    return np.asarray(model.shape_basis[model.landmark_vertex_ids], dtype=float)


def ambiguity_objective(blocks, delta, scale=LANDMARK_UNIT_SCALE):
    """``sum_i ||B_i delta|| * scale + | ||delta|| - 1 |`` and its gradient."""
    disp = blocks @ delta  # (L, 3)
    norms = np.linalg.norm(disp, axis=1)
    nd = np.linalg.norm(delta)
    f = scale * norms.sum() + abs(nd - 1.0)
    safe = np.where(norms > 0, norms, 1.0)
    g = scale * np.einsum("las,la->s", blocks, disp / safe[:, None] * (norms > 0)[:, None])
    if nd > 0:
        g = g + np.sign(nd - 1.0) * delta / nd
    return float(f), g


def minimize_landmark_ambiguity(blocks, config: OptimConfig | None = None, scale=LANDMARK_UNIT_SCALE, threads=1,
                                n_screen=SCREEN_CANDIDATES):
    """Multi-start minimization of :func:`ambiguity_objective`.

    The objective has several local minima on the unit sphere, so starts
    are screened first: the coordinate axes and ``n_screen`` seeded random
    unit vectors are scored, and the ``config.n_starts`` best mutually
    distinct ones (up to sign) seed the Adam runs. The final iterate is
    also projected onto the unit sphere, and the projection is kept when it
    lowers the objective (the optimum sits on the kink of the penalty).
    Ties between starts go to the lowest start index.

    Returns ``(delta, objective)``.
    """
    config = config or AMBIGUITY_CONFIG
    blocks = np.asarray(blocks, dtype=float)
    s = blocks.shape[-1]

    def fun(d):
        return ambiguity_objective(blocks, d, scale)

    starts = _screen_starts(blocks, scale, max(1, config.n_starts), n_screen,
                            np.random.default_rng([config.seed, 0]))

    def run(x0):
        x, f, _ = adam_minimize(fun, x0, config)
        n = np.linalg.norm(x)
        if n > 0:
            fp = fun(x / n)[0]
            if fp <= f:
                x, f = x / n, fp
        return x, f

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        results = list(pool.map(run, starts))
    best = min(range(len(results)), key=lambda k: (results[k][1], k))
    return results[best]


def _screen_starts(blocks, scale, n_starts, n_screen, rng, max_cos=0.95):
    s = blocks.shape[-1]
    cand = rng.normal(size=(max(0, n_screen), s))
    cand = np.vstack([np.eye(s), cand / np.linalg.norm(cand, axis=1, keepdims=True)])
    score = scale * np.linalg.norm(np.einsum("las,ns->nla", blocks, cand), axis=2).sum(axis=1)
    chosen = []
    for k in np.argsort(score, kind="stable"):
        if all(abs(cand[k] @ c) < max_cos for c in chosen):
            chosen.append(cand[k])
            if len(chosen) == n_starts:
                break
    return chosen


def optimize_ambiguity_direction(model: BodyModel, beta_ref: ShapeParams, config: OptimConfig | None = None,
                                 threads=1):
    """Unit shape direction that least moves the rest-pose landmarks.

    ``beta_ref`` only fixes where the study is anchored; since rest-pose
    landmarks are affine in the shape, the optimal direction does not
    depend on it.

    Returns ``(delta, objective)``.
    """
    if len(beta_ref.coeffs) != model.n_shape:
        raise ValidationError(f"expected {model.n_shape} shape coefficients")
    delta, f = minimize_landmark_ambiguity(landmark_blocks(model), config, threads=threads)
    return ShapeParams(delta), f


def sphere_grid_oracle(blocks, n=200_000, scale=LANDMARK_UNIT_SCALE):
    """Brute-force minimum of the ambiguity objective for S <= 3.

    Scans unit vectors on a fine grid (exhaustively for S = 1) and compares
    with ``delta = 0``, whose objective is exactly 1. Returns
    ``(delta, objective)``.
    """
    blocks = np.asarray(blocks, dtype=float)
    s = blocks.shape[-1]
    if s == 1:
        dirs = np.array([[1.0], [-1.0]])
    elif s == 2:
        a = np.linspace(0, np.pi, n, endpoint=False)  # sign-symmetric objective
        dirs = np.stack([np.cos(a), np.sin(a)], axis=1)
    elif s == 3:
        k = np.arange(n) + 0.5
        z = 1 - 2 * k / n
        r = np.sqrt(1 - z * z)
        phi = np.pi * (1 + 5**0.5) * k
        dirs = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    else:
        raise ValidationError("grid oracle supports S <= 3")
    vals = scale * np.linalg.norm(np.einsum("las,ns->nla", blocks, dirs), axis=2).sum(axis=1)
    k = int(np.argmin(vals))
    if vals[k] < 1.0:
        return dirs[k], float(vals[k])
    return np.zeros(s), 1.0


@dataclass
class AmbiguityCurve:
    steps: np.ndarray
    max_landmark_dist_mm: np.ndarray
    measurement_err_mm: np.ndarray  # (K, M)
    delta: ShapeParams
    residual: float
    names: tuple = registry.MEASUREMENT_NAMES


def default_k_values(model: BodyModel, delta: ShapeParams, n_steps=DEFAULT_N_STEPS,
                     max_landmark_mm=DEFAULT_MAX_LANDMARK_MM):
    """Uniform k grid whose largest step moves the farthest landmark by
    ``max_landmark_mm``."""
    per_unit = np.linalg.norm(landmark_blocks(model) @ delta.coeffs, axis=1).max()
    if not per_unit > 0:
        raise ValidationError("direction does not move any landmark; pass k values explicitly")
    return np.linspace(0.0, max_landmark_mm / per_unit, n_steps)


def sweep_ambiguity(model: BodyModel, beta_ref: ShapeParams, delta: ShapeParams, k_values=None,
                    residual=float("nan"), threads=1) -> AmbiguityCurve:
    """Landmark and measurement changes along ``beta_ref + k * delta``."""
    if k_values is None:
        k_values = default_k_values(model, delta)
    ks = np.asarray(k_values, dtype=float)
    if ks.ndim != 1 or len(ks) == 0 or np.any(np.diff(ks) <= 0):
        raise ValidationError("k values must be strictly increasing")
    if not np.any(ks == 0):
        raise ValidationError("k values must include 0")
    zero = PoseParams.zeros(model.n_joints)
    ref_lm = landmarks_of(model, beta_ref, zero).coords
    ref_m = measure_ground_truth(model, beta_ref)

    def row(k):
        beta = ShapeParams(beta_ref.coeffs + k * delta.coeffs)
        lm = landmarks_of(model, beta, zero).coords
        return np.linalg.norm(lm - ref_lm, axis=1).max(), np.abs(measure_ground_truth(model, beta) - ref_m)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        rows = list(pool.map(row, ks))
    names = tuple(d.name for d in model.measurement_defs)
    return AmbiguityCurve(ks, np.array([r[0] for r in rows]), np.stack([r[1] for r in rows]), delta,
                          float(residual), names)


def format_curve_csv(curve: AmbiguityCurve) -> str:
    delta = " ".join(repr(float(v)) for v in curve.delta.coeffs)
    lines = [
        f"{AMBIGUITY_FORMAT}\tdelta={delta}\tresidual={curve.residual!r}",
        ",".join(["k", "max_landmark_dist_mm", *curve.names]),
    ]
    for k, d, errs in zip(curve.steps, curve.max_landmark_dist_mm, curve.measurement_err_mm):
        lines.append(",".join(repr(float(v)) for v in (k, d, *errs)))
    return "\n".join(lines) + "\n"


def write_curve(path, curve: AmbiguityCurve):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_curve_csv(curve))
