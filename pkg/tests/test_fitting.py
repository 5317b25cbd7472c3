import numpy as np
import pytest

from anthrokit.body import N_JOINTS, PoseParams, ShapeParams, landmarks_of, measure_ground_truth
from anthrokit.errors import DimensionMismatch
from anthrokit.fitting import (
    baseline_measurements,
    fit_body_to_landmarks,
    landmark_objective,
    pack,
    rigid_init,
    unpack,
)
from anthrokit.generation import sample_pose
from anthrokit.landmarks import LandmarkSet
from anthrokit.optim import OptimConfig, adam_minimize


def mild_case(model, seed):
    rng = np.random.default_rng(seed)
    shape = ShapeParams(np.clip(rng.normal(size=model.n_shape), -2, 2))
    return shape, sample_pose(model, "standing", rng)


def test_objective_gradient_matches_finite_differences(model):
    rng = np.random.default_rng(0)
    shape = ShapeParams(rng.normal(size=model.n_shape))
    pose = PoseParams(rng.normal(scale=0.4, size=(N_JOINTS, 3)), rng.normal(scale=100, size=3))
    target = landmarks_of(model, ShapeParams.zeros(), PoseParams.zeros()).coords + rng.normal(scale=20, size=(70, 3))
    x = pack(shape, pose)
    _, g = landmark_objective(model, x, target)
    h = 1e-6
    fd = np.empty_like(x)
    for k in range(len(x)):
        e = np.zeros_like(x)
        e[k] = h
        fd[k] = (landmark_objective(model, x + e, target)[0] - landmark_objective(model, x - e, target)[0]) / (2 * h)
    np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-4 * np.abs(fd).max())


def test_pack_unpack_round_trip(model):
    rng = np.random.default_rng(1)
    shape = ShapeParams(rng.normal(size=model.n_shape))
    pose = PoseParams(rng.normal(scale=0.3, size=(N_JOINTS, 3)), rng.normal(size=3))
    s, p = unpack(model, pack(shape, pose))
    assert np.array_equal(s.coeffs, shape.coeffs)
    assert np.array_equal(p.joint_rotations, pose.joint_rotations)
    assert np.array_equal(p.root_translation, pose.root_translation)


def test_truth_is_a_fixed_point(model):
    shape, pose = mild_case(model, 2)
    observed = landmarks_of(model, shape, pose)
    _, _, rms = fit_body_to_landmarks(model, observed, init=(shape, pose))
    assert rms < 1e-6


@pytest.mark.parametrize("seed", range(10))
def test_recovers_mild_poses(model, seed):
    shape, pose = mild_case(model, 100 + seed)
    observed = landmarks_of(model, shape, pose)
    fs, fp, rms = fit_body_to_landmarks(model, observed)
    rec = landmarks_of(model, fs, fp).coords
    assert np.sqrt(np.mean(np.sum((rec - observed.coords) ** 2, axis=1))) < 1.0
    assert rms < 1.0


def test_noisy_landmarks_leave_a_residual(model):
    rms = []
    for k in range(10):
        shape, pose = mild_case(model, 200 + k)
        clean = landmarks_of(model, shape, pose).coords
        noisy = clean + np.random.default_rng(k).normal(scale=1.0, size=clean.shape)
        rms.append(fit_body_to_landmarks(model, LandmarkSet(noisy), init=(shape, pose))[2])
    rms = np.array(rms)
    # the noise RMS per landmark is sqrt(3) mm; fitting absorbs a part of it
    assert np.all(rms > 0.5) and np.all(rms < 2.0)


def test_baseline_consistency_from_truth(model):
    rng = np.random.default_rng(3)
    for _ in range(3):
        shape = ShapeParams(rng.normal(size=model.n_shape))
        zero = PoseParams.zeros()
        observed = landmarks_of(model, shape, zero)
        meas, rms = baseline_measurements(model, observed, init=(shape, zero))
        np.testing.assert_allclose(meas, measure_ground_truth(model, shape), rtol=0, atol=1.0)


def test_rigid_init_places_the_pelvis(model):
    rot = np.zeros((N_JOINTS, 3))
    rot[0] = [0.3, -1.2, 0.5]
    observed = landmarks_of(model, ShapeParams.zeros(), PoseParams(rot, [120.0, -40.0, 900.0]))
    s, p = rigid_init(model, observed)
    np.testing.assert_allclose(landmarks_of(model, s, p).coords, observed.coords, atol=1e-6)


def test_fit_is_deterministic(model):
    shape, pose = mild_case(model, 5)
    observed = landmarks_of(model, shape, pose)
    cfg = OptimConfig(max_iter=200)
    a = fit_body_to_landmarks(model, observed, config=cfg)
    b = fit_body_to_landmarks(model, observed, config=cfg)
    assert np.array_equal(a[0].coeffs, b[0].coeffs) and a[2] == b[2]


def test_bad_init_dimensions(model):
    observed = landmarks_of(model, ShapeParams.zeros(), PoseParams.zeros())
    with pytest.raises(DimensionMismatch):
        fit_body_to_landmarks(model, observed, init=(ShapeParams(np.zeros(3)), PoseParams.zeros()))


def test_adam_on_a_quadratic():
    target = np.array([1.0, -2.0, 3.0])

    def fun(x):
        d = x - target
        return float(d @ d), 2 * d

    x, f, _ = adam_minimize(fun, np.zeros(3), OptimConfig(lr=0.1, max_iter=3000, patience=500))
    np.testing.assert_allclose(x, target, atol=1e-4)
    assert f < 1e-8


def test_optim_config_validation():
    with pytest.raises(ValueError):
        OptimConfig(lr=-1)
    with pytest.raises(ValueError):
        OptimConfig(final_lr_fraction=0)
