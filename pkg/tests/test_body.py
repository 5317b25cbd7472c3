from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from anthrokit import registry
from anthrokit.body import (
    N_JOINTS,
    N_SHAPE,
    MeasurementDef,
    PoseParams,
    ShapeParams,
    hinge_axes,
    landmarks_of,
    load_model,
    make_default_model,
    measure_ground_truth,
    measure_mesh,
    model_from_json,
    model_to_json,
    pose_mesh,
    repose_to_apose,
    rodrigues,
    rodrigues_jacobian,
    save_model,
    wrap_rotvecs,
)
from anthrokit.errors import DimensionMismatch, FormatError, NonFinite, ValidationError
from anthrokit.mesh import cylinder_mesh


def random_pose(rng, scale=0.6, n=N_JOINTS):
    rot = rng.normal(scale=scale, size=(n, 3))
    return PoseParams(wrap_rotvecs(rot), rng.uniform(-500, 500, size=3))


def random_shape(rng):
    return ShapeParams(rng.normal(size=N_SHAPE))


def rigid_bone_pairs(model):
    """Landmark pairs whose vertices follow a single identical joint."""
    w = model.skin_weights[model.landmark_vertex_ids]
    one_hot = np.isclose(w.max(axis=1), 1.0, rtol=0, atol=0)
    owner = w.argmax(axis=1)
    return [(i, j) for i, j in registry.all_pairs() if one_hot[i] and one_hot[j] and owner[i] == owner[j]]


def test_model_structure(model):
    assert model.n_vertices >= 2000
    assert model.n_joints == 16 and model.n_shape == 8
    assert len(model.landmark_vertex_ids) == 70
    assert np.max(np.abs(model.skin_weights.sum(axis=1) - 1)) <= 1e-9
    assert np.all(model.skin_weights >= 0)
    model.check()


def test_same_seed_same_serialization(model):
    assert model_to_json(make_default_model(0)) == model_to_json(model)


def test_serialization_round_trip(model, tmp_path):
    path = tmp_path / "body.json"
    save_model(path, model)
    back = load_model(path)
    assert model_to_json(back) == model_to_json(model)
    assert np.array_equal(back.template_vertices, model.template_vertices)
    assert np.array_equal(back.skin_weights, model.skin_weights)


def test_bad_model_json():
    with pytest.raises(FormatError):
        model_from_json("{nope")
    with pytest.raises(FormatError):
        model_from_json('{"format": "other/9"}')


def test_zero_pose_is_template(model):
    mesh = pose_mesh(model, ShapeParams.zeros(), PoseParams.zeros())
    assert np.array_equal(mesh.vertices, model.template_vertices)
    lms = landmarks_of(model, ShapeParams.zeros(), PoseParams.zeros())
    assert np.array_equal(lms.coords, model.template_vertices[model.landmark_vertex_ids])
    assert np.array_equal(repose_to_apose(model, ShapeParams.zeros()).vertices, model.template_vertices)


def test_first_shape_mode(model):
    e1 = np.zeros(N_SHAPE)
    e1[0] = 1.0
    mesh = pose_mesh(model, ShapeParams(e1), PoseParams.zeros())
    np.testing.assert_allclose(mesh.vertices, model.template_vertices + model.shape_basis[:, :, 0], rtol=0, atol=1e-12)


def test_root_translation_shifts_every_vertex(model):
    rng = np.random.default_rng(0)
    for _ in range(10):
        shape, pose = random_shape(rng), random_pose(rng)
        t = rng.uniform(-1000, 1000, size=3)
        moved = PoseParams(pose.joint_rotations, pose.root_translation + t)
        a = pose_mesh(model, shape, pose).vertices
        b = pose_mesh(model, shape, moved).vertices
        np.testing.assert_allclose(b, a + t, rtol=0, atol=1e-9)


def test_landmarks_of_matches_mesh_gather(model):
    rng = np.random.default_rng(1)
    for _ in range(20):
        shape, pose = random_shape(rng), random_pose(rng)
        full = pose_mesh(model, shape, pose).vertices[model.landmark_vertex_ids]
        np.testing.assert_allclose(landmarks_of(model, shape, pose).coords, full, rtol=0, atol=1e-9)


def test_root_rotation_moves_landmarks_rigidly(model):
    rng = np.random.default_rng(2)
    shape, pose = random_shape(rng), random_pose(rng)
    rotvec = Rotation.random(random_state=rng).as_rotvec()
    r = rodrigues(rotvec)
    # compose a world rotation about the pelvis joint with the existing root rotation
    j0 = (model.joint_rest + model.joint_shape_basis @ shape.coeffs)[0]
    r0 = rodrigues(pose.joint_rotations[0])
    rot = pose.joint_rotations.copy()
    rot[0] = Rotation.from_matrix(r @ r0).as_rotvec()
    t = rng.uniform(-300, 300, size=3)
    moved = PoseParams(rot, r @ (pose.root_translation + j0) - j0 + t)
    a = landmarks_of(model, shape, pose).coords
    b = landmarks_of(model, shape, moved).coords
    np.testing.assert_allclose(b, a @ r.T + t, rtol=0, atol=1e-8)


def test_dimension_checks(model):
    with pytest.raises(DimensionMismatch):
        pose_mesh(model, ShapeParams(np.zeros(3)), PoseParams.zeros())
    with pytest.raises(DimensionMismatch):
        pose_mesh(model, ShapeParams.zeros(), PoseParams.zeros(4))
    with pytest.raises(DimensionMismatch):
        PoseParams(np.zeros((16, 2)))


def test_param_invariants():
    with pytest.raises(NonFinite):
        ShapeParams([np.inf])
    with pytest.raises(ValidationError):
        PoseParams(np.full((16, 3), 2.0))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.floats(-3, 3), st.floats(-3, 3))
def test_shape_linearity(model, seed, a, b):
    rng = np.random.default_rng(seed)
    b1, b2 = rng.normal(size=N_SHAPE), rng.normal(size=N_SHAPE)
    zero = PoseParams.zeros()

    def lm(c):
        return landmarks_of(model, ShapeParams(c), zero).coords

    lhs = lm(a * b1 + b * b2)
    rhs = a * lm(b1) + b * lm(b2) - (a + b - 1) * lm(np.zeros(N_SHAPE))
    np.testing.assert_allclose(lhs, rhs, rtol=0, atol=1e-9)


def test_rigid_bone_pairs_exist(model):
    pairs = rigid_bone_pairs(model)
    assert len(pairs) > 50


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31))
def test_bone_length_preservation(model, seed):
    rng = np.random.default_rng(seed)
    pairs = np.array(rigid_bone_pairs(model))
    shape = random_shape(rng)
    rest = landmarks_of(model, shape, PoseParams.zeros()).coords
    posed = landmarks_of(model, shape, random_pose(rng, scale=1.0)).coords

    def lengths(c):
        return np.linalg.norm(c[pairs[:, 0]] - c[pairs[:, 1]], axis=1)

    np.testing.assert_allclose(lengths(posed), lengths(rest), rtol=0, atol=1e-6)


def test_rodrigues_jacobian_matches_finite_differences():
    rng = np.random.default_rng(3)
    v = np.concatenate([rng.normal(size=(5, 3)), np.zeros((1, 3)), 1e-7 * rng.normal(size=(1, 3))])
    jac = rodrigues_jacobian(v)
    h = 1e-6
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        fd = (rodrigues(v + e) - rodrigues(v - e)) / (2 * h)
        np.testing.assert_allclose(jac[:, i], fd, rtol=0, atol=1e-7)


def test_wrap_rotvecs_same_rotation():
    rng = np.random.default_rng(4)
    v = rng.normal(scale=5.0, size=(50, 3))
    w = wrap_rotvecs(v)
    assert np.all(np.linalg.norm(w, axis=1) <= np.pi + 1e-12)
    np.testing.assert_allclose(rodrigues(w), rodrigues(v), atol=1e-12)


def test_hinge_axes_are_unit(model):
    axes = hinge_axes(model)
    assert sorted(axes) == [5, 8, 11, 14]
    for a in axes.values():
        assert abs(np.linalg.norm(a) - 1) < 1e-12


# measurements


def test_ground_truth_is_finite_and_plausible(model):
    m = measure_ground_truth(model, ShapeParams.zeros())
    assert m.shape == (11,) and np.all(np.isfinite(m)) and np.all(m >= 0)
    stature = m[registry.MEASUREMENT_NAMES.index("stature")]
    assert 1400 < stature < 2000


def test_stature_definition(model):
    v = model.template_vertices.copy()
    lo, hi = v[:, 1].min(), v[:, 1].max()
    v[:, 1] = (v[:, 1] - lo) / (hi - lo) * 1700.0
    tall = replace(model, template_vertices=v, measurement_defs=(MeasurementDef("stature", "stature"),))
    assert measure_ground_truth(tall, ShapeParams.zeros())[0] == 1700.0


def test_length_between_one_anchor_is_zero(model):
    m = replace(model, measurement_defs=(MeasurementDef("x", "length", ("Sellion", "Sellion")),))
    assert measure_ground_truth(m, ShapeParams.zeros())[0] == 0.0


def test_circumference_of_cylinder_limb(model):
    r = 80.0
    cyl = cylinder_mesh(radius=r, height=400.0, segments=64, rings=9)
    # put the anchor on a mid-height ring vertex
    ids = np.full(70, 4 * 64 + 3)
    limb = replace(model, landmark_vertex_ids=ids,
                   measurement_defs=(MeasurementDef("limb C.", "circumference", ("Sellion",)),))
    c = measure_mesh(limb, cyl)[0]
    assert abs(c - 2 * np.pi * r) / (2 * np.pi * r) < 5e-3
    assert c == pytest.approx(2 * 64 * r * np.sin(np.pi / 64), rel=1e-12)


def test_measurement_def_validation():
    with pytest.raises(ValidationError):
        MeasurementDef("x", "volume")
    with pytest.raises(ValidationError):
        MeasurementDef("x", "length", ("Sellion",))
    with pytest.raises(KeyError):
        MeasurementDef("x", "height", ("Nowhere",))
