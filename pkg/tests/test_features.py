import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from anthrokit import registry
from anthrokit.body import ShapeParams
from anthrokit.errors import EmptyStream, FormatError, ValidationError
from anthrokit.features import (
    FeatureSelection,
    feature_matrix,
    feature_vector,
    format_selection,
    load_selection,
    lower_median,
    pairwise_distances,
    parse_selection,
    save_selection,
    select_features,
)
from anthrokit.generation import single_subject_poses
from anthrokit.landmarks import LandmarkSet, flatten, normalize

from conftest import random_landmarks, random_rigid
from test_body import rigid_bone_pairs


def brute_force_distances(c):
    out = []
    for i in range(70):
        for j in range(i + 1, 70):
            out.append(np.sqrt(sum((c[i, k] - c[j, k]) ** 2 for k in range(3))))
    return np.array(out)


def brute_force_medians(ref, samples):
    r = pairwise_distances(ref)
    dev = np.abs(pairwise_distances(np.stack([s.coords for s in samples])) - r)
    return np.array([sorted(dev[:, k])[(len(samples) - 1) // 2] for k in range(registry.N_PAIRS)])


def selection_with(pairs, threshold=10.0):
    return FeatureSelection(tuple(pairs), threshold, np.zeros(registry.N_PAIRS))


# pairwise distances


def test_coincident_landmarks():
    assert np.array_equal(pairwise_distances(LandmarkSet(np.ones((70, 3)))), np.zeros(2415))


def test_one_displaced_landmark():
    # 70 points cannot have exactly one nonzero pair distance; moving one
    # landmark 100 mm off the common origin makes all of its 69 pairs 100
    c = np.zeros((70, 3))
    c[30] = [0.0, 60.0, 80.0]
    d = pairwise_distances(LandmarkSet(c))
    assert d[registry.pair_index(12, 30)] == 100.0
    hit = {registry.pair_index(min(30, j), max(30, j)) for j in range(70) if j != 30}
    assert set(np.nonzero(d)[0]) == hit and np.all(d[list(hit)] == 100.0)


def test_matches_double_loop():
    rng = np.random.default_rng(0)
    for _ in range(20):
        c = rng.normal(scale=300, size=(70, 3))
        np.testing.assert_allclose(pairwise_distances(LandmarkSet(c)), brute_force_distances(c), rtol=1e-14)


def test_batched_distances():
    rng = np.random.default_rng(1)
    c = rng.normal(size=(4, 70, 3))
    d = pairwise_distances(c)
    assert d.shape == (4, 2415)
    assert np.array_equal(d[2], pairwise_distances(c[2]))


def test_lower_median():
    assert lower_median([3, 1, 2]) == 2
    assert lower_median([4, 1, 3, 2]) == 2
    assert lower_median([0.0, 20.0]) == 0.0


# selection


def test_reference_alone_selects_everything():
    ref = random_landmarks(np.random.default_rng(2))
    sel = select_features(ref, [ref])
    assert len(sel.pairs) == 2415 and np.all(sel.per_pair_median_dev_mm == 0)
    assert sel.n_poses == 1


def test_rigid_copies_select_everything():
    rng = np.random.default_rng(3)
    ref = random_landmarks(rng)
    samples = [ref.transformed(*random_rigid(rng)) for _ in range(8)]
    sel = select_features(ref, samples)
    assert len(sel.pairs) == 2415


def test_hand_built_three_sample_median():
    ref = np.zeros((70, 3))
    ref[:, 0] = np.arange(70) * 1000.0
    ref = LandmarkSet(ref)
    samples = []
    for dev in (0.0, 5.0, 20.0):
        c = ref.coords.copy()
        c[1, 0] += dev
        samples.append(LandmarkSet(c))
    k = registry.pair_index(0, 1)
    sel = select_features(ref, samples, threshold_mm=10)
    assert sel.per_pair_median_dev_mm[k] == 5.0
    assert (0, 1) in sel.pairs
    assert (0, 1) not in select_features(ref, samples, threshold_mm=4).pairs
    # strictly below: a median equal to the threshold is rejected
    assert (0, 1) not in select_features(ref, samples, threshold_mm=5).pairs


def test_even_count_takes_the_lower_middle():
    ref = LandmarkSet(np.arange(210.0).reshape(70, 3) * 100)
    samples = []
    for dev in (0.0, 3.0, 7.0, 20.0):
        c = ref.coords.copy()
        c[1] += [dev, 0, 0]
        samples.append(LandmarkSet(c))
    sel = select_features(ref, samples)
    k = registry.pair_index(0, 1)
    assert sel.per_pair_median_dev_mm[k] == pytest.approx(brute_force_medians(ref, samples)[k], abs=0)


def test_empty_stream():
    ref = random_landmarks(np.random.default_rng(4))
    with pytest.raises(EmptyStream):
        select_features(ref, [])
    with pytest.raises(ValidationError):
        select_features(ref, [ref], threshold_mm=0)


def test_medians_match_sort_oracle(model):
    ref, posed = single_subject_poses(model, ShapeParams.zeros(), 50, seed=1)
    sel = select_features(ref, posed)
    assert np.array_equal(sel.per_pair_median_dev_mm, brute_force_medians(ref, posed))


def test_spill_path_gives_identical_medians(model, tmp_path):
    ref, posed = single_subject_poses(model, ShapeParams.zeros(), 60, seed=2)
    mem = select_features(ref, posed)
    spilled = select_features(ref, posed, memory_cap=7, spill_dir=tmp_path, chunk=9)
    assert spilled == mem
    assert list(tmp_path.iterdir()) == []


def test_array_input_matches_stream(model):
    ref, posed = single_subject_poses(model, ShapeParams.zeros(), 20, seed=3)
    a = select_features(ref, posed)
    b = select_features(ref, np.stack([p.coords for p in posed]), chunk=6)
    assert np.array_equal(a.per_pair_median_dev_mm, b.per_pair_median_dev_mm)


def test_rigid_bone_recall(model):
    ref, posed = single_subject_poses(model, ShapeParams.zeros(), 200, seed=4)
    sel = select_features(ref, posed)
    for t in (1e-6, 0.5, 10.0):
        chosen = set(sel.with_threshold(t).pairs)
        assert all(p in chosen for p in rigid_bone_pairs(model))


@settings(max_examples=30, deadline=None)
@given(st.floats(0.01, 100), st.floats(0.01, 100))
def test_threshold_monotonicity(t1, t2):
    med = np.random.default_rng(5).uniform(0, 50, size=2415)
    lo, hi = sorted((t1, t2))
    base = FeatureSelection((), 1.0, med)
    assert set(base.with_threshold(lo).pairs) <= set(base.with_threshold(hi).pairs)


def test_rigidly_moved_samples_give_identical_selection(model):
    rng = np.random.default_rng(6)
    ref, posed = single_subject_poses(model, ShapeParams.zeros(), 30, seed=5)
    moved = [p.transformed(*random_rigid(rng)) for p in posed]
    a, b = select_features(ref, posed), select_features(ref, moved)
    assert a.pairs == b.pairs
    np.testing.assert_allclose(a.per_pair_median_dev_mm, b.per_pair_median_dev_mm, rtol=0, atol=1e-9)


def test_selection_invariants():
    med = np.zeros(2415)
    with pytest.raises(ValidationError):
        FeatureSelection(((1, 0),), 10.0, med)
    with pytest.raises(ValidationError):
        FeatureSelection(((0, 2), (0, 1)), 10.0, med)
    with pytest.raises(ValidationError):
        FeatureSelection((), 10.0, np.zeros(10))
    high = med.copy()
    high[0] = 50.0
    with pytest.raises(ValidationError):
        FeatureSelection(((0, 1),), 10.0, high)


# feature vectors


def test_vector_length_for_158_pairs():
    sel = selection_with(registry.all_pairs()[:158])
    ls, _ = normalize(random_landmarks(np.random.default_rng(7)))
    assert sel.n_features == 368
    assert feature_vector(ls, sel).shape == (368,)


def test_no_pairs_gives_flattened_coordinates():
    ls = LandmarkSet(np.round(np.random.default_rng(8).normal(size=(70, 3)) * 1e4) / 1e4)
    assert np.array_equal(feature_vector(ls, selection_with(())), flatten(ls))


def test_vector_layout():
    ls, _ = normalize(random_landmarks(np.random.default_rng(9)))
    pairs = [(0, 1), (5, 60), (68, 69)]
    v = feature_vector(ls, selection_with(pairs))
    np.testing.assert_allclose(v[:210], flatten(ls), rtol=0, atol=1e-4)
    for k, (i, j) in enumerate(pairs):
        assert v[210 + k] == pytest.approx(np.linalg.norm(ls.coords[i] - ls.coords[j]), abs=1e-3)


def test_distance_part_is_rigid_invariant():
    rng = np.random.default_rng(10)
    sel = selection_with(registry.all_pairs()[::7])
    raw = random_landmarks(rng)
    base = feature_vector(normalize(raw)[0], sel)
    for _ in range(20):
        moved = raw.transformed(*random_rigid(rng))
        assert np.array_equal(feature_vector(normalize(moved)[0], sel)[210:], base[210:])


def test_matrix_matches_vectors():
    rng = np.random.default_rng(11)
    sel = selection_with(registry.all_pairs()[:40])
    sets = [normalize(random_landmarks(rng))[0] for _ in range(5)]
    m = feature_matrix(np.stack([s.coords for s in sets]), sel)
    for row, s in zip(m, sets):
        assert np.array_equal(row, feature_vector(s, sel))


# file format


def test_selection_file_round_trip(model, tmp_path):
    ref, posed = single_subject_poses(model, ShapeParams.zeros(), 10, seed=6)
    sel = select_features(ref, posed)
    path = tmp_path / "sel.txt"
    save_selection(path, sel)
    back = load_selection(path)
    assert back == sel and back.digest == sel.digest


def test_selection_file_uses_names():
    sel = selection_with([(0, 1)])
    text = format_selection(sel)
    names = registry.LANDMARK_NAMES
    assert f"pair\t{names[0]}\t{names[1]}" in text
    # listing a pair with its names swapped still parses to the same pair
    swapped = text.replace(f"pair\t{names[0]}\t{names[1]}", f"pair\t{names[1]}\t{names[0]}")
    assert parse_selection(swapped).pairs == ((0, 1),)


def test_selection_file_errors():
    text = format_selection(selection_with([(0, 1)]))
    with pytest.raises(FormatError):
        parse_selection("garbage")
    with pytest.raises(FormatError):
        parse_selection(text.replace("n_selected\t1", "n_selected\t2"))
    with pytest.raises(FormatError):
        parse_selection("\n".join(line for line in text.splitlines() if not line.startswith("median\tSellion")))


def test_digest_depends_on_pairs_only():
    a = selection_with([(0, 1)])
    b = FeatureSelection(((0, 1),), 3.0, np.full(2415, 0.5))
    assert a.digest == b.digest
    assert a.digest != selection_with([(0, 2)]).digest
