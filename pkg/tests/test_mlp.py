import numpy as np
import pytest

from anthrokit import registry
from anthrokit.errors import DimensionMismatch, FormatError, InsufficientData, NonFiniteLoss, SelectionMismatch, ValidationError
from anthrokit.features import FeatureSelection, feature_vector
from anthrokit.generation import generate_samples
from anthrokit.landmarks import normalize
from anthrokit.mlp import (
    MlpModel,
    TrainConfig,
    forward,
    init_model,
    input_spec_for,
    load_model,
    loss_and_grad,
    parse_model,
    predict,
    predict_many,
    save_model,
    train,
    train_arrays,
    write_history,
)

from conftest import random_landmarks, random_rigid


def zero_model(dims, out_bias):
    weights = [np.zeros((o, i)) for i, o in zip(dims[:-1], dims[1:])]
    biases = [np.zeros(o) for o in dims[1:]]
    biases[-1] = np.asarray(out_bias, dtype=float)
    return MlpModel(dims, weights, biases)


def random_small_model(rng, dims):
    m = init_model(dims, seed=int(rng.integers(2**31)))
    m.biases = [rng.normal(scale=0.1, size=b.shape) for b in m.biases]
    m.x_mean = rng.normal(size=dims[0])
    m.x_std = rng.uniform(0.5, 2.0, size=dims[0])
    m.y_mean = rng.normal(size=dims[-1])
    m.y_std = rng.uniform(0.5, 2.0, size=dims[-1])
    return m


def gradient_check(model, x, y, rng, n_params=200, h=1e-4):
    """Max relative error between backprop and central differences over
    ``n_params`` randomly chosen weights and biases."""
    _, (gw, gb) = loss_and_grad(model, x, y)
    params = model.weights + model.biases
    grads = gw + gb
    sizes = np.array([p.size for p in params])
    worst = 0.0
    for _ in range(n_params):
        l = int(rng.choice(len(params), p=sizes / sizes.sum()))
        k = int(rng.integers(params[l].size))
        p = params[l].reshape(-1)
        old = p[k]
        p[k] = old + h
        fp = loss_and_grad(model, x, y)[0]
        p[k] = old - h
        fm = loss_and_grad(model, x, y)[0]
        p[k] = old
        fd = (fp - fm) / (2 * h)
        g = grads[l].reshape(-1)[k]
        scale = max(abs(g), abs(fd))
        if scale > 1e-10:
            worst = max(worst, abs(g - fd) / scale)
    return worst


# forward


def test_zero_network_outputs_its_bias():
    m = zero_model((5, 4, 3, 11), np.arange(1, 12))
    rng = np.random.default_rng(0)
    for _ in range(5):
        assert np.array_equal(forward(m, rng.normal(size=5) * 100), np.arange(1.0, 12.0))


def test_hand_evaluated_two_unit_network():
    w1 = np.array([[1.0, 0.0], [0.0, -1.0]])
    w2 = np.array([[2.0, 1.0], [0.0, 1.0]])
    w3 = np.array([[1.0, 1.0], [1.0, -1.0]])
    b = [np.array([0.0, 1.0]), np.array([-1.0, 0.0]), np.array([0.5, 0.0])]
    m = MlpModel((2, 2, 2, 2), [w1, w2, w3], b)
    # h1 = relu([3, 1 - (-2)]) = [3, 3]; h2 = relu([6 + 3 - 1, 3]) = [8, 3]
    np.testing.assert_array_equal(forward(m, [3.0, -2.0]), [11.5, 5.0])


def test_relu_clamps_negative_inputs():
    m = MlpModel((1, 1, 1, 1), [np.array([[2.0]]), np.array([[1.0]]), np.array([[3.0]])],
                 [np.zeros(1), np.zeros(1), np.array([7.0])])
    assert forward(m, [1.5])[0] == 7.0 + 3 * 2 * 1.5
    assert forward(m, [-1.5])[0] == 7.0


def test_batch_forward_matches_rows():
    rng = np.random.default_rng(1)
    m = random_small_model(rng, (6, 5, 4, 3))
    x = rng.normal(size=(7, 6))
    out = forward(m, x)
    for row, xi in zip(out, x):
        np.testing.assert_allclose(row, forward(m, xi), rtol=1e-15)


def test_forward_checks_width():
    with pytest.raises(DimensionMismatch):
        forward(zero_model((4, 3, 2, 1), [0.0]), np.zeros(5))


def test_model_shape_validation():
    with pytest.raises(DimensionMismatch):
        MlpModel((2, 3, 1), [np.zeros((3, 2)), np.zeros((2, 3))], [np.zeros(3), np.zeros(1)])
    with pytest.raises(ValidationError):
        MlpModel((1, 1), [np.array([[np.nan]])], [np.zeros(1)])


# loss and gradient


def test_perfect_prediction_has_zero_loss_and_gradient():
    rng = np.random.default_rng(2)
    m = random_small_model(rng, (4, 6, 5, 3))
    x = rng.normal(size=(8, 4))
    mse, (gw, gb) = loss_and_grad(m, x, forward(m, x))
    assert mse == 0.0
    assert all(np.all(g == 0) for g in gw + gb)


def test_single_output_analytic():
    m = MlpModel((1, 1), [np.array([[0.0]])], [np.array([3.0])])
    mse, (gw, gb) = loss_and_grad(m, [[5.0]], [[1.0]])
    assert mse == 4.0
    # the output is the bias, so d(mse)/d(bias) = d(mse)/d(y_pred) = 2 (3 - 1)
    assert gb[0][0] == 4.0


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(3)
    for _ in range(5):
        dims = (int(rng.integers(3, 21)), int(rng.integers(2, 13)), int(rng.integers(2, 9)), int(rng.integers(1, 5)))
        m = random_small_model(rng, dims)
        x = rng.normal(size=(6, dims[0]))
        y = rng.normal(size=(6, dims[-1]))
        assert gradient_check(m, x, y, rng) < 1e-5


def test_loss_checks_shapes():
    m = zero_model((3, 2, 2), [0.0, 0.0])
    with pytest.raises(DimensionMismatch):
        loss_and_grad(m, np.zeros((4, 3)), np.zeros((4, 3)))


# training


def linear_toy(seed=2, n=600, dim=3):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-100, 100, size=(n, dim))
    a = rng.normal(size=(11, dim)) * 0.2
    return x, x @ a.T + 500.0


def test_linear_targets_are_learned():
    x, y = linear_toy()
    cfg = TrainConfig(epochs=200, batch_size=32, validation_fraction=0.0)
    m = train_arrays(x[:500], y[:500], list(range(500)), cfg)
    mae = np.abs(forward(m, x[500:]) - y[500:]).mean(axis=0)
    assert mae.mean() < 1.0


def test_training_is_deterministic():
    x, y = linear_toy(n=120)
    cfg = TrainConfig(epochs=5, batch_size=16, hidden=(8, 4), validation_fraction=0.2)
    groups = [f"S{k // 4}" for k in range(120)]
    a = train_arrays(x, y, groups, cfg)
    b = train_arrays(x, y, groups, cfg)
    assert a == b
    c = train_arrays(x, y, groups, TrainConfig(epochs=5, batch_size=16, hidden=(8, 4), validation_fraction=0.2, seed=1))
    assert a != c


def test_zero_learning_rate_keeps_initialization():
    x, y = linear_toy(n=50)
    cfg = TrainConfig(epochs=3, batch_size=8, hidden=(6, 5), learning_rate=0.0, validation_fraction=0.0, seed=4)
    m = train_arrays(x, y, list(range(50)), cfg)
    init = init_model(m.layer_dims, seed=4)
    for w, w0 in zip(m.weights + m.biases, init.weights + init.biases):
        assert np.array_equal(w, w0)


def test_sgd_momentum_runs():
    x, y = linear_toy(n=200)
    cfg = TrainConfig(epochs=30, batch_size=16, hidden=(16, 8), optimizer="sgd-momentum", learning_rate=1e-3,
                      validation_fraction=0.0)
    hist = []
    train_arrays(x, y, list(range(200)), cfg, history=hist)
    assert hist[-1][1] < hist[0][1]


def test_validation_split_is_by_subject_and_early_stops():
    x, y = linear_toy(n=200)
    groups = [f"S{k // 10}" for k in range(200)]
    hist = []
    cfg = TrainConfig(epochs=400, batch_size=32, hidden=(8, 4), validation_fraction=0.2, early_stop_patience=3,
                      learning_rate=0.05)
    m = train_arrays(x, y, groups, cfg, history=hist)
    meta = m.trained_meta
    assert meta["n_val"] % 10 == 0 and meta["n_val"] == 40
    assert meta["epochs_run"] == len(hist) < 400
    assert meta["epochs_run"] - meta["best_epoch"] == 3
    best = min(v for _, _, v in hist)
    assert hist[meta["best_epoch"] - 1][2] == best
    assert all(np.isfinite(v) for _, _, v in hist)


def test_insufficient_data():
    with pytest.raises(InsufficientData):
        train_arrays(np.zeros((1, 3)), np.zeros((1, 11)), ["a"])
    with pytest.raises(InsufficientData):
        train_arrays(np.zeros((3, 3)), np.full((3, 11), np.nan), ["a", "b", "c"])


def test_divergence_raises_with_epoch():
    x, y = linear_toy(n=64)
    cfg = TrainConfig(epochs=50, batch_size=8, hidden=(8, 8), optimizer="sgd-momentum", learning_rate=1e6,
                      validation_fraction=0.0, standardize="none")
    with pytest.raises(NonFiniteLoss) as info:
        with np.errstate(all="ignore"):
            train_arrays(x * 1e3, y, list(range(64)), cfg)
    assert info.value.epoch >= 1


def test_config_validation():
    with pytest.raises(ValidationError):
        TrainConfig(validation_fraction=0.7)
    with pytest.raises(ValidationError):
        TrainConfig(optimizer="lbfgs")
    with pytest.raises(ValidationError):
        TrainConfig(standardize="minmax")


# the landmark pipeline


@pytest.fixture(scope="module")
def small_pipeline(model):
    samples = generate_samples(model, 6, 5, seed=11)
    med = np.zeros(registry.N_PAIRS)
    sel = FeatureSelection(tuple(registry.all_pairs()[:20]), 10.0, med)
    cfg = TrainConfig(epochs=3, batch_size=8, hidden=(12, 6), validation_fraction=0.2)
    hist = []
    m = train([s.record for s in samples], sel, cfg, history=hist)
    return samples, sel, m, hist


def test_input_width_law(small_pipeline):
    _, sel, m, _ = small_pipeline
    assert m.layer_dims[0] == 210 + len(sel.pairs)
    assert m.input_spec == input_spec_for(sel)


def test_predict_is_the_composition(small_pipeline):
    samples, sel, m, _ = small_pipeline
    rng = np.random.default_rng(12)
    for _ in range(20):
        ls = random_landmarks(rng)
        want = forward(m, feature_vector(normalize(ls)[0], sel))
        assert np.array_equal(predict(m, ls, sel), want)


def test_predict_is_bitwise_rigid_invariant(small_pipeline):
    samples, sel, m, _ = small_pipeline
    rng = np.random.default_rng(13)
    for s in samples[:10]:
        ls = s.record.landmarks
        base = predict(m, ls, sel)
        for _ in range(5):
            assert np.array_equal(predict(m, ls.transformed(*random_rigid(rng)), sel), base)


def test_zero_model_predicts_its_bias(small_pipeline):
    samples, sel, m, _ = small_pipeline
    z = zero_model(m.layer_dims, np.arange(11.0))
    z.input_spec = input_spec_for(sel)
    for s in samples[:5]:
        assert np.array_equal(predict(z, s.record.landmarks, sel), np.arange(11.0))


def test_predict_many_matches_predict(small_pipeline):
    samples, sel, m, _ = small_pipeline
    sets = [s.record.landmarks for s in samples[:7]]
    many = predict_many(m, sets, sel)
    # a batched matrix product may round differently from a single row
    for row, ls in zip(many, sets):
        np.testing.assert_allclose(row, predict(m, ls, sel), rtol=1e-12)


def test_selection_mismatch(small_pipeline):
    samples, sel, m, _ = small_pipeline
    other = FeatureSelection(tuple(registry.all_pairs()[1:21]), 10.0, np.zeros(registry.N_PAIRS))
    with pytest.raises(SelectionMismatch):
        predict(m, samples[0].record.landmarks, other)


def test_model_file_round_trip(small_pipeline, tmp_path):
    samples, sel, m, hist = small_pipeline
    path = tmp_path / "model.txt"
    save_model(path, m)
    back = load_model(path)
    assert back == m
    x = np.random.default_rng(14).normal(size=(4, m.layer_dims[0]))
    assert np.array_equal(forward(back, x), forward(m, x))
    assert path.read_text().startswith("#anthrokit-mlp/1\n")
    log = tmp_path / "log.csv"
    write_history(log, hist)
    lines = log.read_text().splitlines()
    assert lines[1] == "epoch,train_mse,val_mse" and len(lines) == 2 + len(hist)


def test_model_file_errors():
    with pytest.raises(FormatError):
        parse_model("nope")
    with pytest.raises(FormatError):
        parse_model("#anthrokit-mlp/1\nlayer_dims\t2\t1\n")
