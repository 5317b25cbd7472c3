"""Measurement regressor: a small ReLU MLP with hand-written backprop.

Features and targets are standardized with training-set statistics that
are stored in the model, so :func:`forward` maps raw features to
millimeters.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import registry
from .errors import DimensionMismatch, FormatError, InsufficientData, NonFiniteLoss, SelectionMismatch, ValidationError
from .features import FeatureSelection, feature_matrix
from .landmarks import NORMALIZATION_ID, LandmarkSet, normalize

log = logging.getLogger(__name__)

MODEL_FORMAT = "#anthrokit-mlp/1"
TRAINLOG_FORMAT = "#anthrokit-trainlog/1"
DEFAULT_HIDDEN = (194, 97)


@dataclass
class TrainConfig:
    """Optimizer and schedule for :func:`train`.

    ``optimizer`` is ``"adam"`` or ``"sgd-momentum"``. A positive
    ``validation_fraction`` holds out that share of subjects and keeps the
    parameters with the lowest validation MSE.

    ``standardize`` picks the input scaling: ``"pooled"`` centers every
    feature and divides all of them by one shared training-set standard
    deviation, ``"per-feature"`` z-scores each feature, ``"none"`` leaves
    inputs and targets untouched. Targets are z-scored per output unless
    ``"none"``. Pooled scaling keeps features in millimeters relative to
    each other, so nearly constant features (rigid bone lengths) are not
    blown up to unit variance together with their noise.
    """

    learning_rate: float = 1e-3
    batch_size: int = 256
    epochs: int = 500
    seed: int = 0
    optimizer: str = "adam"
    validation_fraction: float = 0.1
    early_stop_patience: int = 50
    hidden: tuple = DEFAULT_HIDDEN
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    standardize: str = "pooled"

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.learning_rate < 0 or self.batch_size < 1 or self.epochs < 0 or self.early_stop_patience < 1:
            raise ValidationError("learning_rate >= 0, batch_size >= 1, epochs >= 0, patience >= 1 required")
        if not 0 <= self.validation_fraction <= 0.5:
            raise ValidationError("validation_fraction must be in [0, 0.5]")
        if self.optimizer not in ("adam", "sgd-momentum"):
            raise ValidationError(f"unknown optimizer {self.optimizer!r}")
        if self.standardize not in ("pooled", "per-feature", "none"):
            raise ValidationError(f"unknown standardize mode {self.standardize!r}")
        if any(h < 1 for h in self.hidden):
            raise ValidationError("hidden layer sizes must be >= 1")

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


@dataclass(eq=False)
class MlpModel:
    layer_dims: tuple
    weights: list  # W[l] has shape (dims[l + 1], dims[l])
    biases: list
    input_spec: dict = field(default_factory=dict)
    output_names: tuple = registry.MEASUREMENT_NAMES
    x_mean: np.ndarray | None = None
    x_std: np.ndarray | None = None
    y_mean: np.ndarray | None = None
    y_std: np.ndarray | None = None
    trained_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        dims = self.layer_dims = tuple(int(d) for d in self.layer_dims)
        if len(self.weights) != len(dims) - 1 or len(self.biases) != len(dims) - 1:
            raise DimensionMismatch("one weight matrix and bias per layer expected")
        self.weights = [np.asarray(w, dtype=float) for w in self.weights]
        self.biases = [np.asarray(b, dtype=float) for b in self.biases]
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (dims[l + 1], dims[l]) or b.shape != (dims[l + 1],):
                raise DimensionMismatch(f"layer {l}: shapes {w.shape}, {b.shape} do not chain with {dims}")
        n_in, n_out = dims[0], dims[-1]
        self.x_mean = np.zeros(n_in) if self.x_mean is None else np.asarray(self.x_mean, dtype=float)
        self.x_std = np.ones(n_in) if self.x_std is None else np.asarray(self.x_std, dtype=float)
        self.y_mean = np.zeros(n_out) if self.y_mean is None else np.asarray(self.y_mean, dtype=float)
        self.y_std = np.ones(n_out) if self.y_std is None else np.asarray(self.y_std, dtype=float)
        if self.x_mean.shape != (n_in,) or self.x_std.shape != (n_in,):
            raise DimensionMismatch("input standardization does not match layer_dims[0]")
        if self.y_mean.shape != (n_out,) or self.y_std.shape != (n_out,):
            raise DimensionMismatch("output standardization does not match layer_dims[-1]")
        self.output_names = tuple(self.output_names)
        if len(self.output_names) != n_out:
            self.output_names = tuple(f"y{k}" for k in range(n_out))
        params = self.weights + self.biases + [self.x_mean, self.x_std, self.y_mean, self.y_std]
        if not all(np.all(np.isfinite(p)) for p in params):
            raise ValidationError("model parameters must be finite")

    def copy(self):
        return MlpModel(
            self.layer_dims, [w.copy() for w in self.weights], [b.copy() for b in self.biases],
            dict(self.input_spec), self.output_names, self.x_mean.copy(), self.x_std.copy(),
            self.y_mean.copy(), self.y_std.copy(), dict(self.trained_meta),
        )

    def __eq__(self, other):
        if not isinstance(other, MlpModel):
            return NotImplemented
        return format_model(self) == format_model(other)


def init_model(layer_dims, seed=0, **kwargs) -> MlpModel:
    """He-uniform weights, zero biases."""
    rng = np.random.default_rng([seed, 0])
    weights, biases = [], []
    for n_in, n_out in zip(layer_dims[:-1], layer_dims[1:]):
        bound = np.sqrt(6.0 / n_in)
        weights.append(rng.uniform(-bound, bound, size=(n_out, n_in)))
        biases.append(np.zeros(n_out))
    return MlpModel(tuple(layer_dims), weights, biases, **kwargs)


def _forward_std(weights, biases, z):
    """Forward pass in standardized space; returns output and activations."""
    acts = [z]
    for l, (w, b) in enumerate(zip(weights, biases)):
        z = z @ w.T + b
        if l < len(weights) - 1:
            z = np.maximum(z, 0.0)
        acts.append(z)
    return z, acts


def forward(model: MlpModel, x) -> np.ndarray:
    """Predict from one feature vector (returns 11 values) or a batch (N, d)."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != model.layer_dims[0]:
        raise DimensionMismatch(f"expected {model.layer_dims[0]} features, got {x.shape[-1]}")
    z = (x - model.x_mean) / model.x_std
    out, _ = _forward_std(model.weights, model.biases, np.atleast_2d(z))
    y = out * model.y_std + model.y_mean
    return y[0] if x.ndim == 1 else y


def _backward(weights, acts, g_out):
    """Gradients of a scalar whose derivative w.r.t. the output is g_out."""
    gw, gb = [None] * len(weights), [None] * len(weights)
    g = g_out
    for l in range(len(weights) - 1, -1, -1):
        gw[l] = g.T @ acts[l]
        gb[l] = g.sum(axis=0)
        if l > 0:
            g = (g @ weights[l]) * (acts[l] > 0)
    return gw, gb


def loss_and_grad(model: MlpModel, x, y_true):
    """MSE in millimeters over the batch and outputs, and its gradient.

    Returns ``(mse, (grad_weights, grad_biases))`` with one array per layer.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y_true = np.atleast_2d(np.asarray(y_true, dtype=float))
    if x.shape[1] != model.layer_dims[0] or y_true.shape != (len(x), model.layer_dims[-1]):
        raise DimensionMismatch("batch shapes do not match the model")
    z = (x - model.x_mean) / model.x_std
    out, acts = _forward_std(model.weights, model.biases, z)
    err = out * model.y_std + model.y_mean - y_true
    mse = float(np.mean(err * err))
    g_out = 2.0 * err * model.y_std / err.size
    return mse, _backward(model.weights, acts, g_out)


def _std_loss_grad(weights, biases, z, t):
    out, acts = _forward_std(weights, biases, z)
    err = out - t
    return float(np.mean(err * err)), _backward(weights, acts, 2.0 * err / err.size), err


def _split_subjects(groups, fraction, seed):
    subjects = sorted(set(groups))
    if fraction <= 0 or len(subjects) < 2:
        return np.ones(len(groups), bool)
    n_val = min(max(1, int(round(fraction * len(subjects)))), len(subjects) - 1)
    order = np.random.default_rng([seed, 1]).permutation(len(subjects))
    val = {subjects[k] for k in order[:n_val]}
    return np.array([g not in val for g in groups])


def train_arrays(x, y, groups, config: TrainConfig | None = None, input_spec=None, output_names=None,
                 history=None) -> MlpModel:
    """Train on a feature matrix ``x`` (N, d) and targets ``y`` (N, m).

    ``groups`` gives each row's subject id for the validation split.
    Per-epoch ``(epoch, train_mse, val_mse)`` tuples in target units
    squared are appended to ``history`` when given (``val_mse`` is NaN
    without validation). The training MSE is the mean over the epoch's
    mini-batches, taken before each update. Early stopping monitors the
    validation MSE.
    """
    config = config or TrainConfig()
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 2 or y.ndim != 2 or len(x) != len(y) or len(groups) != len(x):
        raise DimensionMismatch("x, y and groups must have matching rows")
    labelled = np.all(np.isfinite(y), axis=1)
    if labelled.sum() < 2:
        raise InsufficientData("training needs at least 2 labelled records")
    x, y = x[labelled], y[labelled]
    groups = [g for g, k in zip(groups, labelled) if k]
    if not np.all(np.isfinite(x)):
        raise ValidationError("non-finite feature values")

    is_train = _split_subjects(groups, config.validation_fraction, config.seed)
    x_tr, y_tr = x[is_train], y[is_train]
    x_va, y_va = x[~is_train], y[~is_train]
    dims = (x.shape[1], *config.hidden, y.shape[1])
    model = init_model(dims, config.seed, input_spec=dict(input_spec or {}),
                       output_names=output_names or registry.MEASUREMENT_NAMES)
    if config.standardize != "none":
        model.x_mean, model.x_std = _stats(x_tr, pooled=config.standardize == "pooled")
        model.y_mean, model.y_std = _stats(y_tr)
    zx_tr = (x_tr - model.x_mean) / model.x_std
    zy_tr = (y_tr - model.y_mean) / model.y_std
    zx_va = (x_va - model.x_mean) / model.x_std
    zy_va = (y_va - model.y_mean) / model.y_std

    params = model.weights + model.biases
    m1 = [np.zeros_like(p) for p in params]
    m2 = [np.zeros_like(p) for p in params]
    rng = np.random.default_rng([config.seed, 2])
    best_val, best_params, best_epoch, stale = np.inf, None, 0, 0
    step = 0
    epoch = 0
    nl = len(model.weights)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(zx_tr))
        sq_mm = 0.0
        for a in range(0, len(order), config.batch_size):
            idx = order[a:a + config.batch_size]
            loss, (gw, gb), err = _std_loss_grad(params[:nl], params[nl:], zx_tr[idx], zy_tr[idx])
            if not np.isfinite(loss):
                raise NonFiniteLoss(epoch)
            sq_mm += float(np.sum((err * model.y_std) ** 2))
            step += 1
            _update(params, gw + gb, m1, m2, step, config)
        train_mse = sq_mm / zy_tr.size
        val_mse = float("nan")
        if len(zx_va):
            out, _ = _forward_std(params[:nl], params[nl:], zx_va)
            val_mse = float(np.mean(((out - zy_va) * model.y_std) ** 2))
            if not np.isfinite(val_mse):
                raise NonFiniteLoss(epoch)
        if history is not None:
            history.append((epoch, train_mse, val_mse))
        log.debug("epoch %d train_mse %.6g val_mse %.6g", epoch, train_mse, val_mse)
        if len(zx_va):
            if val_mse < best_val:
                best_val, best_params, best_epoch, stale = val_mse, [p.copy() for p in params], epoch, 0
            else:
                stale += 1
                if stale >= config.early_stop_patience:
                    log.info("early stop at epoch %d (best %d)", epoch, best_epoch)
                    break
    if best_params is not None:
        params = best_params
    model.weights, model.biases = params[:nl], params[nl:]
    model.trained_meta = {
        "config": config.to_dict(),
        "epochs_run": epoch,
        "best_epoch": best_epoch if best_params is not None else epoch,
        "n_train": int(len(zx_tr)),
        "n_val": int(len(zx_va)),
    }
    return model


def _stats(a, pooled=False):
    mean = a.mean(axis=0)
    if pooled:
        std = np.full(a.shape[1], np.sqrt(np.mean(a.var(axis=0))))
    else:
        std = a.std(axis=0)
    std[~(std > 1e-12)] = 1.0
    return mean, std


def _update(params, grads, m1, m2, step, config):
    lr = config.learning_rate
    if config.optimizer == "adam":
        c1 = 1 - config.beta1**step
        c2 = 1 - config.beta2**step
        for p, g, a, b in zip(params, grads, m1, m2):
            a *= config.beta1
            a += (1 - config.beta1) * g
            b *= config.beta2
            b += (1 - config.beta2) * g * g
            p -= lr * (a / c1) / (np.sqrt(b / c2) + config.eps)
    else:
        for p, g, a in zip(params, grads, m1):
            a *= config.momentum
            a += g
            p -= lr * a


def input_spec_for(selection: FeatureSelection):
    return {
        "registry": registry.REGISTRY_VERSION,
        "selection_digest": selection.digest,
        "normalization": NORMALIZATION_ID,
    }


def featurize(records, selection: FeatureSelection):
    """Normalize and featurize records; returns the (N, d) feature matrix."""
    coords = np.stack([normalize(r.landmarks.validate() if hasattr(r, "landmarks") else r.validate())[0].coords
                       for r in records])
    return feature_matrix(coords, selection)


def train(dataset, selection: FeatureSelection, config: TrainConfig | None = None, history=None) -> MlpModel:
    """Normalize, featurize and fit the regressor on labelled records."""
    records = list(dataset)
    records = [r for r in records if r.measurements is not None and np.all(np.isfinite(r.measurements))]
    if len(records) < 2:
        raise InsufficientData("training needs at least 2 labelled records")
    x = featurize(records, selection)
    y = np.stack([r.measurements for r in records])
    return train_arrays(x, y, [r.subject_id for r in records], config, input_spec_for(selection),
                        registry.MEASUREMENT_NAMES, history)


def _check_selection(model: MlpModel, selection: FeatureSelection):
    want = model.input_spec.get("selection_digest")
    if want != selection.digest:
        raise SelectionMismatch(f"model expects selection {want}, got {selection.digest}")
    if model.layer_dims[0] != selection.n_features:
        raise SelectionMismatch("selection width does not match the model input")


def predict(model: MlpModel, landmarks: LandmarkSet, selection: FeatureSelection) -> np.ndarray:
    """Measurements (mm) for one landmark set in any pose and placement."""
    _check_selection(model, selection)
    return forward(model, featurize([landmarks], selection))[0]


def predict_many(model: MlpModel, landmark_sets, selection: FeatureSelection) -> np.ndarray:
    _check_selection(model, selection)
    return forward(model, featurize(list(landmark_sets), selection))


# ---------------------------------------------------------------------------
# serialization


def _row(tag, values):
    return "\t".join([tag, *(repr(float(v)) for v in np.asarray(values).reshape(-1))])


def format_model(model: MlpModel) -> str:
    spec = model.input_spec
    lines = [
        MODEL_FORMAT,
        "layer_dims\t" + "\t".join(str(d) for d in model.layer_dims),
        f"registry\t{spec.get('registry', '')}",
        f"selection_digest\t{spec.get('selection_digest', '')}",
        f"normalization\t{spec.get('normalization', '')}",
        "output_names\t" + "\t".join(model.output_names),
        "trained_meta\t" + json.dumps(model.trained_meta, sort_keys=True, separators=(",", ":")),
        _row("x_mean", model.x_mean),
        _row("x_std", model.x_std),
        _row("y_mean", model.y_mean),
        _row("y_std", model.y_std),
    ]
    for l, (w, b) in enumerate(zip(model.weights, model.biases)):
        lines.append(_row(f"W{l}", w))
        lines.append(_row(f"b{l}", b))
    return "\n".join(lines) + "\n"


def save_model(path, model: MlpModel):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_model(model))


def parse_model(text, source="<string>") -> MlpModel:
    lines = text.splitlines()
    if not lines or lines[0] != MODEL_FORMAT:
        raise FormatError(f"{source}: missing header {MODEL_FORMAT!r}")
    rows = {}
    for line in lines[1:]:
        if line:
            tag, _, rest = line.partition("\t")
            rows[tag] = rest
    try:
        dims = tuple(int(d) for d in rows["layer_dims"].split("\t"))

        def arr(tag, shape):
            return np.array([float(v) for v in rows[tag].split("\t")]).reshape(shape)

        nl = len(dims) - 1
        return MlpModel(
            dims,
            [arr(f"W{l}", (dims[l + 1], dims[l])) for l in range(nl)],
            [arr(f"b{l}", (dims[l + 1],)) for l in range(nl)],
            {k: rows[k] for k in ("registry", "selection_digest", "normalization")},
            tuple(rows["output_names"].split("\t")),
            arr("x_mean", dims[0]), arr("x_std", dims[0]), arr("y_mean", dims[-1]), arr("y_std", dims[-1]),
            json.loads(rows["trained_meta"]),
        )
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{source}: {exc}") from None


def load_model(path) -> MlpModel:
    with open(path, encoding="utf-8") as fh:
        return parse_model(fh.read(), str(path))


def write_history(path, history):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{TRAINLOG_FORMAT}\tunit=mm^2\n")
        fh.write("epoch,train_mse,val_mse\n")
        for epoch, tr, va in history:
            fh.write(f"{epoch},{tr!r},{va!r}\n")
