"""``anthrokit`` command line: one binary, one subcommand per pipeline stage.

Every option can also come from a ``key=value`` file given with
``--config``; flags win over the file. Each run writes a manifest with the
resolved options next to its main output (``<output stem>.manifest``, or
``gen.manifest``), and ``anthrokit <cmd> --config <manifest>`` repeats it. Exit codes: 0 success, 2 invalid input, 3 computation failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import analysis, body, features, generation, mlp, registry
from .errors import AnthroError, ComputationError, FormatError, ValidationError
from .landmarks import Record, iter_dataset, read_dataset, write_dataset
from .optim import OptimConfig

log = logging.getLogger("anthrokit")

MANIFEST_FORMAT = "#anthrokit-manifest/1"
PREDICTIONS_FORMAT = "#anthrokit-predictions/1"
EXIT_OK, EXIT_INVALID, EXIT_COMPUTE = 0, 2, 3

# options that steer the run but never its results
_NOT_ECHOED = {"config", "threads", "log_level", "out_dir", "command", "func"}


# ---------------------------------------------------------------------------
# helpers


def _threads(args):
    if args.threads is not None:
        n = args.threads
    elif os.environ.get("ANTHROKIT_THREADS"):
        try:
            n = int(os.environ["ANTHROKIT_THREADS"])
        except ValueError:
            raise ValidationError("ANTHROKIT_THREADS must be an integer") from None
    else:
        n = os.cpu_count() or 1
    if n < 1:
        raise ValidationError("thread count must be >= 1")
    return n


def _out(args, name):
    return os.path.join(args.out_dir, name)


def _need_file(path, what):
    if path is None:
        raise ValidationError(f"--{what} is required")
    if not os.path.isfile(path):
        raise ValidationError(f"{what} file not found: {path}")
    return path


def _write_manifest(args, outputs, **stats):
    lines = [MANIFEST_FORMAT, f"command={args.command}"]
    for key in sorted(vars(args)):
        if key in _NOT_ECHOED:
            continue
        value = getattr(args, key)
        if value is None:
            continue
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{key.replace('_', '-')}={value}")
    lines += [f"# output={o}" for o in outputs]
    lines += [f"# {k}={v}" for k, v in stats.items()]
    base = os.path.splitext(args.output)[0] if getattr(args, "output", None) else args.command
    path = _out(args, f"{base}.manifest")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    log.info("wrote %s", path)


def _load_body(args):
    if getattr(args, "model_file", None):
        return body.load_model(_need_file(args.model_file, "body-model"))
    return body.make_default_model(args.model_seed)


def _floats(text, what):
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise ValidationError(f"{what}: expected comma-separated numbers, got {text!r}") from None


def _write_predictions(path, keys, values):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{PREDICTIONS_FORMAT}\tunit=mm\n")
        fh.write(",".join(["subject_id", "pose_id", *registry.MEASUREMENT_NAMES]) + "\n")
        for (sid, pid), row in zip(keys, values):
            fh.write(",".join([sid, pid, *(repr(float(v)) for v in row)]) + "\n")


def read_predictions(path):
    """Read a predictions CSV; returns ``(keys, values)``."""
    with open(_need_file(path, "predictions"), encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith(PREDICTIONS_FORMAT):
        raise FormatError(f"{path}: missing header {PREDICTIONS_FORMAT!r}")
    keys, rows = [], []
    for lineno, line in enumerate(lines[2:], start=3):
        if not line:
            continue
        f = line.split(",")
        if len(f) != 2 + registry.N_MEASUREMENTS:
            raise FormatError(f"{path}:{lineno}: expected {2 + registry.N_MEASUREMENTS} fields")
        keys.append((f[0], f[1]))
        try:
            rows.append([float(v) for v in f[2:]])
        except ValueError:
            raise FormatError(f"{path}:{lineno}: bad number") from None
    return keys, np.array(rows).reshape(-1, registry.N_MEASUREMENTS)


def _read_measurements(path):
    """Keys, values and sex tags from a dataset or a predictions file."""
    with open(_need_file(path, "truth"), encoding="utf-8") as fh:
        head = fh.readline()
    if head.startswith(PREDICTIONS_FORMAT):
        keys, values = read_predictions(path)
        return keys, values, None
    data = read_dataset(path)
    recs = [r for r in data.records if r.measurements is not None]
    if len(recs) != len(data.records):
        raise ValidationError(f"{path}: {len(data.records) - len(recs)} records lack measurements")
    sexes = [r.sex or "-" for r in recs]
    return [(r.subject_id, r.pose_id) for r in recs], np.stack([r.measurements for r in recs]), sexes


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen(args):
    model = _load_body(args)
    mix = generation.PoseMix.parse(args.pose_mix)
    if not 0 <= args.test_fraction < 1:
        raise ValidationError("--test-fraction must be in [0, 1)")
    if args.selection_poses < 1:
        raise ValidationError("--selection-poses must be >= 1")
    threads = _threads(args)
    samples = generation.generate_samples(model, args.subjects, args.poses, mix, args.seed, threads)
    n_test = min(int(round(args.test_fraction * args.subjects)), args.subjects - 1)
    order = np.random.default_rng([args.seed, 5]).permutation(args.subjects)
    test_ids = {f"S{k:04d}" for k in order[:n_test]}
    train = [s for s in samples if s.record.subject_id not in test_ids]
    test = [s for s in samples if s.record.subject_id in test_ids]

    outputs = []
    for name, part in (("train", train), ("test", test)):
        write_dataset(_out(args, f"{name}.tsv"), [s.record for s in part], args.unit)
        generation.write_params(_out(args, f"{name}.params.tsv"), part, model.seed)
        outputs += [f"{name}.tsv", f"{name}.params.tsv"]

    ref, posed = generation.single_subject_poses(
        model, body.ShapeParams.zeros(model.n_shape), args.selection_poses, mix, args.seed)
    write_dataset(_out(args, "reference.tsv"), [Record(ref)], args.unit)
    write_dataset(_out(args, "selection_poses.tsv"), [Record(p) for p in posed], args.unit)
    body.save_model(_out(args, "body_model.json"), model)
    outputs += ["reference.tsv", "selection_poses.tsv", "body_model.json"]
    log.info("generated %d train and %d test records (%d test subjects)", len(train), len(test), n_test)
    _write_manifest(args, outputs, records=len(samples), train_records=len(train), test_records=len(test))


def cmd_select(args):
    ref_data = read_dataset(_need_file(args.reference, "reference"))
    if len(ref_data) != 1:
        raise ValidationError(f"{args.reference}: expected exactly one A-pose record, got {len(ref_data)}")
    ref = ref_data.records[0].landmarks
    _need_file(args.poses, "poses")
    seen = set()

    def stream():
        for rec in iter_dataset(args.poses):
            if rec.subject_id not in seen:
                seen.add(rec.subject_id)
                if rec.subject_id != ref.subject_id:
                    msg = (f"pose record subject {rec.subject_id!r} differs from reference subject "
                           f"{ref.subject_id!r}; selection expects a single subject")
                    if not args.allow_multi_subject:
                        raise ValidationError(msg + " (pass --allow-multi-subject to proceed)")
                    log.warning(msg)
            yield rec.landmarks

    sel = features.select_features(ref, stream(), args.threshold, args.memory_cap, args.out_dir)
    features.save_selection(_out(args, args.output), sel)
    log.info("selected %d of %d pairs from %d poses", len(sel.pairs), registry.N_PAIRS, sel.n_poses)
    _write_manifest(args, [args.output], n_selected=len(sel.pairs))


def _train_config(args):
    hidden = tuple(int(h) for h in _floats(args.hidden, "--hidden"))
    return mlp.TrainConfig(
        learning_rate=args.lr, batch_size=args.batch_size, epochs=args.epochs, seed=args.seed,
        optimizer=args.optimizer, validation_fraction=args.validation_fraction,
        early_stop_patience=args.patience, hidden=hidden, standardize=args.standardize,
    )


def cmd_train(args):
    config = _train_config(args)
    sel = features.load_selection(_need_file(args.selection, "selection"))
    data = read_dataset(_need_file(args.data, "data"))
    history = []
    model = mlp.train(data, sel, config, history)
    mlp.save_model(_out(args, args.output), model)
    mlp.write_history(_out(args, "train_log.csv"), history)
    log.info("trained %s for %d epochs (best %d)", "-".join(map(str, model.layer_dims)),
             model.trained_meta["epochs_run"], model.trained_meta["best_epoch"])
    _write_manifest(args, [args.output, "train_log.csv"])


def _batched(items, fn, threads, size=512):
    chunks = [items[a:a + size] for a in range(0, len(items), size)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(fn, chunks))
    return np.concatenate(parts) if parts else np.zeros((0, registry.N_MEASUREMENTS))


def cmd_predict(args):
    sel = features.load_selection(_need_file(args.selection, "selection"))
    model = mlp.load_model(_need_file(args.model, "model"))
    data = read_dataset(_need_file(args.data, "data"))
    lms = [r.landmarks for r in data.records]
    # fixed-size batches keep the arithmetic identical for any thread count
    pred = _batched(lms, lambda chunk: mlp.predict_many(model, chunk, sel), _threads(args))
    _write_predictions(_out(args, args.output), [(l.subject_id, l.pose_id) for l in lms], pred)
    _write_manifest(args, [args.output], records=len(lms))


def cmd_eval(args):
    pred_keys, pred = read_predictions(args.pred)
    if args.mode == "static":
        keys, truth, sexes = _read_measurements(args.truth)
        report = analysis.mae(truth, pred, keys, pred_keys, sexes)
    else:
        groups = {}
        for (sid, _), row in zip(pred_keys, pred):
            groups.setdefault(sid, []).append(row)
        report = analysis.sequence_report({k: np.array(v) for k, v in groups.items()})
    analysis.write_report(_out(args, f"{args.output}.csv"), _out(args, f"{args.output}.json"), report)
    log.info("%s summary %.4f mm over %d subjects", args.mode, report.summary, report.n_subjects)
    _write_manifest(args, [f"{args.output}.csv", f"{args.output}.json"])


def cmd_noise(args):
    if not args.max_dist >= 0:
        raise ValidationError("--max-dist must be >= 0")
    model = _load_body(args)
    data = read_dataset(_need_file(args.data, "data"))
    seed_model, params = generation.read_params(_need_file(args.params, "params"))
    if seed_model != model.seed:
        log.warning("params were generated with body model seed %d, using %d", seed_model, model.seed)
    missing = [(r.subject_id, r.pose_id) for r in data.records if (r.subject_id, r.pose_id) not in params]
    if missing:
        raise ValidationError(f"{len(missing)} records have no shape/pose parameters, e.g. {missing[0]}")

    def noisy(k):
        rec = data.records[k]
        shape, pose = params[(rec.subject_id, rec.pose_id)]
        lm = generation.perturb_landmarks(model, shape, pose, rec.landmarks, args.max_dist, args.seed, k)
        return Record(lm, rec.measurements, rec.sex)

    with ThreadPoolExecutor(max_workers=_threads(args)) as pool:
        out = list(pool.map(noisy, range(len(data.records))))
    write_dataset(_out(args, args.output), out, data.unit)
    _write_manifest(args, [args.output], records=len(out))


def cmd_baseline(args):
    from .fitting import baseline_measurements, rigid_init

    model = _load_body(args)
    data = read_dataset(_need_file(args.data, "data"))
    config = OptimConfig(lr=args.lr, max_iter=args.max_iter, patience=args.patience, seed=args.seed)

    def fit(rec):
        init = rigid_init(model, rec.landmarks) if args.init == "rigid" else (
            body.ShapeParams.zeros(model.n_shape), body.PoseParams.zeros(model.n_joints))
        return baseline_measurements(model, rec.landmarks.validate(), config, init)

    with ThreadPoolExecutor(max_workers=_threads(args)) as pool:
        results = list(pool.map(fit, data.records))
    keys = [(r.subject_id, r.pose_id) for r in data.records]
    _write_predictions(_out(args, args.output), keys, [m for m, _ in results])
    res_name = os.path.splitext(args.output)[0] + "_residuals.csv"
    with open(_out(args, res_name), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("#anthrokit-residuals/1\tunit=mm\nsubject_id,pose_id,rms_landmark_mm\n")
        for (sid, pid), (_, rms) in zip(keys, results):
            fh.write(f"{sid},{pid},{rms!r}\n")
    _write_manifest(args, [args.output, res_name])


def cmd_ambiguity(args):
    model = _load_body(args)
    beta = _floats(args.beta_ref, "--beta-ref") if args.beta_ref else [0.0] * model.n_shape
    if len(beta) != model.n_shape:
        raise ValidationError(f"--beta-ref needs {model.n_shape} values")
    beta_ref = body.ShapeParams(np.array(beta))
    config = OptimConfig(lr=args.lr, max_iter=args.max_iter, patience=args.patience, tol=1e-10,
                         final_lr_fraction=1e-3, seed=args.seed, n_starts=args.starts)
    threads = _threads(args)
    delta, objective = analysis.optimize_ambiguity_direction(model, beta_ref, config, threads)
    if args.k_max is not None:
        ks = np.linspace(0.0, args.k_max, args.steps)
    else:
        ks = analysis.default_k_values(model, delta, args.steps, args.max_landmark_mm)
    curve = analysis.sweep_ambiguity(model, beta_ref, delta, ks, objective, threads)
    analysis.write_curve(_out(args, args.output), curve)
    log.info("ambiguity objective %.6g, |delta| = %.6f", objective, np.linalg.norm(delta.coeffs))
    _write_manifest(args, [args.output])


# ---------------------------------------------------------------------------
# parser


def _add_body_opts(p):
    p.add_argument("--body-model", dest="model_file", metavar="FILE",
                   help="body model JSON (default: the built-in model from --model-seed)")
    p.add_argument("--model-seed", type=int, default=0, help="seed of the built-in body model (default 0)")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="FILE", help="key=value file with defaults for any option")
    common.add_argument("--out-dir", default=".", help="directory for all outputs (default: .)")
    common.add_argument("--threads", type=int, default=None,
                        help="worker threads (default: $ANTHROKIT_THREADS, else CPU count); "
                             "1 gives the serial audit run")
    common.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"],
                        help="logging verbosity (default INFO)")

    parser = argparse.ArgumentParser(prog="anthrokit", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    parser.commands = sub.choices

    p = sub.add_parser("gen", parents=[common], help="generate synthetic train/test datasets")
    _add_body_opts(p)
    p.add_argument("--subjects", type=int, default=50, help="number of subjects (default 50)")
    p.add_argument("--poses", type=int, default=40, help="poses per subject (default 40)")
    p.add_argument("--pose-mix", default="1/12,1/12,10/12",
                   help="standing,sitting,varied fractions (default 1/12,1/12,10/12, i.e. 1000/1000/10000)")
    p.add_argument("--seed", type=int, default=0, help="generation seed (default 0)")
    p.add_argument("--test-fraction", type=float, default=0.2, help="share of subjects held out (default 0.2)")
    p.add_argument("--selection-poses", type=int, default=2000,
                   help="poses of the single reference subject for feature selection (default 2000)")
    p.add_argument("--unit", default="mm", choices=["mm", "cm"], help="unit written to dataset files (default mm)")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("select", parents=[common], help="select pose-independent landmark distances")
    p.add_argument("--reference", help="dataset file holding the subject's single A-pose record")
    p.add_argument("--poses", help="dataset file with the same subject in many poses")
    p.add_argument("--threshold", type=float, default=features.DEFAULT_THRESHOLD_MM,
                   help="keep pairs whose median deviation is below this many mm (default 10, i.e. 1 cm)")
    p.add_argument("--memory-cap", type=int, default=features.DEFAULT_MEMORY_CAP,
                   help="poses held in memory before spilling deviations to disk (default 20000)")
    p.add_argument("--allow-multi-subject", action="store_true",
                   help="warn instead of failing when pose records belong to other subjects")
    p.add_argument("--output", default="selection.txt", help="output file name (default selection.txt)")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("train", parents=[common],
                       help="train the measurement regressor (architecture 368-194-97-11 with 158 pairs)")
    p.add_argument("--data", help="labelled training dataset")
    p.add_argument("--selection", help="feature selection file")
    p.add_argument("--lr", type=float, default=1e-3, help="learning rate (default 1e-3)")
    p.add_argument("--batch-size", type=int, default=256, help="mini-batch size (default 256)")
    p.add_argument("--epochs", type=int, default=500, help="maximum epochs (default 500)")
    p.add_argument("--seed", type=int, default=0, help="initialization and shuffling seed (default 0)")
    p.add_argument("--optimizer", default="adam", choices=["adam", "sgd-momentum"], help="optimizer (default adam)")
    p.add_argument("--validation-fraction", type=float, default=0.1,
                   help="share of subjects held out for early stopping (default 0.1)")
    p.add_argument("--patience", type=int, default=50, help="early-stopping patience in epochs (default 50)")
    p.add_argument("--hidden", default="194,97", help="hidden layer widths (default 194,97)")
    p.add_argument("--standardize", default="pooled", choices=["pooled", "per-feature", "none"],
                   help="input scaling: one shared std (pooled), one per feature, or none (default pooled)")
    p.add_argument("--output", default="model.txt", help="output model file name (default model.txt)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", parents=[common], help="predict measurements for every record")
    p.add_argument("--data", help="dataset to predict")
    p.add_argument("--selection", help="feature selection file the model was trained with")
    p.add_argument("--model", help="trained model file")
    p.add_argument("--output", default="predictions.csv", help="output file name (default predictions.csv)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", parents=[common], help="MAE/aMAE or per-subject sequence spread")
    p.add_argument("--mode", default="static", choices=["static", "sequence"],
                   help="static: MAE against --truth; sequence: std of frame minus first frame (default static)")
    p.add_argument("--pred", help="predictions file")
    p.add_argument("--truth", help="labelled dataset or predictions file (static mode)")
    p.add_argument("--output", default="eval", help="output base name; writes .csv and .json (default eval)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("noise", parents=[common], help="slide landmarks along the body surface")
    _add_body_opts(p)
    p.add_argument("--data", help="dataset to perturb")
    p.add_argument("--params", help="shape/pose sidecar written by gen")
    p.add_argument("--max-dist", type=float, default=5.6, help="maximum arc length in mm (default 5.6)")
    p.add_argument("--seed", type=int, default=0, help="noise seed (default 0)")
    p.add_argument("--output", default="noisy.tsv", help="output file name (default noisy.tsv)")
    p.set_defaults(func=cmd_noise)

    p = sub.add_parser("baseline", parents=[common], help="fit the body model and measure its rest pose")
    _add_body_opts(p)
    p.add_argument("--data", help="dataset to measure")
    p.add_argument("--init", default="rigid", choices=["rigid", "zeros"],
                   help="rigid: place the root from the pelvis landmarks; zeros: all parameters zero (default rigid)")
    p.add_argument("--lr", type=float, default=1.0, help="step multiplier (default 1.0)")
    p.add_argument("--max-iter", type=int, default=2000, help="iteration cap (default 2000)")
    p.add_argument("--patience", type=int, default=100, help="stop after this many iterations without gain (default 100)")
    p.add_argument("--seed", type=int, default=0, help="recorded for provenance (fitting is deterministic)")
    p.add_argument("--output", default="baseline.csv", help="output file name (default baseline.csv)")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("ambiguity", parents=[common], help="shape direction study of landmark/measurement ambiguity")
    _add_body_opts(p)
    p.add_argument("--beta-ref", default=None, help="comma-separated reference shape (default all zeros)")
    p.add_argument("--steps", type=int, default=analysis.DEFAULT_N_STEPS, help="number of k values (default 51)")
    p.add_argument("--max-landmark-mm", type=float, default=analysis.DEFAULT_MAX_LANDMARK_MM,
                   help="largest k moves the farthest landmark this far (default 25 mm)")
    p.add_argument("--k-max", type=float, default=None, help="explicit largest k; overrides --max-landmark-mm")
    p.add_argument("--starts", type=int, default=5, help="optimizer restarts (default 5)")
    p.add_argument("--max-iter", type=int, default=5000, help="iterations per start (default 5000)")
    p.add_argument("--patience", type=int, default=500, help="stop a start after this many iterations without gain")
    p.add_argument("--lr", type=float, default=0.05, help="initial step size (default 0.05)")
    p.add_argument("--seed", type=int, default=0, help="seed of the random starts (default 0)")
    p.add_argument("--output", default="ambiguity.csv", help="output file name (default ambiguity.csv)")
    p.set_defaults(func=cmd_ambiguity)
    return parser


def read_config(path):
    """Parse a ``key=value`` file; ``#`` lines and blank lines are skipped."""
    if not os.path.isfile(path):
        raise ValidationError(f"config file not found: {path}")
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ValidationError(f"{path}:{lineno}: expected key=value")
            out[key.strip().replace("-", "_")] = value.strip()
    return out


def _apply_config(parser, argv):
    """Parse twice: config values become defaults, then flags override them."""
    args = parser.parse_args(argv)
    if not args.config:
        return args
    conf = read_config(args.config)
    cmd = conf.pop("command", args.command)
    if cmd != args.command:
        raise ValidationError(f"config is for {cmd!r}, not {args.command!r}")
    subparser = parser.commands[args.command]
    known = {a.dest: a for a in subparser._actions}
    defaults = {}
    for key, value in conf.items():
        action = known.get(key)
        if action is None or key in ("config", "help"):
            raise ValidationError(f"unknown config key {key!r} for {args.command}")
        if isinstance(action, argparse._StoreTrueAction):
            defaults[key] = value.lower() in ("1", "true", "yes")
        else:
            defaults[key] = action.type(value) if action.type else value
            if action.choices is not None and defaults[key] not in action.choices:
                raise ValidationError(f"config {key}={value!r} not in {sorted(action.choices)}")
    subparser.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv=None):
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s", force=True)
        os.makedirs(args.out_dir, exist_ok=True)
        args.func(args)
    except ComputationError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_COMPUTE
    except (ValidationError, AnthroError, OSError, KeyError) as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
