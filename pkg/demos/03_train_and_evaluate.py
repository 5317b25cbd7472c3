# # Training the measurement regressor
#
# A small end-to-end run: generate labelled subjects in many poses, train
# the MLP on some subjects and evaluate on held-out ones, split by pose
# family. Sizes are kept small so this runs in about a minute; the
# acceptance test uses 200 subjects by 40 poses.

import numpy as np

from anthrokit import registry
from anthrokit.analysis import mae, sequence_std
from anthrokit.body import ShapeParams, make_default_model
from anthrokit.features import select_features
from anthrokit.generation import generate_samples, single_subject_poses
from anthrokit.mlp import TrainConfig, predict_many, train

model = make_default_model(0)
reference, posed = single_subject_poses(model, ShapeParams.zeros(), 500, seed=0)
selection = select_features(reference, posed)

samples = generate_samples(model, n_subjects=60, poses_per_subject=20, seed=0)
test_ids = {f"S{k:04d}" for k in range(10)}
train_set = [s for s in samples if s.record.subject_id not in test_ids]
test_set = [s for s in samples if s.record.subject_id in test_ids]

history = []
net = train([s.record for s in train_set], selection, TrainConfig(epochs=500), history)
print(f"layers {net.layer_dims}, best epoch {net.trained_meta['best_epoch']}")

pred = predict_many(net, [s.record.landmarks for s in test_set], selection)
truth = np.stack([s.record.measurements for s in test_set])
report = mae(truth, pred)
for name, v in zip(registry.MEASUREMENT_NAMES, report.mae):
    print(f"{name:>18}: {v:6.2f} mm")
print(f"aMAE {report.amae:.2f} mm")

# With 50 training subjects the errors are around 10 mm; the 200-subject
# acceptance run gets to about 1 mm.

# ## By pose family, and spread across one subject's poses

family = np.array([s.family for s in test_set])
for f in ("standing", "sitting", "varied"):
    if (family == f).any():
        print(f"{f:>8}: aMAE {mae(truth[family == f], pred[family == f]).amae:.2f} mm")
sid = np.array([s.record.subject_id for s in test_set])
spread = np.mean([sequence_std(pred[sid == u]) for u in sorted(test_ids)], axis=0)
print("mean per-subject spread across poses (mm):", spread.round(2))
