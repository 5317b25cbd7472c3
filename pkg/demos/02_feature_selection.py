# # Selecting pose-independent landmark distances
#
# Some landmark pairs keep their distance in every pose (both points sit
# on one bone), others drift a lot (a hand and a foot). We pose one
# subject many times and keep the pairs whose median deviation from the
# A-pose distance stays below a threshold.

import numpy as np

from anthrokit import registry
from anthrokit.body import ShapeParams, make_default_model
from anthrokit.features import select_features
from anthrokit.generation import single_subject_poses

model = make_default_model(0)
reference, posed = single_subject_poses(model, ShapeParams.zeros(), n_poses=500, seed=0)
selection = select_features(reference, posed, threshold_mm=10.0)
print(f"{len(selection.pairs)} of {registry.N_PAIRS} pairs kept at 10 mm from {selection.n_poses} poses")

# The medians are stored for every pair, so other thresholds cost nothing.

for t in (1.0, 5.0, 10.0, 20.0, 50.0):
    print(f"threshold {t:>4} mm -> {len(selection.with_threshold(t).pairs):>4} pairs")

# The most and least stable pairs:

med = selection.per_pair_median_dev_mm
names = registry.LANDMARK_NAMES
order = np.argsort(med)
i, j = registry.pair_arrays()
for k in list(order[:3]) + list(order[-3:]):
    print(f"{names[i[k]]:>28} - {names[j[k]]:<28} median deviation {med[k]:7.2f} mm")

# The feature vector is the 210 normalized coordinates followed by the
# selected distances.

print("feature width:", selection.n_features)
