# # Landmark noise and the model-fitting baseline
#
# Real landmark placement is imprecise. We slide each landmark along the
# body surface by up to 5.6 mm and compare with the clean set. Then we
# fit the body model itself to the landmarks, the sparse-fitting baseline,
# and measure its rest pose.

import numpy as np

from anthrokit import registry
from anthrokit.fitting import baseline_measurements
from anthrokit.generation import generate_samples, perturb_landmarks
from anthrokit.body import make_default_model

model = make_default_model(0)
sample = generate_samples(model, 1, 1, seed=3)[0]
clean = sample.record.landmarks
noisy = perturb_landmarks(model, sample.shape, sample.pose, clean, max_dist_mm=5.6, seed=0)
moved = np.linalg.norm(noisy.coords - clean.coords, axis=1)
print(f"landmark displacement: mean {moved.mean():.2f} mm, max {moved.max():.2f} mm")

# ## Baseline

for label, lm in (("clean", clean), ("noisy", noisy)):
    est, rms = baseline_measurements(model, lm)
    err = np.abs(est - sample.record.measurements)
    print(f"{label}: landmark rms {rms:.3f} mm, aMAE {err.mean():.2f} mm, "
          f"worst {registry.MEASUREMENT_NAMES[int(err.argmax())]} {err.max():.2f} mm")
