# # Landmarks do not pin down the measurements
#
# Find the unit shape direction that moves the 70 rest-pose landmarks the
# least, walk along it and watch the measurements. Circumferences between
# landmarks can change several times more than any landmark moves.

import numpy as np

from anthrokit.analysis import default_k_values, format_curve_csv, optimize_ambiguity_direction, sweep_ambiguity
from anthrokit.body import ShapeParams, make_default_model

model = make_default_model(0)
beta_ref = ShapeParams.zeros()
delta, objective = optimize_ambiguity_direction(model, beta_ref)
print("direction:", delta.coeffs.round(3), f"objective {objective:.4f}")

curve = sweep_ambiguity(model, beta_ref, delta, default_k_values(model, delta, n_steps=6), objective)
for k, d, row in zip(curve.steps, curve.max_landmark_dist_mm, curve.measurement_err_mm):
    worst = int(np.argmax(row))
    print(f"k={k:7.3f}  max landmark move {d:6.2f} mm  largest change {curve.names[worst]} {row[worst]:6.2f} mm")

print(format_curve_csv(curve).splitlines()[0])
