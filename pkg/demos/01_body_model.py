# # The synthetic body model
#
# Everything in anthrokit runs on a small procedural body model: a
# 16-joint skeleton, tube-shaped body parts skinned with linear blend
# skinning, 8 linear shape modes and 70 named landmarks fixed to mesh
# vertices. This script builds it, poses it and measures it.

import numpy as np

from anthrokit import registry
from anthrokit.body import PoseParams, ShapeParams, landmarks_of, make_default_model, measure_ground_truth, pose_mesh
from anthrokit.generation import sample_pose
from anthrokit.landmarks import normalize

model = make_default_model(seed=0)
print(f"{len(model.template_vertices)} vertices, {model.n_joints} joints, {model.n_shape} shape modes")

# ## Shape and ground-truth measurements
#
# Measurements are always taken on the rest (A-)pose mesh, so they depend
# on the shape only. Shape mode 0 is a uniform scaling of the body.

for k in (0.0, 1.0, -1.0):
    beta = np.zeros(model.n_shape)
    beta[0] = k
    m = measure_ground_truth(model, ShapeParams(beta))
    print(f"beta0={k:+.0f}: stature {m[-1]:.1f} mm, chest C. {m[4]:.1f} mm")

# ## Posing
#
# A pose is one axis-angle rotation per joint plus a root translation.
# The sampler draws from three families: near-A standing, sitting and
# varied (up to 90 degrees per joint).

rng = np.random.default_rng(1)
shape = ShapeParams(rng.normal(size=model.n_shape))
for family in ("standing", "sitting", "varied"):
    pose = sample_pose(model, family, rng)
    lm = landmarks_of(model, shape, pose)
    print(f"{family:>8}: landmark bounding box {np.ptp(lm.coords, axis=0).round(0)} mm")

# ## Pelvis-frame normalization
#
# Landmarks are expressed in a frame built from the two hip bones and the
# neck point, which removes the global position and orientation.

pose = sample_pose(model, "varied", rng)
lm = landmarks_of(model, shape, pose)
norm, frame = normalize(lm)
asis = registry.landmark_index(registry.RT_ASIS)
print("Rt. Asis in the pelvis frame:", norm.coords[asis].round(3))
print("rest-pose mesh equals the template:",
      np.array_equal(pose_mesh(model, ShapeParams.zeros(), PoseParams.zeros()).vertices, model.template_vertices))
