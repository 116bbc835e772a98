"""Recover an occluded ear from face symmetry.

Turn the head far enough and the camera loses one ear behind the skull;
what it reports instead is a point on the face silhouette.  The ear
farther from the nose is the trustworthy one, and mirroring it across
the perpendicular bisector plane of the eyes lands on the hidden ear.
This script walks a head through a yaw sweep and prints the recovery
error at each angle.
"""

import numpy as np

from headrest.geometry import infer_true_ears
from headrest.scene import (
    HeadPose,
    ObservationModel,
    camera_to_world,
    canonical_head,
    observe,
    true_keypoints,
)

geom = canonical_head()
exact = ObservationModel(pixel_noise_sigma=0.0, depth_noise_sigma_at_1m=0.0)
noisy = ObservationModel(seed=7)  # 1 px / 2 mm @ 1 m defaults

print(f"{'yaw':>5} {'hidden ear':>10} {'trusted':>8} {'exact err':>12} {'noisy err':>12}")
for yaw_deg in (0.0, 15.0, 30.0, 45.0, 60.0):
    pose = HeadPose(center=np.zeros(3), yaw=np.deg2rad(yaw_deg))
    truth = true_keypoints(geom, pose)

    est = infer_true_ears(observe(geom, pose, obs=exact))
    err_exact = max(
        np.linalg.norm(camera_to_world(est.left) - truth.left_ear),
        np.linalg.norm(camera_to_world(est.right) - truth.right_ear),
    )

    est_n = infer_true_ears(observe(geom, pose, obs=noisy))
    err_noisy = max(
        np.linalg.norm(camera_to_world(est_n.left) - truth.left_ear),
        np.linalg.norm(camera_to_world(est_n.right) - truth.right_ear),
    )

    hidden = "-" if yaw_deg <= 25.0 else ("right" if yaw_deg > 0 else "left")
    print(
        f"{yaw_deg:5.0f} {hidden:>10} {est.decision.trusted_side.value:>8} "
        f"{err_exact * 1e3:9.2e} mm {err_noisy * 1e3:9.2f} mm"
    )

print()
print("Zero-noise recovery is exact for a symmetric head; with the default")
print("camera noise the hidden ear still comes back within a few millimetres.")
