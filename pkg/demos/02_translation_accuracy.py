"""Mean displacement error over a grid of head positions.

Sweeps the head across a small grid, observes noisy keypoints at each
node, and pools the per-axis mean displacement error of the estimated
ear midpoint -- a desk-scale version of the accuracy experiment the
`headrest accuracy-translate` verb runs at full size.
"""

from headrest.config import default_config
from headrest.experiments import run_translation_accuracy

cfg = default_config().with_values(
    [
        ("accuracy_grid", "nx", "5"),
        ("accuracy_grid", "ny", "5"),
        ("accuracy_grid", "nz", "1"),
        ("accuracy_grid", "repetitions", "30"),
    ]
)

rows = run_translation_accuracy(cfg, seed=0)

print(f"{'axis':>4} {'offset':>8} {'MDE left':>10} {'MDE right':>10}")
for r in rows:
    print(
        f"{r.axis:>4} {r.offset_mm:6.1f} mm {r.mde_left_mm:8.3f} mm "
        f"{r.mde_right_mm:8.3f} mm"
    )

worst = max(max(abs(r.mde_left_mm), abs(r.mde_right_mm)) for r in rows)
print(f"\nworst |MDE| over {len(rows)} offsets: {worst:.3f} mm")
