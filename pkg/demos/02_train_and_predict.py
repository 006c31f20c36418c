"""
Two-stage training on one scene
===============================

Train the full objective for a short schedule, watch the loss weights ramp
up, then label a held-out scene and score it.
"""

import numpy as np

from wsseg import SCENE_CLASSES, confusion, entropy_map, metrics, predict_full, rng_stream
from wsseg import sample_weak_labels, train
from wsseg.ablation import default_scenes, desk_schedule

cloud, truth, test_cloud, test_truth = default_scenes(0)
weak = sample_weak_labels(truth, SCENE_CLASSES, 13, rng_stream(0, "labels"))

# Stage 1 ramps the entropy and ensemble weights from about 0.007 to 1;
# stage 2 switches pseudo-labels on at full weight.
schedule = desk_schedule(epochs_per_stage=6, steps_per_epoch=40)
result = train(cloud, weak, schedule, 4)
print("epoch stage  l_seg   l_ent   l_epc   l_pl   lam_ent lam_pl")
for row in result.log:
    print(f"{row['epoch']:>5} {row['stage']:>5}  {row['l_seg']:.3f}  {row['l_ent']:.3f}  "
          f"{row['l_epc']:.3f}  {row['l_pl']:.3f}  {row['lambda_ent']:.3f}  "
          f"{row['lambda_pl']:.1f}")

# Every point is covered by about three overlapping test cylinders; their
# probabilities are averaged before the argmax.
probs, pred = predict_full(result.params, test_cloud, schedule.batch_spec,
                           schedule.k_neighbors)
report = metrics(confusion(pred, test_truth, 4), SCENE_CLASSES.class_names)
print(report.format())

ent = entropy_map(probs)
print(f"mean normalized entropy {ent.mean():.3f}; "
      f"{np.mean(ent > 0.5):.1%} of points above 0.5")
