"""
Synthetic scenes and sparse labels
==================================

Build a labeled aerial-style scene, thin it to one point per grid cell and
draw a per-mille weak-label set from it.
"""

import numpy as np

from wsseg import SCENE_CLASSES, SceneSpec, cap_for_ratio, grid_subsample, rng_stream
from wsseg import sample_weak_labels, synth_scene, transfer_labels

# The default scene is 100 m square with ground, buildings, trees and poles.
cloud, truth = synth_scene(SceneSpec(seed=0))
print("points:", cloud.point_count)
for name, n in zip(SCENE_CLASSES.class_names, np.bincount(truth)):
    print(f"  {name:<9}{n:>7}")

# Grid subsampling keeps one centroid per 0.4 m cell. The mapping sends every
# raw point to its nearest kept point, so labels survive the round trip.
sub, mapping = grid_subsample(cloud, 0.4)
sub_truth = truth[mapping.kept_to_source]
agree = np.mean(transfer_labels(mapping, sub_truth) == truth)
print(f"kept {sub.point_count} of {cloud.point_count}; label agreement after transfer {agree:.3f}")

# Pick the per-class cap whose realized count lands closest to 1 per mille.
cap = cap_for_ratio(truth, 4, 1e-3)
weak = sample_weak_labels(truth, SCENE_CLASSES, cap, rng_stream(0, "labels"))
print(f"cap {cap}: {weak.count} labels, {1000 * weak.target_ratio:.2f} per mille,",
      "per class", weak.class_counts(4).tolist())

# A larger draw can extend a smaller one, so label budgets nest.
more = sample_weak_labels(truth, SCENE_CLASSES, 2 * cap, rng_stream(1, "labels"), parent=weak)
print("nested:", set(weak.labeled_indices) <= set(more.labeled_indices))
