"""
Which auxiliary term helps?
===========================

Train the baseline, each auxiliary term alone and the full objective on
the same labels and compare overall accuracy on a held-out scene. One seed
takes about two minutes; pass more seeds for a steadier average.
"""

import sys

from wsseg.ablation import default_scenes, desk_schedule, run_ablation, summarize

seeds = tuple(int(s) for s in sys.argv[1:]) or (0,)
runs = run_ablation(*default_scenes(0), seeds=seeds, schedule=desk_schedule())

print(f"{'preset':<10}{'OA %':>8}{'avg F1 %':>10}{'entropy':>9}")
for name, s in summarize(runs).items():
    print(f"{name:<10}{100 * s['oa']:8.2f}{100 * s['average_f1']:10.2f}"
          f"{s['unlabeled_entropy']:9.3f}")
