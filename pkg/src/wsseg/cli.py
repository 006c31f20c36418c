"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 training divergence.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .ablation import PRESETS, default_scenes, desk_schedule, run_ablation, summarize
from .core import ClassCatalog, check_labels, grid_subsample, rng_stream, transfer_labels
from .io import (DataError, read_catalog, read_cloud, read_key_values, read_weak_labels,
                 write_catalog, write_cloud, write_weak_labels)
from .metrics import confusion, entropy_map, metrics
from .model import DivergenceError, load_checkpoint, save_checkpoint
from .synth import SCENE_CLASSES, SceneSpec, synth_scene
from .trainer import TrainSchedule, predict_full, schedule_from_metadata, train
from .weak_labels import sample_weak_labels

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _labels_required(path):
    cloud, labels = read_cloud(path)
    if labels is None:
        raise DataError(f"{path}: file carries no label column")
    return cloud, labels


def cmd_synth(args):
    spec = read_key_values(args.spec, SceneSpec) if args.spec else SceneSpec()
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    cloud, labels = synth_scene(spec)
    write_cloud(args.out, cloud, labels)
    if args.catalog:
        write_catalog(args.catalog, SCENE_CLASSES)
    print(f"wrote {cloud.point_count} points to {args.out}")


def cmd_sample_labels(args):
    cloud, labels = _labels_required(args.cloud)
    k = read_catalog(args.classes).class_count if args.classes else int(labels.max()) + 1
    catalog = ClassCatalog(tuple(f"class{i}" for i in range(max(k, 2))))
    labels = check_labels(labels, catalog.class_count)
    parent = read_weak_labels(args.parent, cloud.point_count) if args.parent else None
    try:
        weak = sample_weak_labels(labels, catalog, args.cap, rng_stream(args.seed, "labels"),
                                  parent)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    write_weak_labels(args.out, weak, seed=args.seed)
    print(f"labeled {weak.count} of {cloud.point_count} points "
          f"({1000 * weak.target_ratio:.3f} per mille)")


def _class_count(args, weak, labels):
    if args.classes:
        return read_catalog(args.classes).class_count
    top = max(int(weak.labels.max()) if weak.count else 0,
              int(labels.max()) if labels is not None and labels.size else 0)
    return max(top + 1, 2)


def cmd_train(args):
    cloud, labels = read_cloud(args.cloud)
    weak = read_weak_labels(args.weak, cloud.point_count)
    if args.config:
        schedule = read_key_values(args.config, TrainSchedule)
    else:
        schedule = desk_schedule(record_time=True)
    if args.seed is not None:
        schedule = replace(schedule, seed=args.seed)
    k = _class_count(args, weak, labels)
    if weak.count and weak.labels.max() >= k:
        raise DataError(f"{args.weak}: class index outside the catalog")
    res = train(cloud, weak, schedule, k, log_path=args.log, checkpoint_dir=args.checkpoint_dir)
    save_checkpoint(args.out, res.params, schedule.model_metadata(k, cloud.feature_count))
    last = res.log[-1]
    print(f"trained {schedule.total_steps} steps; final l_seg {last['l_seg']:.4f}")


def cmd_predict(args):
    cloud, _ = read_cloud(args.cloud)
    params, meta = load_checkpoint(args.model)
    schedule = schedule_from_metadata(meta)
    if cloud.feature_count != meta.get("aux_count", cloud.feature_count):
        raise DataError(f"{args.cloud}: {cloud.feature_count} feature columns, model expects "
                        f"{meta['aux_count']}")
    work, mapping = (grid_subsample(cloud, args.grid) if args.grid else (cloud, None))
    probs, pred = predict_full(params, work, schedule.batch_spec, schedule.k_neighbors,
                               schedule.height_scale)
    if mapping is not None:
        probs = transfer_labels(mapping, probs)
        pred = transfer_labels(mapping, pred)
    write_cloud(args.out, cloud, pred)
    if args.probs:
        np.savetxt(args.probs, probs, fmt="%.17g")
    if args.entropy_map:
        np.savetxt(args.entropy_map, entropy_map(probs, params.class_count), fmt="%.17g")
    print(f"predicted {cloud.point_count} points")


def cmd_evaluate(args):
    _, pred = _labels_required(args.pred)
    _, truth = _labels_required(args.truth)
    catalog = read_catalog(args.classes)
    if len(pred) != len(truth):
        raise DataError(f"prediction has {len(pred)} points, truth has {len(truth)}")
    try:
        rep = metrics(confusion(pred, truth, catalog.class_count), catalog.class_names)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    print(rep.format())
    out = args.csv or str(Path(args.pred).with_suffix(".metrics.csv"))
    with open(out, "w", newline="") as f:
        csv.writer(f).writerows(rep.csv_rows())


def cmd_ablate(args):
    spec = read_key_values(args.scene, SceneSpec) if args.scene else None
    schedule = read_key_values(args.config, TrainSchedule) if args.config else desk_schedule()
    seeds = [int(s) for s in args.seeds.split(",")]
    presets = args.preset or ["baseline", "er", "epc", "ospl", "full"]
    runs = run_ablation(*default_scenes(args.scene_seed, spec), presets=presets, seeds=seeds,
                        ratio=args.ratio, schedule=schedule)
    summary = summarize(runs)
    print(f"{'preset':<10} {'OA':>8} {'avg F1':>8} {'entropy':>8}")
    for name, s in summary.items():
        print(f"{name:<10} {100 * s['oa']:8.2f} {100 * s['average_f1']:8.2f} "
              f"{s['unlabeled_entropy']:8.4f}")
    if args.out:
        with open(args.out, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(("preset", "seed", "oa", "average_f1", "unlabeled_entropy"))
            for r in runs:
                w.writerow((r.preset, r.seed, repr(r.oa), repr(r.average_f1),
                            repr(r.unlabeled_entropy)))


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="wsseg", description="Weakly supervised point-cloud segmentation.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a labeled synthetic scene")
    s.add_argument("--spec", help="key=value scene file; defaults apply when omitted")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.add_argument("--catalog", help="also write the class catalog here")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("sample-labels", help="draw a sparse weak-label set")
    s.add_argument("--cloud", required=True, help="cloud with a label column")
    s.add_argument("--cap", type=int, required=True, help="labels per class before the ceiling")
    s.add_argument("--parent", help="existing weak set to extend")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--classes")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sample_labels)

    s = sub.add_parser("train", help="two-stage training")
    s.add_argument("--cloud", required=True)
    s.add_argument("--weak", required=True)
    s.add_argument("--config", help="key=value schedule file; desk-scale defaults otherwise")
    s.add_argument("--classes")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True, help="checkpoint path")
    s.add_argument("--log", required=True, help="per-epoch CSV log")
    s.add_argument("--checkpoint-dir")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("predict", help="label a cloud with a trained model")
    s.add_argument("--cloud", required=True)
    s.add_argument("--model", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--probs")
    s.add_argument("--entropy-map")
    s.add_argument("--grid", type=float, default=0.0,
                   help="subsample to this cell size, then transfer back to every input point")
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("evaluate", help="compare predicted and true labels")
    s.add_argument("--pred", required=True)
    s.add_argument("--truth", required=True)
    s.add_argument("--classes", required=True)
    s.add_argument("--csv")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("ablate", help="train each preset over several seeds")
    s.add_argument("--preset", action="append", choices=sorted(PRESETS))
    s.add_argument("--seeds", default="0,1,2")
    s.add_argument("--scene", help="key=value scene file")
    s.add_argument("--scene-seed", type=int, default=0)
    s.add_argument("--config")
    s.add_argument("--ratio", type=float, default=1e-3)
    s.add_argument("--out", help="per-run CSV")
    s.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:        # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(message)s")
    try:
        args.func(args)
    except DivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (DataError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
