"""Two-stage weakly supervised training loop and sliding-window prediction."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .core import AugmentConfig, PointCloud, augment, rng_stream
from .losses import EnsembleStore, PredictionMatrix, combined_loss, ema_update
from .model import (DivergenceError, ModelParameters, SGDMomentum, backward, encode_features,
                    feature_width, forward, init_params, save_checkpoint, softmax,
                    softmax_backward)
from .sampler import BatchSpec, init_potentials, next_train_batch, test_batches
from .weak_labels import WeakLabelSet

logger = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "stage", "l_seg", "l_ent", "l_epc", "l_pl",
               "lambda_ent", "lambda_epc", "lambda_pl", "seconds")


@dataclass
class TrainSchedule:
    epochs_per_stage: int = 100
    steps_per_epoch: int = 80
    learning_rate: float = 1e-2
    momentum: float = 0.98
    lr_decay: float = 1.0            # per-epoch multiplier; 1 keeps the rate constant
    grad_clip: float = 0.0           # global gradient-norm ceiling; 0 disables
    alpha: float = 0.9
    seed: int = 0
    radius: float = 30.0
    point_cap: int = 120_000
    hidden: tuple = (64, 64)
    k_neighbors: int = 16
    height_scale: float = 10.0
    increment_exponent: float = 2.0
    rotate: bool = True
    scale_min: float = 0.9
    scale_max: float = 1.1
    jitter_sigma: float = 0.01
    use_ent: bool = True
    use_epc: bool = True
    use_pl: bool = True
    confidence_source: str = "ensemble"
    checkpoint_every: int = 0
    record_time: bool = True

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        for name in ("epochs_per_stage", "steps_per_epoch", "learning_rate", "radius",
                     "point_cap", "height_scale"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 <= self.momentum < 1 or not 0 <= self.alpha < 1:
            raise ValueError("momentum and alpha must lie in [0, 1)")
        if self.k_neighbors < 3:
            raise ValueError("k_neighbors must be >= 3")
        if self.confidence_source not in ("ensemble", "instant"):
            raise ValueError("confidence_source must be 'ensemble' or 'instant'")

    @property
    def batch_spec(self) -> BatchSpec:
        return BatchSpec(self.radius, self.point_cap, self.steps_per_epoch)

    @property
    def augment_config(self) -> AugmentConfig:
        return AugmentConfig(self.rotate, (self.scale_min, self.scale_max), self.jitter_sigma)

    @property
    def stage_steps(self) -> int:
        return self.epochs_per_stage * self.steps_per_epoch

    @property
    def total_steps(self) -> int:
        return 2 * self.stage_steps

    def model_metadata(self, class_count: int, aux_count: int) -> dict:
        return {"hidden": list(self.hidden), "k_neighbors": self.k_neighbors,
                "height_scale": self.height_scale, "radius": self.radius,
                "class_count": class_count, "aux_count": aux_count}


@dataclass
class TrainState:
    params: ModelParameters
    optimizer: SGDMomentum
    potentials: object
    store: EnsembleStore
    stage: int = 1
    epoch: int = 0
    global_step: int = 0
    history: dict = field(default_factory=lambda: {k: [] for k in
                          ("l_seg", "l_ent", "l_epc", "l_pl", "lambda_ent", "lambda_epc",
                           "lambda_pl", "total", "batch_size")})


@dataclass
class TrainResult:
    params: ModelParameters
    log: list
    state: TrainState


def write_log(path, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(LOG_COLUMNS)
        for row in rows:
            w.writerow([row[c] if c in ("epoch", "stage") else repr(float(row[c]))
                        for c in LOG_COLUMNS])


def train(cloud: PointCloud, weak: WeakLabelSet, schedule: TrainSchedule, class_count: int,
          *, log_path=None, checkpoint_dir=None, callback=None) -> TrainResult:
    """Run both training stages and return the parameters, per-epoch log and final state.

    Each step draws a potential-driven batch, augments and encodes it, and
    takes one momentum-SGD step on the combined objective; the ensemble is
    refreshed with the step's predictions afterwards. ``callback(epoch, row,
    state)`` runs after every epoch.
    """
    n = cloud.point_count
    if weak.count and weak.labeled_indices.max() >= n:
        raise ValueError("weak-label index outside the cloud")
    width = feature_width(cloud.feature_count)
    params = init_params(width, class_count, rng_stream(schedule.seed, "init"),
                         schedule.hidden)
    state = TrainState(
        params=params,
        optimizer=SGDMomentum(params, schedule.learning_rate, schedule.momentum),
        potentials=init_potentials(n, rng_stream(schedule.seed, "potentials"),
                                   schedule.increment_exponent),
        store=EnsembleStore(n, class_count, schedule.alpha),
    )
    aug_rng = rng_stream(schedule.seed, "augment")
    aug_cfg = schedule.augment_config
    spec = schedule.batch_spec
    dense = weak.dense_labels(n)
    rampup_length = max(schedule.stage_steps - 1, 1)
    log = []
    hist = state.history

    for stage in (1, 2):
        state.stage = stage
        for epoch_in_stage in range(schedule.epochs_per_stage):
            t0 = time.perf_counter()
            epoch = (stage - 1) * schedule.epochs_per_stage + epoch_in_stage + 1
            state.epoch = epoch
            lr = schedule.learning_rate * schedule.lr_decay ** (epoch - 1)
            first = len(hist["total"])
            for _ in range(schedule.steps_per_epoch):
                step = state.global_step
                batch = next_train_batch(state.potentials, cloud, spec, weak)
                coords = augment(cloud.coords[batch.indices], aug_rng, aug_cfg)
                x = encode_features(cloud, batch, schedule.k_neighbors, coords=coords) \
                    .matrix(schedule.height_scale)
                out = forward(state.params, x)
                probs = softmax(out.logits)
                preds = PredictionMatrix(probs, batch.indices)
                br = combined_loss(stage, step if stage == 1 else step - schedule.stage_steps,
                                   preds, batch.labeled_mask, dense[batch.indices], state.store,
                                   rampup_length=rampup_length, use_ent=schedule.use_ent,
                                   use_epc=schedule.use_epc, use_pl=schedule.use_pl,
                                   confidence_source=schedule.confidence_source)
                if not np.isfinite(br.total):
                    raise DivergenceError(f"non-finite loss at step {step}", step)
                grads = backward(out, softmax_backward(probs, br.grad_probs))
                if schedule.grad_clip > 0:
                    clip_gradients(grads, schedule.grad_clip)
                try:
                    state.optimizer.step(state.params, grads, lr)
                except DivergenceError as exc:
                    raise DivergenceError(f"{exc} at step {step}", step) from None
                ema_update(state.store, preds)
                for key in ("l_seg", "l_ent", "l_epc", "l_pl", "lambda_ent", "lambda_epc",
                            "lambda_pl", "total"):
                    hist[key].append(getattr(br, key))
                hist["batch_size"].append(len(batch))
                state.global_step += 1

            row = {"epoch": epoch, "stage": stage}
            for key in ("l_seg", "l_ent", "l_epc", "l_pl"):
                row[key] = float(np.mean(hist[key][first:]))
            for key in ("lambda_ent", "lambda_epc", "lambda_pl"):
                row[key] = float(hist[key][-1])
            row["seconds"] = time.perf_counter() - t0 if schedule.record_time else 0.0
            log.append(row)
            logger.info("epoch %d stage %d l_seg %.4f l_ent %.4f l_epc %.4f l_pl %.4f",
                        epoch, stage, row["l_seg"], row["l_ent"], row["l_epc"], row["l_pl"])
            if checkpoint_dir is not None and schedule.checkpoint_every \
                    and epoch % schedule.checkpoint_every == 0:
                Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)
                save_checkpoint(Path(checkpoint_dir) / f"epoch_{epoch:04d}.ckpt", state.params,
                                schedule.model_metadata(class_count, cloud.feature_count))
            if callback is not None:
                callback(epoch, row, state)

    if log_path is not None:
        write_log(log_path, log)
    return TrainResult(state.params, log, state)


def clip_gradients(grads: ModelParameters, max_norm: float) -> float:
    """Rescale ``grads`` in place so their global L2 norm is at most ``max_norm``."""
    norm = float(np.sqrt(sum(np.sum(g * g) for g in grads.blocks)))
    if norm > max_norm:
        for g in grads.blocks:
            g *= max_norm / norm
    return norm


def predict_full(params: ModelParameters, cloud: PointCloud, batch_spec: BatchSpec,
                 k_neighbors: int = 16, height_scale: float = 10.0):
    """Average class probabilities over the overlapping test batches covering each point.

    Returns ``(probs, labels)``; labels take the first maximal class.
    """
    k = params.class_count
    acc = np.zeros((cloud.point_count, k))
    hits = np.zeros(cloud.point_count)
    for batch in test_batches(cloud, batch_spec):
        x = encode_features(cloud, batch, k_neighbors).matrix(height_scale)
        acc[batch.indices] += softmax(forward(params, x).logits)
        hits[batch.indices] += 1
    probs = acc / hits[:, None]
    return probs, np.argmax(probs, axis=1)


def schedule_from_metadata(meta: dict) -> TrainSchedule:
    return replace(TrainSchedule(), hidden=tuple(meta["hidden"]), k_neighbors=meta["k_neighbors"],
                   height_scale=meta["height_scale"], radius=meta["radius"])


def schedule_dict(schedule: TrainSchedule) -> dict:
    return asdict(schedule)
