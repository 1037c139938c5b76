"""Training and evaluation loops.

The model always trains against the most detailed mask its taps can reach
(the authentic ground truth down-scaled to the finest tap's resolution) and
is always *scored* at authentic ground-truth resolution: predictions are
stretched up bilinearly first, never the ground truth down.

Early stopping watches the validation macro Jaccard: when ten consecutive
epochs fail to improve the best value by at least 1e-4, training stops and
the parameters roll back to the best epoch's snapshot.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import OptimizerConfig, RunConfig, validate_class_channels
from .data import (Sample, downscale_mask, generate, load_dataset,
                   read_tensor_file, split_samples, write_tensor_file)
from .errors import ArtifactMismatchError, ConfigError, DivergedError
from .graph import (ModelGraph, build_unet, build_upscale_stack,
                    forward_all_taps)
from .loss import LossConfig, l_sum_components
from .metrics import macro_pooled_scores, upscale_prediction
from .optim import AdamState, adam_step, sgd_step
from .tensor import backward, no_grad, zero_grads


@dataclass(frozen=True)
class TrainLogRow:
    epoch: int
    train_loss: float
    val_dice: float
    val_jaccard: float


@dataclass
class TrainResult:
    log: list[TrainLogRow]
    best_epoch: int
    best_val_jaccard: float
    epochs_run: int
    stopped_early: bool


def build_model(cfg: RunConfig, seed: int | None = None) -> ModelGraph:
    """Backbone plus up-scaling stack from one run config.

    The stack is built on a copy, so a baseline and an extended model made
    from the same seed share bit-identical backbone initializations.
    """
    seed = cfg.optimizer.seed if seed is None else seed
    base = build_unet(cfg.backbone, seed=seed)
    return build_upscale_stack(base, cfg.upscale, seed=seed + 1)


def prepare_samples(cfg: RunConfig) -> tuple[list[Sample], list[Sample], int]:
    """Generate or load the dataset, validate it against the model, split."""
    if cfg.data.source == "synthetic":
        samples = generate(cfg.data.spec)
        foreground = cfg.data.spec.num_classes
    else:
        samples, foreground = load_dataset(cfg.data.source)
    validate_class_channels(cfg.backbone.num_classes, foreground)
    train, val = split_samples(samples, cfg.data.val_fraction)
    return train, val, foreground


def _stack_images(samples: list[Sample]) -> np.ndarray:
    return np.stack([s.image for s in samples])


def _label_count(graph: ModelGraph) -> int:
    c = graph.num_classes
    return 2 if c == 1 else c


def evaluate_model(graph: ModelGraph, samples: list[Sample], gt_res: int,
                   batch_size: int = 8,
                   include_background: bool = False) -> dict[str, float]:
    """Stretch predictions to ground-truth resolution and score them."""
    images = _stack_images(samples)
    preds, gts = [], []
    finest = max(graph.taps)
    with no_grad():
        for lo in range(0, len(samples), batch_size):
            batch = images[lo:lo + batch_size]
            logits = forward_all_taps(graph, batch)[finest]
            pred = upscale_prediction(logits, gt_res).astype(np.uint8)
            preds.extend(pred)
            gts.extend(s.mask.astype(np.uint8) for s in samples[lo:lo + batch_size])
    return macro_pooled_scores(preds, gts, _label_count(graph),
                               include_background)


def _training_targets(graph: ModelGraph, samples: list[Sample]) -> np.ndarray:
    """Authentic masks down-scaled to the finest tap's resolution."""
    input_res = samples[0].image.shape[-1]
    tap_res = input_res * 2 ** graph.num_stages
    gt_res = samples[0].mask.shape[-1]
    if gt_res < tap_res:
        raise ConfigError(f"model produces {tap_res}x{tap_res} outputs but "
                          f"ground truth is only {gt_res}x{gt_res}")
    if gt_res % tap_res:
        raise ConfigError(f"ground-truth resolution {gt_res} is not a "
                          f"multiple of the output resolution {tap_res}")
    masks = np.stack([s.mask for s in samples])
    return downscale_mask(masks, gt_res // tap_res).astype(np.uint8)


def train_model(graph: ModelGraph, train_samples: list[Sample],
                val_samples: list[Sample], loss_cfg: LossConfig,
                opt_cfg: OptimizerConfig) -> TrainResult:
    if loss_cfg.num_stages != graph.num_stages:
        raise ConfigError(f"loss covers {loss_cfg.num_stages} stages but the "
                          f"model has {graph.num_stages}")
    images = _stack_images(train_samples)
    targets = _training_targets(graph, train_samples)
    gt_res = train_samples[0].mask.shape[-1]
    params = graph.parameters()
    state = AdamState(params) if opt_cfg.kind == "adam" else None
    n = len(train_samples)
    stage_count = graph.num_stages + 1

    log: list[TrainLogRow] = []
    best_jaccard, best_epoch = -np.inf, -1
    best_snapshot: dict[str, np.ndarray] = {}
    bad_epochs = 0
    stopped_early = False

    for epoch in range(1, opt_cfg.max_epochs + 1):
        order = np.random.default_rng([opt_cfg.seed, epoch]).permutation(n)
        loss_sum = 0.0
        for lo in range(0, n, opt_cfg.batch_size):
            idx = order[lo:lo + opt_cfg.batch_size]
            taps = forward_all_taps(graph, images[idx])
            tap_list = [taps[i] for i in range(stage_count)]
            total, _ = l_sum_components(tap_list, targets[idx], loss_cfg)
            if not np.isfinite(total.data):
                raise DivergedError(f"non-finite training loss in epoch {epoch}")
            zero_grads(params)
            backward(total)
            if opt_cfg.kind == "adam":
                adam_step(params, state, opt_cfg.lr)
            else:
                sgd_step(params, opt_cfg.lr)
            loss_sum += float(total.data) * len(idx)

        train_loss = loss_sum / n
        scores = evaluate_model(graph, val_samples, gt_res, opt_cfg.batch_size)
        val_j = scores["macro_jaccard"]
        log.append(TrainLogRow(epoch=epoch, train_loss=train_loss,
                               val_dice=scores["macro_dice"], val_jaccard=val_j))

        if val_j > best_jaccard + opt_cfg.early_stop_min_delta:
            best_jaccard, best_epoch = val_j, epoch
            best_snapshot = {p.name: p.tensor.data.copy() for p in params}
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= opt_cfg.early_stop_patience:
                stopped_early = True
                break

    for p in params:                         # roll back to the best epoch
        p.tensor.data = best_snapshot[p.name]
    return TrainResult(log=log, best_epoch=best_epoch,
                       best_val_jaccard=best_jaccard,
                       epochs_run=len(log), stopped_early=stopped_early)


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, graph: ModelGraph) -> None:
    write_tensor_file(path, {p.name: p.tensor.data for p in graph.parameters()})


def load_checkpoint(path, graph: ModelGraph) -> None:
    """Restore parameters in place; any name/shape disagreement means the
    checkpoint belongs to a different model."""
    records = read_tensor_file(path)
    expected = {p.name: p.tensor.shape for p in graph.parameters()}
    missing = sorted(set(expected) - set(records))
    extra = sorted(set(records) - set(expected))
    if missing or extra:
        raise ArtifactMismatchError(
            f"checkpoint {path} does not match the model: "
            f"missing {missing or 'none'}, unexpected {extra or 'none'}")
    for name, shape in expected.items():
        if records[name].shape != shape:
            raise ArtifactMismatchError(
                f"checkpoint {path}: parameter {name!r} has shape "
                f"{records[name].shape}, model expects {shape}")
    for p in graph.parameters():
        p.tensor.data = records[p.name].astype(np.float64)
