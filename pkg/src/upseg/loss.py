"""Deep-supervision loss: one cross entropy per up-scaling tap, summed.

The model emits logits at every scale (tap 0 = backbone resolution, tap m =
final output resolution). Each tap is scored against the ground-truth mask
down-scaled to its resolution, and the weighted per-stage losses are summed
into one scalar. Label masks are down-scaled by nearest-neighbour sampling —
class indices are categorical and must never be interpolated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError, UsageError
from .tensor import Tensor, cross_entropy

_BASE_LOSSES = ("cross_entropy",)


@dataclass(frozen=True)
class LossConfig:
    num_stages: int
    base_loss: str = "cross_entropy"
    stage_weights: tuple[float, ...] = ()

    def __post_init__(self):
        if self.num_stages < 0:
            raise ConfigError("loss num_stages must be >= 0")
        if self.base_loss not in _BASE_LOSSES:
            raise ConfigError(f"unknown base_loss {self.base_loss!r}; "
                              f"supported: {', '.join(_BASE_LOSSES)}")
        weights = self.stage_weights or (1.0,) * (self.num_stages + 1)
        weights = tuple(float(w) for w in weights)
        if len(weights) != self.num_stages + 1:
            raise ConfigError(f"stage_weights needs {self.num_stages + 1} "
                              f"entries, got {len(weights)}")
        if any(w < 0.0 for w in weights):
            raise ConfigError("stage_weights must be non-negative")
        object.__setattr__(self, "stage_weights", weights)


def _as_mask(gt) -> np.ndarray:
    m = gt.data if isinstance(gt, Tensor) else np.asarray(gt)
    if m.ndim != 3:
        raise ShapeError("ground-truth mask must be N x H x W")
    return m


def resize_target(gt, stage: int, num_stages: int) -> np.ndarray:
    """Down-scale a label mask to tap ``stage``'s resolution.

    The mask lives at the tap ``num_stages`` resolution; each lower stage
    halves both extents once more. Nearest-neighbour keeps labels exact.
    """
    mask = _as_mask(gt)
    if not 0 <= stage <= num_stages:
        raise UsageError(f"stage {stage} outside [0, {num_stages}]")
    factor = 2 ** (num_stages - stage)
    _, h, w = mask.shape
    if h % factor or w % factor:
        raise ShapeError(f"mask extents {h}x{w} not divisible by "
                         f"down-scale factor {factor}")
    return mask[:, ::factor, ::factor]


def l_sum_components(taps, gt, cfg: LossConfig):
    """Weighted per-tap cross entropies and their sum.

    Returns (total, per_stage) where total is the differentiable scalar and
    per_stage the unweighted float loss of each tap, for logging.
    """
    taps = list(taps)
    if len(taps) != cfg.num_stages + 1:
        raise ConfigError(f"expected {cfg.num_stages + 1} taps "
                          f"(stages 0..{cfg.num_stages}), got {len(taps)}")
    mask = _as_mask(gt)
    total = None
    per_stage = []
    for stage, (tap, weight) in enumerate(zip(taps, cfg.stage_weights)):
        target = resize_target(mask, stage, cfg.num_stages)
        if tap.shape[2:] != target.shape[1:]:
            raise ShapeError(f"tap {stage} resolution {tap.shape[2:]} does "
                             f"not match target {target.shape[1:]}")
        stage_loss = cross_entropy(tap, target)
        per_stage.append(float(stage_loss.data))
        term = stage_loss * weight
        total = term if total is None else total + term
    return total, per_stage


def l_sum(taps, gt, cfg: LossConfig) -> Tensor:
    """The summed multi-scale loss as a single differentiable scalar."""
    total, _ = l_sum_components(taps, gt, cfg)
    return total
