"""Dice and Jaccard scores from confusion counts, plus the evaluation
protocol: stretch per-class probabilities to ground-truth resolution with
bilinear interpolation, binarize/argmax, then score at full resolution.

Conventions fixed here (documented because batches can degenerate):
  * p[i, j] counts pixels predicted class i whose label is class j.
  * A class absent from both prediction and label scores 1.0.
  * Class 0 is background; mean scores average the foreground classes.
  * Bilinear resize uses half-pixel centers (align-corners false) and
    replicates edges; binary threshold is 0.5 on the probability.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ShapeError, UsageError
from .tensor import Tensor


@dataclass(frozen=True)
class ConfusionCounts:
    """matrix[i, j] = number of pixels predicted class i, labeled class j."""

    matrix: np.ndarray

    @property
    def num_labels(self) -> int:
        return self.matrix.shape[0]

    @property
    def total(self) -> int:
        return int(self.matrix.sum())


@dataclass(frozen=True)
class MetricsReport:
    per_class_dice: tuple[float, ...]
    per_class_jaccard: tuple[float, ...]
    mean_dice: float
    mean_jaccard: float
    counts: ConfusionCounts


def _as_index_mask(mask) -> np.ndarray:
    m = mask.data if isinstance(mask, Tensor) else np.asarray(mask)
    return m.astype(np.int64, copy=False)


def confusion(pred_mask, gt_mask, num_labels: int) -> ConfusionCounts:
    """Exact integer confusion counts over two class-index masks."""
    pred = _as_index_mask(pred_mask)
    gt = _as_index_mask(gt_mask)
    if pred.shape != gt.shape:
        raise ShapeError(f"confusion shape mismatch: {pred.shape} vs {gt.shape}")
    if num_labels < 1:
        raise DomainError("num_labels must be >= 1")
    for name, m in (("pred", pred), ("gt", gt)):
        if m.size and ((m < 0).any() or (m >= num_labels).any()):
            raise DomainError(f"{name} mask contains labels outside "
                              f"[0, {num_labels})")
    flat = pred.ravel() * num_labels + gt.ravel()
    matrix = np.bincount(flat, minlength=num_labels * num_labels)
    return ConfusionCounts(matrix.reshape(num_labels, num_labels))


def dice_jaccard(counts: ConfusionCounts,
                 include_background: bool = False) -> MetricsReport:
    """Per-class and mean Dice/Jaccard from confusion counts.

    dice_i    = 2 p_ii / (sum_j p_ij + sum_j p_ji)
    jaccard_i = p_ii / (sum_j p_ij + sum_j p_ji - p_ii)
    """
    m = counts.matrix.astype(np.float64)
    tp = np.diag(m)
    pred_tot = m.sum(axis=1)
    label_tot = m.sum(axis=0)
    dice, jacc = [], []
    for i in range(counts.num_labels):
        denom_d = pred_tot[i] + label_tot[i]
        if denom_d == 0.0:
            d = j = 1.0                      # class absent on both sides
        else:
            d = 2.0 * tp[i] / denom_d
            union = denom_d - tp[i]
            j = tp[i] / union if union > 0.0 else 1.0
        dice.append(float(d))
        jacc.append(float(j))
    lo = 0 if include_background or counts.num_labels == 1 else 1
    scope = slice(lo, counts.num_labels)
    return MetricsReport(per_class_dice=tuple(dice),
                         per_class_jaccard=tuple(jacc),
                         mean_dice=float(np.mean(dice[scope])),
                         mean_jaccard=float(np.mean(jacc[scope])),
                         counts=counts)


def score_masks(pred_mask, gt_mask, num_labels: int,
                include_background: bool = False) -> MetricsReport:
    return dice_jaccard(confusion(pred_mask, gt_mask, num_labels),
                        include_background)


def macro_pooled_scores(pred_masks, gt_masks, num_labels: int,
                        include_background: bool = False) -> dict[str, float]:
    """Two aggregations over a set of images.

    macro: score each image separately, then average the mean scores.
    pooled: sum all confusion counts first, then score once.
    """
    pred_masks, gt_masks = list(pred_masks), list(gt_masks)
    if len(pred_masks) != len(gt_masks) or not pred_masks:
        raise ShapeError("macro_pooled_scores needs equal, nonzero counts "
                         "of predictions and ground truths")
    total = np.zeros((num_labels, num_labels), dtype=np.int64)
    macro_d, macro_j = [], []
    for p, g in zip(pred_masks, gt_masks):
        c = confusion(p, g, num_labels)
        r = dice_jaccard(c, include_background)
        macro_d.append(r.mean_dice)
        macro_j.append(r.mean_jaccard)
        total += c.matrix
    pooled = dice_jaccard(ConfusionCounts(total), include_background)
    return {
        "macro_dice": float(np.mean(macro_d)),
        "macro_jaccard": float(np.mean(macro_j)),
        "pooled_dice": pooled.mean_dice,
        "pooled_jaccard": pooled.mean_jaccard,
    }


# ---------------------------------------------------------------------------
# resolution stretching


def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize over the last two axes, half-pixel centers,
    edge-replicating: the standard align-corners-false convention."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[-2:]
    if out_h < 1 or out_w < 1:
        raise ShapeError("resize extents must be positive")
    if (out_h, out_w) == (h, w):
        return img.copy()

    def axis_weights(n_in, n_out):
        centers = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        lo = np.floor(centers)
        t = centers - lo
        i0 = np.clip(lo, 0, n_in - 1).astype(np.int64)
        i1 = np.clip(lo + 1, 0, n_in - 1).astype(np.int64)
        return i0, i1, t

    y0, y1, ty = axis_weights(h, out_h)
    x0, x1, tx = axis_weights(w, out_w)
    rows = img[..., y0, :] * (1.0 - ty)[:, None] + img[..., y1, :] * ty[:, None]
    return rows[..., x0] * (1.0 - tx) + rows[..., x1] * tx


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _probabilities(logits: np.ndarray) -> np.ndarray:
    if logits.shape[1] == 1:
        return _sigmoid(logits)
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def upscale_prediction(pred_logits, target_res) -> np.ndarray:
    """Stretch logits (N x C x H x W) to the ground-truth resolution and
    reduce to a class-index mask (N x H_t x W_t).

    Per-class probabilities are interpolated bilinearly; a single channel
    thresholds at 0.5, several channels take the per-pixel argmax.
    """
    logits = pred_logits.data if isinstance(pred_logits, Tensor) else np.asarray(pred_logits)
    if logits.ndim != 4:
        raise ShapeError("upscale_prediction expects N x C x H x W logits")
    th, tw = (target_res, target_res) if np.isscalar(target_res) else tuple(target_res)
    h, w = logits.shape[-2:]
    if th < h or tw < w:
        raise UsageError(f"target resolution {th}x{tw} below prediction "
                         f"resolution {h}x{w}; only up-scaling is supported")
    probs = bilinear_resize(_probabilities(logits), th, tw)
    if logits.shape[1] == 1:
        return (probs[:, 0] > 0.5).astype(np.int64)
    return probs.argmax(axis=1).astype(np.int64)
