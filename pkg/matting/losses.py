"""
Alpha regression losses, trimap cross-entropy and LSGAN objectives.

Alpha losses accept numpy arrays (returning floats) or Tensors (returning
Tensors that stay on the active tape).
"""
from dataclasses import asdict, dataclass
import math

import numpy as np
from pydantic import BaseModel, Field

from matting import numerics as nx
from matting.numerics import Tensor
from matting.shared.errors import EmptyMaskError, MattingError, ShapeError

DEFAULT_HARD_PERCENT = 50.0


@dataclass
class LossReport:
    l_alpha: float
    l_hard: float
    total: float
    hard_pixel_count: int
    mask_pixel_count: int

    def to_dict(self):
        return asdict(self)


class GanLambda(BaseModel):
    base: float = Field(default=0.5, gt=0.0)
    halving_period: int = Field(default=10000, ge=1)


def _mask_indices(pred, gt, mask) -> np.ndarray:
    if tuple(np.shape(pred)) != tuple(np.shape(gt)):
        raise ShapeError(f"prediction {np.shape(pred)} and ground truth {np.shape(gt)} differ in extent")
    mask = np.ones(np.shape(gt), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if mask.shape != tuple(np.shape(gt)):
        raise ShapeError(f"mask {mask.shape} does not match alpha extent {np.shape(gt)}")
    indices = np.flatnonzero(mask)
    if indices.size == 0:
        raise EmptyMaskError("loss mask selects no pixels")
    return indices


def _finish(value: Tensor, like):
    return value if isinstance(like, Tensor) else value.item()


def _masked_l1(pred, gt, indices) -> Tensor:
    diff = nx.sub(pred, gt)
    return nx.mean(nx.absolute(nx.take(diff, indices)))


def l_alpha(pred, gt, mask=None):
    """Mean absolute alpha error over the mask."""
    indices = _mask_indices(pred, gt, mask)
    return _finish(_masked_l1(pred, gt, indices), pred)


def hard_count(p: float, mask_pixels: int) -> int:
    if not 0 < p <= 100:
        raise MattingError(f"hard-mining percentage must lie in (0, 100], got {p}")
    # p * |M| before dividing keeps integer percentages exact
    return max(1, int(math.floor(p * mask_pixels / 100.0)))


def hard_indices(pred, gt, mask=None, p: float = DEFAULT_HARD_PERCENT) -> np.ndarray:
    """
    Flat indices of the top-p percent largest absolute errors in the mask, in
    ascending index order. Equal errors prefer the lower pixel index.
    """
    indices = _mask_indices(pred, gt, mask)
    count = hard_count(p, indices.size)
    pred_values = pred.data if isinstance(pred, Tensor) else np.asarray(pred, dtype=np.float64)
    gt_values = gt.data if isinstance(gt, Tensor) else np.asarray(gt, dtype=np.float64)
    errors = np.abs(pred_values.reshape(-1)[indices] - gt_values.reshape(-1)[indices])
    order = np.lexsort((indices, -errors))
    return np.sort(indices[order[:count]])


def l_hard(pred, gt, mask=None, p: float = DEFAULT_HARD_PERCENT):
    """Mean absolute error over the hardest p percent of masked pixels."""
    return _finish(_masked_l1(pred, gt, hard_indices(pred, gt, mask, p)), pred)


def branch_loss(pred, gt, mask=None, p: float = DEFAULT_HARD_PERCENT):
    """(l_alpha + l_hard as a Tensor, l_alpha, l_hard, hard count, mask count) for one prediction."""
    mask_indices = _mask_indices(pred, gt, mask)
    hard = hard_indices(pred, gt, mask, p)
    la = _masked_l1(pred, gt, mask_indices)
    lh = _masked_l1(pred, gt, hard)
    return nx.add(la, lh), la.item(), lh.item(), int(hard.size), int(mask_indices.size)


def composite_loss(coarse, refined, gt, mask=None, p: float = DEFAULT_HARD_PERCENT):
    """Coarse plus refined branch losses; returns (total Tensor, LossReport)."""
    coarse_total, coarse_la, coarse_lh, hard_n, mask_n = branch_loss(coarse, gt, mask, p)
    refined_total, refined_la, refined_lh, _, _ = branch_loss(refined, gt, mask, p)
    total = nx.add(coarse_total, refined_total)
    report = LossReport(
        l_alpha=coarse_la + refined_la,
        l_hard=coarse_lh + refined_lh,
        total=total.item(),
        hard_pixel_count=hard_n,
        mask_pixel_count=mask_n,
    )
    return total, report


def total_loss(coarse, refined, gt, mask=None, p: float = DEFAULT_HARD_PERCENT) -> LossReport:
    return composite_loss(coarse, refined, gt, mask, p)[1]


def cross_entropy_3class(logits, labels):
    """Mean negative log-likelihood of the trimap labels under per-pixel softmax over 3 channels."""
    labels = np.asarray(labels)
    if np.shape(logits)[0] != 3 or tuple(np.shape(logits)[1:]) != labels.shape:
        raise ShapeError(f"logits {np.shape(logits)} do not match labels {labels.shape} as [3, H, W]")
    if not np.isin(labels, (0, 1, 2)).all():
        raise MattingError("trimap labels must be 0, 1 or 2")
    pixels = labels.size
    picks = labels.reshape(-1).astype(np.int64) * pixels + np.arange(pixels)
    log_probs = nx.log_softmax(logits, axis=0)
    value = nx.scale(nx.mean(nx.take(log_probs, picks)), -1.0)
    return _finish(value, logits)


def lsgan_generator_loss(d_on_composite, lam: float, l_ce: float, l_coarse: float, l_refined: float) -> float:
    if lam < 0:
        raise MattingError(f"lambda must be non-negative, got {lam}")
    d = np.asarray(d_on_composite, dtype=np.float64)
    return float(np.mean((d - 1.0) ** 2) + lam * (l_ce + l_coarse + l_refined))


def lsgan_discriminator_loss(d_on_fake, d_on_real) -> float:
    fake = np.asarray(d_on_fake, dtype=np.float64)
    real = np.asarray(d_on_real, dtype=np.float64)
    return float(np.mean(fake ** 2) + np.mean((real - 1.0) ** 2))


def lambda_schedule(iteration: int, g: GanLambda = None) -> float:
    """Auxiliary-loss weight, halved every ``halving_period`` iterations."""
    g = g or GanLambda()
    if iteration < 0:
        raise MattingError(f"iteration must be non-negative, got {iteration}")
    return g.base * 2.0 ** (-(iteration // g.halving_period))
