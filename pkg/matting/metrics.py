"""
Matting metrics (SAD, MSE, gradient and connectivity error) and trimap scores.

SAD, Grad and Conn are reported divided by 1000; MSE is the raw mean over the
mask. The mask is normally the unknown region of the evaluation trimap.
"""
from dataclasses import asdict, dataclass
import math
from typing import Optional

import numpy as np
import pandas as pd
from scipy import ndimage

from matting.shared.errors import EmptyMaskError, MattingError, ShapeError
from matting.trimap import BG, FG, UNK

REPORT_SCALE = 1000.0
GRAD_SIGMA = 1.4
CONN_STEP = 0.1
CONN_SOFT_THRESHOLD = 0.15
# cut-off of the truncated Gaussian-derivative kernel
_GAUSS_EPS = 1e-2

SCORE_COLUMNS = ["sad", "mse", "grad", "conn"]


@dataclass
class MattingScores:
    sad: float
    mse: Optional[float]
    grad: float
    conn: float
    mask_pixels: int

    def to_dict(self):
        return asdict(self)


@dataclass
class TrimapScores:
    accuracy: float
    iou_bg: Optional[float]
    iou_unk: Optional[float]
    iou_fg: Optional[float]
    miou: Optional[float]

    def to_dict(self):
        return asdict(self)


def _prepare(pred, gt, mask):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 2:
        raise ShapeError(f"prediction {pred.shape} and ground truth {gt.shape} must share a 2-D extent")
    mask = np.ones(gt.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if mask.shape != gt.shape:
        raise ShapeError(f"mask {mask.shape} does not match alpha extent {gt.shape}")
    return pred, gt, mask


def sad(pred, gt, mask=None) -> float:
    pred, gt, mask = _prepare(pred, gt, mask)
    return float(np.abs(pred - gt)[mask].sum() / REPORT_SCALE)


def mse(pred, gt, mask=None) -> float:
    pred, gt, mask = _prepare(pred, gt, mask)
    count = int(mask.sum())
    if count == 0:
        raise EmptyMaskError("MSE over an empty mask is undefined")
    return float(((pred - gt) ** 2)[mask].sum() / count)


def gaussian_derivative_kernels(sigma: float = GRAD_SIGMA):
    """(smoothing, derivative) 1-D kernels, jointly normalised to unit L2 norm in 2-D."""
    if not sigma > 0:
        raise MattingError(f"gradient sigma must be positive, got {sigma}")
    halfsize = int(math.ceil(sigma * math.sqrt(-2.0 * math.log(math.sqrt(2.0 * math.pi) * sigma * _GAUSS_EPS))))
    x = np.arange(-halfsize, halfsize + 1, dtype=np.float64)
    gauss = np.exp(-x ** 2 / (2.0 * sigma ** 2)) / (sigma * math.sqrt(2.0 * math.pi))
    dgauss = -x * gauss / sigma ** 2
    norm = math.sqrt(float(np.sum(gauss ** 2)) * float(np.sum(dgauss ** 2)))
    return gauss, dgauss / norm


def gradient_magnitude(img, sigma: float = GRAD_SIGMA) -> np.ndarray:
    gauss, dgauss = gaussian_derivative_kernels(sigma)
    img = np.asarray(img, dtype=np.float64)
    gx = ndimage.convolve1d(ndimage.convolve1d(img, gauss, axis=0, mode="reflect"), dgauss, axis=1, mode="reflect")
    gy = ndimage.convolve1d(ndimage.convolve1d(img, dgauss, axis=0, mode="reflect"), gauss, axis=1, mode="reflect")
    return np.sqrt(gx ** 2 + gy ** 2)


def gradient_error(pred, gt, mask=None, sigma: float = GRAD_SIGMA) -> float:
    pred, gt, mask = _prepare(pred, gt, mask)
    diff = (gradient_magnitude(pred, sigma) - gradient_magnitude(gt, sigma)) ** 2
    return float(diff[mask].sum() / REPORT_SCALE)


def largest_component(binary) -> np.ndarray:
    """Largest 4-connected component; equal sizes resolve to the one met first in raster order."""
    labels, count = ndimage.label(binary)
    if count == 0:
        return np.zeros(np.shape(binary), dtype=bool)
    sizes = np.bincount(labels.reshape(-1))
    sizes[0] = 0
    return labels == int(np.argmax(sizes))


def connectivity_thresholds(step: float = CONN_STEP) -> np.ndarray:
    if not 0 < step < 1:
        raise MattingError(f"connectivity step must lie in (0, 1), got {step}")
    n = int(math.floor(1.0 / step + 1e-9))
    return np.arange(n + 1) * step


def connectivity_error(pred, gt, mask=None, step: float = CONN_STEP) -> float:
    pred, gt, mask = _prepare(pred, gt, mask)
    thresholds = connectivity_thresholds(step)
    level = np.full(gt.shape, -1.0)
    for i in range(1, len(thresholds)):
        source = largest_component((pred >= thresholds[i]) & (gt >= thresholds[i]))
        newly_cut = (level == -1) & ~source
        level[newly_cut] = thresholds[i - 1]
    level[level == -1] = 1.0
    pred_d = pred - level
    gt_d = gt - level
    pred_phi = 1.0 - pred_d * (pred_d >= CONN_SOFT_THRESHOLD)
    gt_phi = 1.0 - gt_d * (gt_d >= CONN_SOFT_THRESHOLD)
    return float(np.abs(pred_phi - gt_phi)[mask].sum() / REPORT_SCALE)


def matting_scores(pred, gt, mask=None) -> MattingScores:
    """All four matting metrics; MSE is None when the mask is empty."""
    pred, gt, mask = _prepare(pred, gt, mask)
    count = int(mask.sum())
    return MattingScores(
        sad=sad(pred, gt, mask),
        mse=mse(pred, gt, mask) if count else None,
        grad=gradient_error(pred, gt, mask),
        conn=connectivity_error(pred, gt, mask),
        mask_pixels=count,
    )


def trimap_scores(pred, gt) -> TrimapScores:
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise ShapeError(f"trimap extents differ: {pred.shape} vs {gt.shape}")
    ious = {}
    for name, label in (("bg", BG), ("unk", UNK), ("fg", FG)):
        union = int(((pred == label) | (gt == label)).sum())
        inter = int(((pred == label) & (gt == label)).sum())
        ious[name] = inter / union if union else None
    defined = [v for v in ious.values() if v is not None]
    return TrimapScores(
        accuracy=float((pred == gt).mean()),
        iou_bg=ious["bg"],
        iou_unk=ious["unk"],
        iou_fg=ious["fg"],
        miou=float(np.mean(defined)) if defined else None,
    )


def batch_report(rows):
    """
    Per-image score rows (dicts with a ``name`` key) to a DataFrame plus the
    aggregate means of every score column.
    """
    frame = pd.DataFrame(list(rows))
    if frame.empty:
        return frame, {}
    columns = [c for c in frame.columns if c != "name" and pd.api.types.is_numeric_dtype(frame[c])]
    aggregate = {c: float(frame[c].mean()) for c in columns}
    return frame, aggregate
