"""Joint-inference fusion of a predicted alpha with trimap probabilities or labels."""
import numpy as np

from matting.shared.errors import MattingError, ShapeError
from matting.trimap import BG, FG, check_probs

SOFT_VARIANTS = ("A", "B")


def _check_alpha(alpha_p, extent) -> np.ndarray:
    alpha_p = np.asarray(alpha_p, dtype=np.float64)
    if alpha_p.shape != tuple(extent):
        raise ShapeError(f"alpha extent {alpha_p.shape} does not match {tuple(extent)}")
    return alpha_p


def soft_fusion(alpha_p, probs, variant: str = "A", tolerance: float = 1e-6) -> np.ndarray:
    """
    Variant A: (1 - U) * F / (F + B) + U * alpha, with 0/0 taken as 0.
    Variant B: F + U * alpha.
    """
    if variant not in SOFT_VARIANTS:
        raise MattingError(f"soft fusion variant must be one of {SOFT_VARIANTS}, got {variant!r}")
    probs = check_probs(probs, tolerance=tolerance)
    alpha_p = _check_alpha(alpha_p, probs.shape[:2])
    b, u, f = probs[..., 0], probs[..., 1], probs[..., 2]
    if variant == "A":
        known = f + b
        ratio = np.divide(f, known, out=np.zeros_like(f), where=known > 0)
        fused = (1.0 - u) * ratio + u * alpha_p
    else:
        fused = f + u * alpha_p
    return np.clip(fused, 0.0, 1.0)


def hard_fusion(alpha_p, t) -> np.ndarray:
    """Reset trimap FG to 1 and BG to 0; keep the clamped prediction in the unknown band."""
    t = np.asarray(t)
    alpha_p = _check_alpha(alpha_p, t.shape)
    fused = np.clip(alpha_p, 0.0, 1.0)
    fused[t == FG] = 1.0
    fused[t == BG] = 0.0
    return fused
