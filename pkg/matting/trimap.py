"""
Trimap and soft-segmentation synthesis.

Trimaps are uint8 label maps (BG=0, UNK=1, FG=2). Soft segmentations are float
arrays of shape (H, W, 2) holding (fg_prob, bg_prob); trimap probabilities are
(H, W, 3) in (B, U, F) order.
"""
import numpy as np

from matting.morphology import dilate, erode, gaussian_blur
from matting.shared.errors import MattingError, ProbabilityError, TrimapDecodeError

BG, UNK, FG = 0, 1, 2
# alpha at or beyond one 8-bit step from 0 or 1 counts as definite background/foreground
BG_ALPHA_MAX = 1.0 / 255.0
FG_ALPHA_MIN = 254.0 / 255.0

RANDOM_RADIUS_RANGE = (1, 29)
SOFTSEG_RADIUS_RANGE = (1, 59)
SOFTSEG_SIGMA_RANGE = (1.0, 3.0)
SOFTSEG_SEQUENCES = ("open", "either")
INFERENCE_EROSIONS = (20, 30, 40, 50)

_ENCODE = np.array([0, 128, 255], dtype=np.uint8)


def _compose(fg: np.ndarray, bg: np.ndarray) -> np.ndarray:
    t = np.full(fg.shape, UNK, dtype=np.uint8)
    t[bg] = BG
    t[fg] = FG
    return t


def _check_trimap(t) -> np.ndarray:
    t = np.asarray(t)
    if t.ndim != 2 or not np.isin(t, (BG, UNK, FG)).all():
        raise MattingError("trimap must be a 2-D map of labels {0, 1, 2}")
    return t.astype(np.uint8)


def definite_regions(alpha):
    alpha = np.asarray(alpha, dtype=np.float64)
    return alpha >= FG_ALPHA_MIN, alpha <= BG_ALPHA_MAX


def gt_trimap(alpha, erosion_px: int = 15) -> np.ndarray:
    return trimap_with_radii(alpha, erosion_px, erosion_px)


def trimap_with_radii(alpha, fg_px: int, bg_px: int) -> np.ndarray:
    fg0, bg0 = definite_regions(alpha)
    return _compose(erode(fg0, fg_px), erode(bg0, bg_px))


def random_radii(seed: int) -> tuple:
    """Independent (fg, bg) erosion radii, each uniform over 1..29 inclusive."""
    low, high = RANDOM_RADIUS_RANGE
    fg_px, bg_px = np.random.default_rng(seed).integers(low, high + 1, size=2)
    return int(fg_px), int(bg_px)


def random_trimap(alpha, seed: int, radii=None) -> np.ndarray:
    """GT-style trimap with independent FG/BG erosion radii drawn by ``random_radii``."""
    if radii is None:
        radii = random_radii(seed)
    fg_px, bg_px = (int(r) for r in radii)
    return trimap_with_radii(alpha, fg_px, bg_px)


def _softseg(fg_prob: np.ndarray) -> np.ndarray:
    return np.stack([fg_prob, 1.0 - fg_prob], axis=-1)


def soft_segmentation_from_trimap(t, seed: int, sequence: str = "open", radii=None, sigma: float = None) -> np.ndarray:
    """
    Training-time soft segmentation from a trimap.

    ``sequence="open"`` erodes then dilates FG u UNK; ``"either"`` applies one
    operation picked by a coin flip. Radii come from 1..59 and the blur sigma
    from [1, 3] unless injected.
    """
    t = _check_trimap(t)
    if sequence not in SOFTSEG_SEQUENCES:
        raise MattingError(f"unknown soft segmentation sequence {sequence!r}; expected one of {SOFTSEG_SEQUENCES}")
    rng = np.random.default_rng(seed)
    low, high = SOFTSEG_RADIUS_RANGE
    drawn = rng.integers(low, high + 1, size=2)
    drawn_sigma = rng.uniform(*SOFTSEG_SIGMA_RANGE)
    use_erosion = bool(rng.integers(0, 2))
    a, b = (int(r) for r in (radii if radii is not None else drawn))
    sigma = drawn_sigma if sigma is None else sigma

    m = t != BG
    if sequence == "open":
        m = dilate(erode(m, a), b)
    else:
        m = erode(m, a) if use_erosion else dilate(m, b)
    return _softseg(gaussian_blur(m.astype(np.float64), sigma))


def inference_segmentation(t, px: int = 20, sigma: float = 2.0) -> np.ndarray:
    """Deterministic soft segmentation used at inference: erode FG u UNK by px, then blur."""
    t = _check_trimap(t)
    m = erode(t != BG, px)
    return _softseg(gaussian_blur(m.astype(np.float64), sigma))


def inference_segmentation_sweep(t, widths=INFERENCE_EROSIONS, sigma: float = 2.0) -> dict:
    """Inference segmentations of one trimap at each erosion width, keyed by width."""
    return {int(px): inference_segmentation(t, px, sigma) for px in widths}


def pseudo_trimap_real(seg, fg_px: int = 15, bg_px: int = 50) -> np.ndarray:
    """Pseudo trimap for real images from a binary segmentation."""
    seg = np.asarray(seg, dtype=bool)
    return _compose(erode(seg, fg_px), erode(~seg, bg_px))


def trimap_from_segmentation(seg, fg_px: int = 10, unknown_px: int = 10) -> np.ndarray:
    """Classic automatic trimap: shrink the segmentation for FG, grow it for the unknown band."""
    seg = np.asarray(seg, dtype=bool)
    return _compose(erode(seg, fg_px), ~dilate(seg, unknown_px))


def real_soft_segmentation(seg, fg_px: int = 15, bg_px: int = 50, px: int = 20, sigma: float = 2.0) -> np.ndarray:
    """Soft segmentation for unlabeled real images: pseudo trimap followed by the inference recipe."""
    return inference_segmentation(pseudo_trimap_real(seg, fg_px, bg_px), px=px, sigma=sigma)


def trimap_encode(t) -> np.ndarray:
    return _ENCODE[_check_trimap(t)]


def trimap_decode(values) -> np.ndarray:
    """8-bit map to labels: 0 -> BG, 120..136 -> UNK, 255 -> FG; anything else is rejected."""
    values = np.asarray(values)
    if values.ndim != 2:
        raise TrimapDecodeError(f"trimap image must be single-channel, got shape {values.shape}")
    values = values.astype(np.int64)
    unknown = (values >= 120) & (values <= 136)
    valid = (values == 0) | (values == 255) | unknown
    if not valid.all():
        y, x = np.argwhere(~valid)[0]
        raise TrimapDecodeError(f"trimap value {values[y, x]} at ({y}, {x}) is outside the 0 / 120-136 / 255 bands")
    return _compose(values == 255, values == 0)


def trimap_to_probs(t) -> np.ndarray:
    """One-hot (B, U, F) probabilities of a hard trimap."""
    t = _check_trimap(t)
    return np.eye(3, dtype=np.float64)[t]


def probs_to_trimap(probs) -> np.ndarray:
    """Most probable label per pixel; ties resolve toward BG, then UNK."""
    probs = check_probs(probs, tolerance=None)
    return np.argmax(probs, axis=-1).astype(np.uint8)


def check_probs(probs, tolerance: float = 1e-6) -> np.ndarray:
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 3 or probs.shape[-1] != 3:
        raise ProbabilityError(f"trimap probabilities must have shape (H, W, 3), got {probs.shape}")
    if np.any(probs < -1e-12) or np.any(probs > 1.0 + 1e-12):
        raise ProbabilityError("trimap probabilities must lie in [0, 1]")
    if tolerance is not None:
        deviation = np.abs(probs.sum(axis=-1) - 1.0)
        if np.any(deviation > tolerance):
            y, x = np.unravel_index(int(np.argmax(deviation)), deviation.shape)
            raise ProbabilityError(f"probabilities at ({y}, {x}) sum to {probs[y, x].sum():.6f}")
    return probs


def label_counts(t) -> dict:
    t = _check_trimap(t)
    return {"bg": int((t == BG).sum()), "unknown": int((t == UNK).sum()), "fg": int((t == FG).sum())}
