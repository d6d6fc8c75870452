"""
PNG conventions shared by every subcommand.

Alpha and soft-segmentation maps are 8-bit grayscale (value / 255), trimaps use
{0, 128, 255}, RGB images are 8-bit per channel and trimap probabilities are
3-channel 8-bit images in (B, U, F) channel order.
"""
import os

import numpy as np
from PIL import Image

from matting.shared.errors import MattingError, ProbabilityError

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg")
# quantization tolerance for probability rows read back from 8-bit PNGs
PROBABILITY_TOLERANCE = 2.0 / 255.0


def list_images(directory):
    """Sorted image filenames in a directory."""
    if not os.path.isdir(directory):
        raise MattingError(f"directory not found: {directory}")
    names = [n for n in os.listdir(directory) if n.lower().endswith(IMAGE_EXTENSIONS)]
    return sorted(names)


def _open(path):
    try:
        return Image.open(path)
    except (OSError, ValueError) as e:
        raise MattingError(f"unreadable image {path}: {e}") from e


def is_color(path) -> bool:
    """True for RGB-like images, False for single-channel ones."""
    with _open(path) as img:
        return len(img.getbands()) >= 3


def to_uint8(values) -> np.ndarray:
    return np.clip(np.round(np.asarray(values, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def read_gray(path) -> np.ndarray:
    """Grayscale PNG as float64 in [0, 1]."""
    with _open(path) as img:
        return np.asarray(img.convert("L"), dtype=np.float64) / 255.0


def read_gray_u8(path) -> np.ndarray:
    with _open(path) as img:
        return np.asarray(img.convert("L"), dtype=np.uint8)


def write_gray(path, values):
    Image.fromarray(to_uint8(values)).save(path)
    return path


def write_gray_u8(path, values):
    Image.fromarray(np.asarray(values, dtype=np.uint8)).save(path)
    return path


def read_rgb(path) -> np.ndarray:
    """RGB image as float64 (H, W, 3) in [0, 1]."""
    with _open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0


def write_rgb(path, values):
    Image.fromarray(to_uint8(values)).save(path)
    return path


def read_probs(path) -> np.ndarray:
    """3-channel (B, U, F) probability PNG; rows must sum to 1 within 2/255."""
    probs = read_rgb(path)
    deviation = np.abs(probs.sum(axis=-1) - 1.0)
    if np.any(deviation > PROBABILITY_TOLERANCE):
        y, x = np.unravel_index(int(np.argmax(deviation)), deviation.shape)
        raise ProbabilityError(
            f"{path}: probabilities at ({y}, {x}) sum to {probs[y, x].sum():.4f}, "
            f"outside the {PROBABILITY_TOLERANCE:.4f} tolerance"
        )
    return probs


def write_probs(path, probs):
    return write_rgb(path, probs)
