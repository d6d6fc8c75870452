"""
Alpha compositing and synthetic dataset generation.

Each foreground is paired with ``per_fg`` backgrounds. A background is
upscaled (bilinear) when it is smaller than the foreground along either axis,
then cropped to the foreground extent; the crop rectangle and the per-job seed
travel with every composite as its provenance record.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np

from matting.numerics import bilinear_matrix
from matting.shared.errors import MattingError, ShapeError
from matting.shared.utils import derive_seed

CROP_MODES = ("center", "random")
TRAIN_PER_FG = 100
TEST_PER_FG = 20


@dataclass(frozen=True)
class CompositionJob:
    index: int
    fg: int
    alpha: int
    bg: int
    target_size: Tuple[int, int]
    seed: int
    crop: Optional[Tuple[int, int, int, int]] = None  # (top, left, height, width), filled in when run

    def __post_init__(self):
        if self.target_size[0] < 1 or self.target_size[1] < 1:
            raise MattingError(f"job {self.index}: target size {self.target_size} must be positive")


def _check_rgb(img, what: str) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[-1] != 3:
        raise ShapeError(f"{what} must have shape (H, W, 3), got {img.shape}")
    return img


def composite(fg, bg, alpha) -> np.ndarray:
    """I = alpha * F + (1 - alpha) * B, per pixel and channel."""
    fg, bg = _check_rgb(fg, "foreground"), _check_rgb(bg, "background")
    alpha = np.asarray(alpha, dtype=np.float64)
    if fg.shape != bg.shape or alpha.shape != fg.shape[:2]:
        raise ShapeError(f"composite extents differ: fg {fg.shape}, bg {bg.shape}, alpha {alpha.shape}")
    a = alpha[..., None]
    return np.clip(a * fg + (1.0 - a) * bg, 0.0, 1.0)


def resize_bilinear(img, height: int, width: int) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    rows = bilinear_matrix(img.shape[0], height)
    cols = bilinear_matrix(img.shape[1], width)
    if img.ndim == 2:
        return rows @ img @ cols.T
    return np.einsum("ih,hwc,jw->ijc", rows, img, cols)


def fit_background(bg, height: int, width: int, crop_mode: str = "center", seed: int = 0):
    """Scale ``bg`` up to cover (height, width) if needed and crop; returns (image, crop)."""
    if crop_mode not in CROP_MODES:
        raise MattingError(f"unknown crop mode {crop_mode!r}; expected one of {CROP_MODES}")
    bg = _check_rgb(bg, "background")
    bh, bw = bg.shape[:2]
    ratio = max(height / bh, width / bw)
    if ratio > 1:
        bh, bw = math.ceil(bh * ratio), math.ceil(bw * ratio)
        bg = np.clip(resize_bilinear(bg, bh, bw), 0.0, 1.0)
    if bh < height or bw < width:
        raise ShapeError(f"background {bh}x{bw} cannot cover target {height}x{width}")
    if crop_mode == "center":
        top, left = (bh - height) // 2, (bw - width) // 2
    else:
        rng = np.random.default_rng(seed)
        top = int(rng.integers(0, bh - height + 1))
        left = int(rng.integers(0, bw - width + 1))
    return bg[top:top + height, left:left + width], (top, left, height, width)


def plan_jobs(fg_sizes: Sequence[Tuple[int, int]], bg_count: int, per_fg: int, seed: int) -> List[CompositionJob]:
    """
    Deterministic job list: foreground i takes ``per_fg`` consecutive entries of
    a seeded permutation of the backgrounds, cycling when they run out.
    """
    if per_fg < 1:
        raise MattingError(f"per_fg must be at least 1, got {per_fg}")
    if not fg_sizes or bg_count < 1:
        raise MattingError("synthesis needs at least one foreground and one background")
    order = np.random.default_rng(seed).permutation(bg_count)
    jobs = []
    for i, size in enumerate(fg_sizes):
        for k in range(per_fg):
            index = i * per_fg + k
            jobs.append(CompositionJob(
                index=index,
                fg=i,
                alpha=i,
                bg=int(order[index % bg_count]),
                target_size=(int(size[0]), int(size[1])),
                seed=derive_seed(seed, index),
            ))
    return jobs


def run_job(job: CompositionJob, fgs, alphas, bgs, crop_mode: str = "center"):
    height, width = job.target_size
    background, crop = fit_background(bgs[job.bg], height, width, crop_mode=crop_mode, seed=job.seed)
    image = composite(fgs[job.fg], background, alphas[job.alpha])
    done = CompositionJob(**{**asdict(job), "crop": crop})
    return image, np.asarray(alphas[job.alpha], dtype=np.float64), done


def provenance(job: CompositionJob, fg_names=None, alpha_names=None, bg_names=None) -> dict:
    def name(names, i):
        return names[i] if names is not None else i

    top, left, height, width = job.crop
    return {
        "fg": name(fg_names, job.fg),
        "bg": name(bg_names, job.bg),
        "alpha": name(alpha_names, job.alpha),
        "crop": {"top": top, "left": left, "height": height, "width": width},
        "seed": job.seed,
    }


def _check_pairs(fgs, alphas):
    if len(fgs) != len(alphas):
        raise MattingError(f"{len(fgs)} foregrounds but {len(alphas)} alphas")
    for i, (fg, alpha) in enumerate(zip(fgs, alphas)):
        if np.shape(fg)[:2] != np.shape(alpha):
            raise ShapeError(f"foreground {i} is {np.shape(fg)[:2]} but its alpha is {np.shape(alpha)}")


def synthesize_set(fgs, alphas, bgs, per_fg: int = TRAIN_PER_FG, seed: int = 0, num_threads: int = 1,
                   crop_mode: str = "center", names=None, progress=None):
    """
    Composite every foreground over ``per_fg`` backgrounds.

    Returns a list of (image, alpha, provenance) in job order; the output does not
    depend on ``num_threads``. ``names`` optionally maps to (fg_names, alpha_names,
    bg_names) for provenance records.
    """
    _check_pairs(fgs, alphas)
    jobs = plan_jobs([np.shape(a) for a in alphas], len(bgs), per_fg, seed)
    fg_names, alpha_names, bg_names = names if names is not None else (None, None, None)

    def work(job):
        image, alpha, done = run_job(job, fgs, alphas, bgs, crop_mode=crop_mode)
        return image, alpha, provenance(done, fg_names, alpha_names, bg_names)

    with ThreadPoolExecutor(max_workers=max(1, num_threads)) as pool:
        results = pool.map(work, jobs)
        if progress is not None:
            results = progress(results, total=len(jobs))
        return list(results)


def synthesized_count(fg_count: int, per_fg: int) -> int:
    return fg_count * per_fg


def adversarial_composite(images, alphas, bgs, seed: int = 0):
    """Recomposite each predicted foreground over a fresh background, as fed to the discriminator."""
    if not bgs:
        raise MattingError("adversarial compositing needs at least one background")
    rng = np.random.default_rng(seed)
    out = []
    for image, alpha in zip(images, alphas):
        image = _check_rgb(image, "image")
        pick = int(rng.integers(0, len(bgs)))
        background, _ = fit_background(bgs[pick], image.shape[0], image.shape[1])
        out.append(composite(image, background, alpha))
    return out
