import os

import numpy as np
import pytest

from matting.shared.imageio import write_gray, write_rgb


def disk_alpha(height, width, cy, cx, radius, ramp=0.0):
    """Disk matte; ``ramp`` > 0 gives it a soft edge of that width in pixels."""
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    dist = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
    if ramp <= 0:
        return (dist <= radius).astype(np.float64)
    return np.clip((radius - dist) / ramp + 0.5, 0.0, 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def binary_disk():
    return disk_alpha(48, 48, 23.5, 23.5, 14)


@pytest.fixture
def soft_disk():
    return disk_alpha(48, 48, 20.0, 26.0, 13, ramp=4.0)


@pytest.fixture
def image_dirs(tmp_path):
    """
    Two foreground/alpha pairs and three backgrounds of different sizes, one of
    them smaller than the foregrounds so it has to be upscaled.
    """
    gen = np.random.default_rng(99)
    dirs = {name: tmp_path / name for name in ("fg", "alpha", "bg")}
    for d in dirs.values():
        d.mkdir()
    for name, (h, w) in (("cat.png", (24, 20)), ("dog.png", (20, 28))):
        write_rgb(os.path.join(dirs["fg"], name), gen.uniform(0.3, 1.0, size=(h, w, 3)))
        write_gray(os.path.join(dirs["alpha"], name), disk_alpha(h, w, h / 2, w / 2, min(h, w) / 3, ramp=3.0))
    for name, (h, w) in (("beach.png", (40, 40)), ("city.png", (12, 16)), ("forest.png", (30, 50))):
        write_rgb(os.path.join(dirs["bg"], name), gen.uniform(0.0, 0.6, size=(h, w, 3)))
    return dirs
