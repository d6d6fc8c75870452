"""
Adam, warmup + cosine learning-rate schedule, and a desk-scale training harness.

The toy task regresses synthetic alphas at 32x32 with a small network built
around the attention block: two convs produce the image and alpha features,
attention refines the alpha feature and two more convs predict a coarse alpha
plus a residual.
"""
from collections import OrderedDict
from dataclasses import dataclass, field
import math
import time
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, model_validator

from matting import numerics as nx
from matting.attention import AttentionConfig, attention_forward, init_params
from matting.losses import DEFAULT_HARD_PERCENT, composite_loss
from matting.numerics import Tape, Tensor
from matting.shared.errors import GradientMissingError, MattingError, NonFiniteError, TrainingDivergedError
from matting.synth import synthesize_set
from matting.trimap import gt_trimap, inference_segmentation

CURVE_COLUMNS = ["iteration", "lr", "l_alpha", "l_hard", "total"]


class LrSchedule(BaseModel):
    base_lr: float = Field(default=4e-4, ge=0.0)
    total_iters: int = Field(ge=2)
    warmup_iters: Optional[int] = Field(default=None, ge=1)

    @model_validator(mode="after")
    def _default_warmup(self):
        if self.warmup_iters is None:
            self.warmup_iters = max(1, int(round(0.05 * self.total_iters)))
        if not 0 < self.warmup_iters < self.total_iters:
            raise ValueError(f"warmup_iters {self.warmup_iters} must lie strictly between 0 and total_iters {self.total_iters}")
        return self


def lr_at(iteration: int, s: LrSchedule) -> float:
    """Linear warmup to base_lr, then half-cosine decay to zero at total_iters."""
    if not 0 <= iteration <= s.total_iters:
        raise MattingError(f"iteration {iteration} outside schedule range 0..{s.total_iters}")
    if iteration < s.warmup_iters:
        return s.base_lr * (iteration + 1) / s.warmup_iters
    progress = (iteration - s.warmup_iters) / (s.total_iters - s.warmup_iters)
    return s.base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


class ParameterStore:
    """Named trainable tensors."""

    def __init__(self):
        self._params: "OrderedDict[str, Tensor]" = OrderedDict()

    def add(self, name: str, tensor: Tensor) -> Tensor:
        if name in self._params:
            raise MattingError(f"parameter {name!r} already registered")
        tensor.requires_grad = True
        self._params[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self):
        return len(self._params)

    def names(self) -> List[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def replace(self, name: str, tensor: Tensor):
        if name not in self._params:
            raise MattingError(f"unknown parameter {name!r}")
        tensor.requires_grad = True
        self._params[name] = tensor

    def zero_grad(self):
        for tensor in self._params.values():
            tensor.zero_grad()

    def num_parameters(self) -> int:
        return int(sum(t.size for t in self._params.values()))

    def prefixed(self, prefix: str) -> Dict[str, Tensor]:
        return {name[len(prefix):]: t for name, t in self._params.items() if name.startswith(prefix)}


@dataclass
class AdamState:
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: ParameterStore, state: AdamState, lr: float):
    """One bias-corrected Adam update; every parameter must carry a gradient."""
    missing = [name for name, t in params.items() if t.grad is None]
    if missing:
        raise GradientMissingError(f"parameters without gradient: {', '.join(missing)}")
    state.t += 1
    correction1 = 1.0 - state.beta1 ** state.t
    correction2 = 1.0 - state.beta2 ** state.t
    for name, tensor in list(params.items()):
        g = tensor.grad
        m = state.m.get(name, np.zeros_like(g))
        v = state.v.get(name, np.zeros_like(g))
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.m[name], state.v[name] = m, v
        update = lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
        params.replace(name, Tensor(tensor.data - update, name=name))


class ToyTaskConfig(BaseModel):
    iterations: int = Field(default=200, ge=0)
    size: int = Field(default=32, ge=8)
    samples: int = Field(default=4, ge=1)
    hidden: int = Field(default=8, ge=2)
    base_lr: float = Field(default=1e-2, ge=0.0)
    warmup_iters: Optional[int] = Field(default=None, ge=1)
    hard_percent: float = Field(default=DEFAULT_HARD_PERCENT, gt=0.0, le=100.0)
    r: int = Field(default=4, ge=1)
    seed: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def _divisible(self):
        if self.size % self.r:
            raise ValueError(f"size {self.size} must be divisible by r={self.r}")
        return self


@dataclass
class ToySample:
    inputs: np.ndarray   # [4, H, W]: RGB plus the inference soft segmentation
    alpha: np.ndarray
    unknown: np.ndarray


def _disk_alpha(rng, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    cy, cx = rng.uniform(size * 0.3, size * 0.7, size=2)
    radius = rng.uniform(size * 0.2, size * 0.35)
    ramp = rng.uniform(1.5, 3.0)
    dist = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
    return np.clip((radius - dist) / ramp + 0.5, 0.0, 1.0)


def toy_samples(config: ToyTaskConfig) -> List[ToySample]:
    """Soft disks over flat-colour foregrounds composited onto smaller, upscaled backgrounds."""
    rng = np.random.default_rng(config.seed)
    size = config.size
    alphas = [_disk_alpha(rng, size) for _ in range(config.samples)]
    fgs = [np.clip(rng.uniform(0.5, 1.0, size=3) + rng.normal(0.0, 0.02, size=(size, size, 3)), 0, 1)
           for _ in range(config.samples)]
    bgs = [np.clip(rng.uniform(0.0, 0.4, size=3) + rng.normal(0.0, 0.02, size=(size // 2, size // 2, 3)), 0, 1)
           for _ in range(config.samples)]
    composites = synthesize_set(fgs, alphas, bgs, per_fg=1, seed=config.seed)
    samples = []
    for image, alpha, _ in composites:
        trimap = gt_trimap(alpha, erosion_px=2)
        softseg = inference_segmentation(trimap, px=2, sigma=1.0)
        inputs = np.concatenate([image.transpose(2, 0, 1), softseg[None, ..., 0]], axis=0)
        samples.append(ToySample(inputs=inputs, alpha=alpha, unknown=trimap == 1))
    return samples


def _he(rng, shape) -> np.ndarray:
    fan_in = int(np.prod(shape[1:]))
    return rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape)


class ToyNetwork:
    def __init__(self, config: ToyTaskConfig):
        h = config.hidden
        self.attention_config = AttentionConfig(d=h, c_a=h, e=max(1, h // 2), r=config.r, dropout_rate=0.0,
                                                seed=config.seed)
        rng = np.random.default_rng(config.seed + 1)
        self.params = ParameterStore()
        for name, shape in (("conv1", (h, 4, 3, 3)), ("conv2", (h, h, 3, 3)),
                            ("conv3", (h, h, 3, 3)), ("conv4", (2, h, 3, 3))):
            self.params.add(f"{name}.weight", Tensor(_he(rng, shape), name=f"{name}.weight"))
            self.params.add(f"{name}.bias", Tensor(np.zeros(shape[0]), name=f"{name}.bias"))
        attention = init_params(self.attention_config, seed=config.seed + 2)
        for name, tensor in attention.tensors().items():
            self.params.add(f"attention.{name}", tensor)
        self._attention = attention

    def _conv(self, x, name):
        return nx.conv2d(x, self.params[f"{name}.weight"], self.params[f"{name}.bias"], padding=1)

    def forward(self, sample: ToySample, mode: str = "train", step: int = 0):
        """Returns (coarse, refined) alpha predictions as [H, W] tensors."""
        image_feature = nx.relu(self._conv(Tensor(sample.inputs), "conv1"))
        alpha_feature = nx.relu(self._conv(image_feature, "conv2"))
        params = self._attention.replace(self.params.prefixed("attention."))
        attended, _ = attention_forward(image_feature, alpha_feature, sample.unknown, params,
                                        self.attention_config, mode=mode, step=step)
        x = nx.relu(self._conv(attended, "conv3"))
        out = self._conv(x, "conv4")
        height, width = sample.alpha.shape
        coarse = nx.reshape(nx.take(out, np.arange(height * width)), (height, width))
        residual = nx.reshape(nx.take(out, np.arange(height * width, 2 * height * width)), (height, width))
        return coarse, refine_alpha(coarse, residual)


def refine_alpha(coarse, residual, clamp: bool = False):
    """Refined alpha as coarse prediction plus predicted residual."""
    if clamp:
        return np.clip(np.asarray(coarse, dtype=np.float64) + np.asarray(residual, dtype=np.float64), 0.0, 1.0)
    return nx.add(coarse, residual)


def _batch_loss(network: ToyNetwork, samples: List[ToySample], hard_percent: float, step: int = 0):
    totals, reports = [], []
    for sample in samples:
        coarse, refined = network.forward(sample, step=step)
        total, report = composite_loss(coarse, refined, sample.alpha, None, hard_percent)
        totals.append(total)
        reports.append(report)
    count = len(samples)
    loss = nx.scale(nx.sum(nx.concat([nx.reshape(t, (1,)) for t in totals])), 1.0 / count)
    summary = {
        "l_alpha": sum(r.l_alpha for r in reports) / count,
        "l_hard": sum(r.l_hard for r in reports) / count,
        "total": loss.item(),
    }
    return loss, summary


def train_toy(config: ToyTaskConfig = None, seed: int = None, log_every: int = 0) -> List[dict]:
    """
    Optimize the toy network with Adam (beta1 = 0.5) under warmup + cosine decay.

    Returns one record per iteration (iteration, lr, l_alpha, l_hard, total),
    each measured before that iteration's update.
    """
    config = config or ToyTaskConfig()
    if seed is not None:
        config = config.model_copy(update={"seed": seed})
    if config.iterations == 0:
        return []
    schedule = LrSchedule(base_lr=config.base_lr, total_iters=max(2, config.iterations),
                          warmup_iters=config.warmup_iters)
    samples = toy_samples(config)
    network = ToyNetwork(config)
    state = AdamState()
    curve = []
    start = time.time()
    if log_every:
        print(f"[TrainToy] {network.params.num_parameters()} parameters, {config.iterations} iterations, seed {config.seed}")
    for iteration in range(config.iterations):
        lr = lr_at(iteration, schedule)
        try:
            with Tape() as tape:
                loss, summary = _batch_loss(network, samples, config.hard_percent, step=iteration)
            tape.backward(loss)
        except NonFiniteError as e:
            raise TrainingDivergedError(iteration, str(e)) from e
        if not math.isfinite(summary["total"]):
            raise TrainingDivergedError(iteration)
        curve.append({"iteration": iteration, "lr": lr, **summary})
        adam_step(network.params, state, lr)
        if log_every and (iteration + 1) % log_every == 0:
            print(f"[TrainToy] iter {iteration + 1}/{config.iterations} loss={summary['total']:.5f} lr={lr:.2e}")
    if log_every:
        print(f"✅ [TrainToy] done in {time.time() - start:.1f}s, loss {curve[0]['total']:.5f} -> {curve[-1]['total']:.5f}")
    return curve


def curve_frame(curve: List[dict]) -> pd.DataFrame:
    return pd.DataFrame(curve, columns=CURVE_COLUMNS)


def write_curve(path, curve: List[dict]):
    curve_frame(curve).to_csv(path, index=False)
    return path
