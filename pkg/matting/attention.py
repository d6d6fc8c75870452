"""
Non-local attention guided by image features, with unknown/known region weighting.

Queries come from the full-resolution image feature, keys from a strided
(downscaled by ``r``) image feature and values from the strided alpha feature.
The aggregated context is projected by ``W`` and added back onto the alpha
feature, so a zero ``W`` leaves the alpha feature untouched.
"""
from dataclasses import dataclass, field
import math
from typing import Dict, Literal, Optional

import numpy as np
from pydantic import BaseModel, Field, model_validator

from matting import numerics as nx
from matting.numerics import Tensor
from matting.shared.errors import ShapeError
from matting.shared.utils import derive_seed

WEIGHT_MIN, WEIGHT_MAX = 0.1, 10.0


class AttentionConfig(BaseModel):
    d: int = Field(ge=1, description="channels of the image feature")
    c_a: int = Field(ge=1, description="channels of the alpha feature")
    e: Optional[int] = Field(default=None, ge=1, description="embedding width of theta and phi; defaults to d // 2")
    r: int = Field(default=4, ge=1)
    kernel: Optional[int] = Field(default=None, ge=1, description="kernel of the strided convs; defaults to r")
    g_out: Optional[int] = Field(default=None, ge=1, description="output channels of g; defaults to c_a")
    dropout_rate: float = Field(default=0.1, ge=0.0, lt=1.0)
    dropout_placement: Literal["pre_w", "post_w"] = "pre_w"
    bias_theta: bool = False
    bias_phi: bool = False
    bias_g: bool = False
    bias_w: bool = False
    seed: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def _fill_defaults(self):
        if self.e is None:
            self.e = max(1, self.d // 2)
        if self.kernel is None:
            self.kernel = self.r
        if self.g_out is None:
            self.g_out = self.c_a
        if self.kernel > self.r:
            raise ValueError(f"kernel {self.kernel} larger than the downscale ratio {self.r} overlaps windows")
        return self

    @property
    def scale(self) -> float:
        return math.sqrt(self.d / 2.0)

    def weight_shapes(self) -> Dict[str, tuple]:
        k = self.kernel
        shapes = {
            "theta": (self.e, self.d, 1, 1),
            "phi": (self.e, self.d, k, k),
            "g": (self.g_out, self.c_a, k, k),
            "w": (self.c_a, self.g_out, 1, 1),
        }
        biases = {
            "theta_bias": (self.bias_theta, self.e),
            "phi_bias": (self.bias_phi, self.e),
            "g_bias": (self.bias_g, self.g_out),
            "w_bias": (self.bias_w, self.c_a),
        }
        for name, (enabled, channels) in biases.items():
            if enabled:
                shapes[name] = (channels,)
        return shapes


@dataclass
class AttentionParams:
    theta: Tensor
    phi: Tensor
    g: Tensor
    w: Tensor
    biases: Dict[str, Tensor] = field(default_factory=dict)

    def tensors(self) -> Dict[str, Tensor]:
        return {"theta": self.theta, "phi": self.phi, "g": self.g, "w": self.w, **self.biases}

    def replace(self, tensors: Dict[str, Tensor]) -> "AttentionParams":
        merged = {**self.tensors(), **tensors}
        biases = {k: v for k, v in merged.items() if k.endswith("_bias")}
        return AttentionParams(merged["theta"], merged["phi"], merged["g"], merged["w"], biases)

    def num_parameters(self) -> int:
        return int(sum(t.size for t in self.tensors().values()))

    def check(self, config: AttentionConfig):
        expected = config.weight_shapes()
        actual = {k: tuple(v.shape) for k, v in self.tensors().items()}
        if actual != expected:
            raise ShapeError(f"attention parameter shapes {actual} do not match config {expected}")


def init_params(config: AttentionConfig, seed: int = 0, requires_grad: bool = False) -> AttentionParams:
    """He-normal embeddings, zero output projection and zero biases."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in config.weight_shapes().items():
        if name == "w" or name.endswith("_bias"):
            values = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[1:]))
            values = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape)
        tensors[name] = Tensor(values, requires_grad=requires_grad, name=name)
    biases = {k: v for k, v in tensors.items() if k.endswith("_bias")}
    return AttentionParams(tensors["theta"], tensors["phi"], tensors["g"], tensors["w"], biases)


def region_weight(u_count: int, k_count: int, membership: str) -> float:
    """Clipped square-root size ratio; counts below 1 are treated as 1."""
    u, k = max(1, int(u_count)), max(1, int(k_count))
    if membership in ("U", "unknown"):
        ratio = math.sqrt(u / k)
    elif membership in ("K", "known"):
        ratio = math.sqrt(k / u)
    else:
        raise ValueError(f"membership must be 'U' or 'K', got {membership!r}")
    return min(max(ratio, WEIGHT_MIN), WEIGHT_MAX)


def downsample_mask(mask, r: int) -> np.ndarray:
    """An r x r block is unknown iff at least half of its pixels are."""
    mask = np.asarray(mask, dtype=bool)
    height, width = mask.shape
    if r < 1 or height % r or width % r:
        raise ShapeError(f"mask extents {height}x{width} are not divisible by r={r}")
    counts = mask.reshape(height // r, r, width // r, r).sum(axis=(1, 3))
    return 2 * counts >= r * r


def query_weights(unknown, r: int):
    """
    Per-query logit multipliers for a full-resolution unknown mask.

    Returns (weights over H*W queries, w for unknown queries, w for known queries).
    Region sizes are counted at the downscaled key resolution; when either
    region is empty every query gets weight 1.
    """
    unknown = np.asarray(unknown, dtype=bool)
    small = downsample_mask(unknown, r)
    u_count = int(small.sum())
    k_count = int(small.size - u_count)
    if u_count == 0 or k_count == 0:
        w_unknown = w_known = 1.0
    else:
        w_unknown = region_weight(u_count, k_count, "U")
        w_known = region_weight(u_count, k_count, "K")
    weights = np.where(unknown.reshape(-1), w_unknown, w_known)
    return weights, w_unknown, w_known


def attention_forward(image_feature, alpha_feature, unknown, params: AttentionParams, config: AttentionConfig,
                      mode: str = "eval", step: int = 0):
    """
    Returns (A', attn) with A' shaped like the alpha feature and attn of shape
    (H*W, (H/r)*(W/r)) holding one softmax row per query pixel.

    Train-mode dropout draws its mask from (config.seed, step).
    """
    image_feature = nx.as_tensor(image_feature)
    alpha_feature = nx.as_tensor(alpha_feature)
    if image_feature.data.ndim != 3 or alpha_feature.data.ndim != 3:
        raise ShapeError("attention expects [C, H, W] image and alpha features")
    d, height, width = image_feature.shape
    c_a = alpha_feature.shape[0]
    if (d, c_a) != (config.d, config.c_a):
        raise ShapeError(f"feature channels ({d}, {c_a}) do not match config ({config.d}, {config.c_a})")
    if alpha_feature.shape[1:] != (height, width):
        raise ShapeError(f"alpha feature extent {alpha_feature.shape[1:]} differs from image feature {(height, width)}")
    if np.shape(unknown) != (height, width):
        raise ShapeError(f"unknown mask extent {np.shape(unknown)} differs from feature extent {(height, width)}")
    r = config.r
    if height % r or width % r:
        raise ShapeError(f"feature extent {height}x{width} is not divisible by r={r}")
    params.check(config)
    b = params.biases

    queries = nx.conv2d(image_feature, params.theta, b.get("theta_bias"))
    keys = nx.conv2d(image_feature, params.phi, b.get("phi_bias"), stride=r)
    values = nx.conv2d(alpha_feature, params.g, b.get("g_bias"), stride=r)
    n_keys = keys.shape[1] * keys.shape[2]

    q = nx.transpose(nx.reshape(queries, (config.e, height * width)))
    k = nx.reshape(keys, (config.e, n_keys))
    v = nx.transpose(nx.reshape(values, (config.g_out, n_keys)))

    weights, _, _ = query_weights(unknown, r)
    logits = nx.mul(nx.matmul(q, k), (weights / config.scale)[:, None])
    attn = nx.row_softmax(logits)
    context = nx.reshape(nx.transpose(nx.matmul(attn, v)), (config.g_out, height, width))

    dropout_seed = derive_seed(config.seed, step)
    if config.dropout_placement == "pre_w":
        context = nx.dropout(context, config.dropout_rate, mode=mode, seed=dropout_seed)
    out = nx.conv2d(context, params.w, b.get("w_bias"))
    if config.dropout_placement == "post_w":
        out = nx.dropout(out, config.dropout_rate, mode=mode, seed=dropout_seed)
    return nx.add(alpha_feature, out), attn


def attention_map(attn, query: int, key_shape) -> np.ndarray:
    """One attention row as an 8-bit map over the key grid, scaled so its maximum is 255."""
    data = attn.data if isinstance(attn, Tensor) else np.asarray(attn, dtype=np.float64)
    if not 0 <= query < data.shape[0]:
        raise ShapeError(f"query {query} outside 0..{data.shape[0] - 1}")
    row = data[query].reshape(key_shape)
    peak = row.max()
    scaled = row / peak if peak > 0 else np.zeros_like(row)
    return np.clip(np.round(scaled * 255.0), 0, 255).astype(np.uint8)
