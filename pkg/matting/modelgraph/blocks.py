"""Expansion of block layers into primitive layers."""
from typing import List

from matting.modelgraph.schema import BLOCK_KINDS, LayerSpec

BOTTLENECK_EXPANSION = 4


class _Builder:
    """Collects primitives for one block; the last primitive takes the block id."""

    def __init__(self, block: LayerSpec):
        self.block = block
        self.layers: List[LayerSpec] = []

    def add(self, name: str, kind: str, inputs, **attrs) -> str:
        layer_id = f"{self.block.id}/{name}"
        self.layers.append(LayerSpec(id=layer_id, kind=kind, inputs=list(inputs), **attrs))
        return layer_id

    def finish(self) -> List[LayerSpec]:
        last = self.layers[-1]
        self.layers[-1] = last.model_copy(update={"id": self.block.id, "expect": self.block.expect})
        return self.layers


def _conv_unit(b: _Builder, src: str, block: LayerSpec) -> str:
    for i in range(block.repeat):
        tag = f"{i + 1}" if block.repeat > 1 else ""
        src = b.add(f"conv{tag}", "conv", [src], out_channels=block.out_channels, kernel=block.kernel,
                    stride=block.stride if i == 0 else 1, padding=block.padding, dilation=block.dilation,
                    bias=block.bias)
        if block.norm:
            src = b.add(f"norm{tag}", "norm", [src])
        if block.activation:
            src = b.add(f"act{tag}", "activation", [src], mode=block.activation)
        if block.dropout:
            src = b.add(f"dropout{tag}", "dropout", [src], rate=block.dropout)
    if block.pool:
        src = b.add("pool", "pool", [src], mode=block.pool, kernel=2, stride=2)
    if block.upsample:
        src = b.add("upsample", "upsample", [src], mode=block.upsample, scale=2)
    return src


def _resblock(b: _Builder, src: str, channels: int, activation: str, tag: str) -> str:
    x = b.add(f"{tag}conv1", "conv", [src], out_channels=channels, kernel=3)
    x = b.add(f"{tag}norm1", "norm", [x])
    x = b.add(f"{tag}act1", "activation", [x], mode=activation)
    x = b.add(f"{tag}conv2", "conv", [x], out_channels=channels, kernel=3)
    x = b.add(f"{tag}norm2", "norm", [x])
    x = b.add(f"{tag}sum", "add", [src, x])
    return b.add(f"{tag}act2", "activation", [x], mode=activation)


def _channels_of(block: LayerSpec, default):
    return block.out_channels or default


def _resblocks(b: _Builder, src: str, block: LayerSpec, in_channels: int) -> str:
    activation = block.activation or "relu"
    channels = _channels_of(block, in_channels)
    for i in range(block.count):
        src = _resblock(b, src, channels, activation, f"block{i + 1}/" if block.count > 1 else "")
    return src


def _resblock_down(b: _Builder, src: str, block: LayerSpec, in_channels: int) -> str:
    activation = block.activation or "relu"
    x = b.add("conv1", "conv", [src], out_channels=block.out_channels, kernel=3, stride=2)
    x = b.add("norm1", "norm", [x])
    x = b.add("act1", "activation", [x], mode=activation)
    x = b.add("conv2", "conv", [x], out_channels=block.out_channels, kernel=3)
    x = b.add("norm2", "norm", [x])
    shortcut = b.add("shortcut_pool", "pool", [src], mode="avg", kernel=2, stride=2)
    if in_channels != block.out_channels:
        shortcut = b.add("shortcut_conv", "conv", [shortcut], out_channels=block.out_channels, kernel=1)
    x = b.add("sum", "add", [shortcut, x])
    return b.add("act2", "activation", [x], mode=activation)


def _resblock_up(b: _Builder, src: str, block: LayerSpec, in_channels: int) -> str:
    activation = block.activation or "leaky_relu"
    x = b.add("deconv1", "deconv", [src], out_channels=block.out_channels, kernel=4, stride=2)
    x = b.add("norm1", "norm", [x])
    x = b.add("act1", "activation", [x], mode=activation)
    x = b.add("conv2", "conv", [x], out_channels=block.out_channels, kernel=3)
    x = b.add("norm2", "norm", [x])
    shortcut = b.add("shortcut_upsample", "upsample", [src], mode="nearest", scale=2)
    if in_channels != block.out_channels:
        shortcut = b.add("shortcut_conv", "conv", [shortcut], out_channels=block.out_channels, kernel=1)
    x = b.add("sum", "add", [shortcut, x])
    return b.add("act2", "activation", [x], mode=activation)


def _resnet_layer(b: _Builder, src: str, block: LayerSpec, in_channels: int) -> str:
    """Bottleneck stack; stride and dilation sit on the 3x3 conv of each bottleneck."""
    planes = block.planes
    out_channels = planes * BOTTLENECK_EXPANSION
    strides = block.strides or [1] * block.count
    dilations = block.dilations or [1] * block.count
    channels = in_channels
    for i, (stride, dilation) in enumerate(zip(strides, dilations)):
        tag = f"block{i + 1}/"
        x = b.add(f"{tag}conv1", "conv", [src], out_channels=planes, kernel=1)
        x = b.add(f"{tag}norm1", "norm", [x])
        x = b.add(f"{tag}act1", "activation", [x], mode="relu")
        x = b.add(f"{tag}conv2", "conv", [x], out_channels=planes, kernel=3, stride=stride, dilation=dilation)
        x = b.add(f"{tag}norm2", "norm", [x])
        x = b.add(f"{tag}act2", "activation", [x], mode="relu")
        x = b.add(f"{tag}conv3", "conv", [x], out_channels=out_channels, kernel=1)
        x = b.add(f"{tag}norm3", "norm", [x])
        shortcut = src
        if stride != 1 or channels != out_channels:
            shortcut = b.add(f"{tag}shortcut_conv", "conv", [src], out_channels=out_channels, kernel=1, stride=stride)
            shortcut = b.add(f"{tag}shortcut_norm", "norm", [shortcut])
        x = b.add(f"{tag}sum", "add", [shortcut, x])
        src = b.add(f"{tag}act3", "activation", [x], mode="relu")
        channels = out_channels
    return src


def _aspp(b: _Builder, src: str, block: LayerSpec) -> str:
    """1x1 branch, three dilated 3x3 branches and an image-pooling branch, fused by a 1x1 conv."""
    channels = block.out_channels
    rate = max(1, block.dilation)
    branches = []

    def branch(name, kernel, dilation, source):
        x = b.add(f"{name}/conv", "conv", [source], out_channels=channels, kernel=kernel, dilation=dilation)
        x = b.add(f"{name}/norm", "norm", [x])
        return b.add(f"{name}/act", "activation", [x], mode="relu")

    branches.append(branch("branch1x1", 1, 1, src))
    for r in block.rates:
        branches.append(branch(f"branch_rate{r * rate}", 3, r * rate, src))
    pooled = b.add("image_pool", "pool", [src], mode="global_avg")
    pooled = branch("image_pool_proj", 1, 1, pooled)
    branches.append(b.add("image_pool_upsample", "upsample", [pooled, src], mode="bilinear"))
    x = b.add("concat", "concat", branches)
    x = branch("project", 1, 1, x)
    return b.add("dropout", "dropout", [x], rate=block.dropout)


def expand_layer(block: LayerSpec, in_channels: int) -> List[LayerSpec]:
    """Primitive layers of ``block``; ``in_channels`` is the channel count of its first input."""
    if block.kind not in BLOCK_KINDS:
        return [block]
    b = _Builder(block)
    src = block.inputs[0]
    if block.kind == "conv_unit":
        _conv_unit(b, src, block)
    elif block.kind == "resblock":
        _resblocks(b, src, block, in_channels)
    elif block.kind == "resblock_down":
        _resblock_down(b, src, block, in_channels)
    elif block.kind == "resblock_up":
        _resblock_up(b, src, block, in_channels)
    elif block.kind == "resnet_layer":
        _resnet_layer(b, src, block, in_channels)
    else:
        _aspp(b, src, block)
    return b.finish()
