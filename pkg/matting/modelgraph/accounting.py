"""
Shape inference plus parameter and multiply-accumulate accounting.

Conventions: conv parameters are kh*kw*C_in*C_out (+C_out with bias), norm
layers carry 2*C (scale and shift), deconv MACs are counted per input pixel
(kh*kw*C_in*C_out*H_in*W_in). Attention layers sum their four convolutions
and the query-key and attention-value matrix products.
"""
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional

import pandas as pd

from matting.modelgraph.blocks import expand_layer
from matting.modelgraph.schema import LayerSpec, ModelGraph
from matting.numerics import conv_output_extent
from matting.shared.errors import ShapeError

GIGA = 1e-9
ATTENTION_COMPONENTS = ("theta", "phi", "g", "w", "qk", "av")


@dataclass
class LayerCost:
    id: str
    kind: str
    block: str
    output_shape: tuple
    params: int
    macs: int


@dataclass
class AccountingReport:
    graph: str
    total_params: int
    total_macs: int
    per_layer: List[LayerCost] = field(default_factory=list)

    @property
    def gflops_macs(self) -> float:
        return self.total_macs * GIGA

    @property
    def gflops_2macs(self) -> float:
        return 2 * self.total_macs * GIGA

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(c) for c in self.per_layer])

    def block_totals(self) -> Dict[str, dict]:
        totals = {}
        for cost in self.per_layer:
            entry = totals.setdefault(cost.block, {"params": 0, "macs": 0})
            entry["params"] += cost.params
            entry["macs"] += cost.macs
        return totals

    def to_dict(self):
        return {
            "graph": self.graph,
            "total_params": self.total_params,
            "total_macs": self.total_macs,
            "gflops_macs": self.gflops_macs,
            "gflops_2macs": self.gflops_2macs,
            "blocks": self.block_totals(),
        }


def attention_costs(d: int, c_a: int, height: int, width: int, e: int, r: int, kernel: int, g_out: int,
                    bias_theta=False, bias_phi=False, bias_g=False, bias_w=False) -> Dict[str, tuple]:
    """(params, MACs) of each attention component at an H x W feature."""
    if height % r or width % r:
        raise ShapeError(f"attention feature {height}x{width} is not divisible by r={r}")
    queries = height * width
    keys = (height // r) * (width // r)
    return {
        "theta": (d * e + (e if bias_theta else 0), d * e * queries),
        "phi": (kernel * kernel * d * e + (e if bias_phi else 0), kernel * kernel * d * e * keys),
        "g": (kernel * kernel * c_a * g_out + (g_out if bias_g else 0), kernel * kernel * c_a * g_out * keys),
        "w": (g_out * c_a + (c_a if bias_w else 0), g_out * c_a * queries),
        "qk": (0, queries * e * keys),
        "av": (0, queries * keys * g_out),
    }


def expand(graph: ModelGraph, input_shapes: Optional[dict] = None):
    """Primitive layers in execution order, with the shape of every tensor."""
    shapes = {name: tuple(shape) for name, shape in graph.inputs.items()}
    if input_shapes:
        for name, shape in input_shapes.items():
            if name not in shapes:
                raise ShapeError(f"graph {graph.name!r} has no input named {name!r}")
            shapes[name] = tuple(shape)
    primitives = []
    for block in graph.layers:
        for layer in expand_layer(block, shapes[block.inputs[0]][2]):
            shapes[layer.id] = _infer(layer, [shapes[i] for i in layer.inputs])
            primitives.append((block.id, layer))
    return primitives, shapes


def infer_shapes(graph: ModelGraph, input_shapes: Optional[dict] = None) -> Dict[str, tuple]:
    return expand(graph, input_shapes)[1]


def _positive(layer: LayerSpec, height: int, width: int, channels: int):
    if height < 1 or width < 1:
        raise ShapeError(f"layer {layer.id!r}: output extent {height}x{width} is not positive")
    return (height, width, channels)


def _conv_padding(layer: LayerSpec) -> int:
    if layer.padding is not None:
        return layer.padding
    return layer.dilation * (layer.kernel - 1) // 2


def _infer(layer: LayerSpec, ins: List[tuple]) -> tuple:
    kind = layer.kind
    if kind in ("conv", "deconv", "pool", "dropout", "activation", "norm") and len(ins) != 1:
        raise ShapeError(f"layer {layer.id!r}: {kind} takes exactly one input, got {len(ins)}")
    h, w, c = ins[0]
    if kind == "conv":
        p = _conv_padding(layer)
        return _positive(layer, conv_output_extent(h, layer.kernel, layer.stride, p, layer.dilation),
                         conv_output_extent(w, layer.kernel, layer.stride, p, layer.dilation), layer.out_channels)
    if kind == "deconv":
        p = layer.padding if layer.padding is not None else max(0, (layer.kernel - layer.stride) // 2)
        return _positive(layer, (h - 1) * layer.stride - 2 * p + layer.kernel,
                         (w - 1) * layer.stride - 2 * p + layer.kernel, layer.out_channels)
    if kind == "pool":
        if layer.mode == "global_avg":
            return (1, 1, c)
        p = layer.padding or 0
        return _positive(layer, conv_output_extent(h, layer.kernel, layer.stride, p),
                         conv_output_extent(w, layer.kernel, layer.stride, p), c)
    if kind == "upsample":
        if len(ins) == 2:
            return (ins[1][0], ins[1][1], c)
        if len(ins) != 1:
            raise ShapeError(f"layer {layer.id!r}: upsample takes a source and an optional size reference")
        return (h * layer.scale, w * layer.scale, c)
    if kind == "concat":
        for other in ins[1:]:
            if other[:2] != (h, w):
                raise ShapeError(f"layer {layer.id!r}: concat extents differ: {ins[0]} vs {other}")
        return (h, w, sum(s[2] for s in ins))
    if kind == "add":
        for other in ins[1:]:
            if other != ins[0]:
                raise ShapeError(f"layer {layer.id!r}: add needs equal shapes, got {ins[0]} and {other}")
        return ins[0]
    if kind == "attention":
        image, alpha = ins
        if image[:2] != alpha[:2]:
            raise ShapeError(f"layer {layer.id!r}: image feature {image} and alpha feature {alpha} differ in extent")
        if image[0] % layer.r or image[1] % layer.r:
            raise ShapeError(f"layer {layer.id!r}: extent {image[:2]} is not divisible by r={layer.r}")
        return alpha
    return ins[0]


def layer_cost(layer: LayerSpec, ins: List[tuple], out: tuple) -> tuple:
    """(params, MACs) of one primitive layer."""
    kind = layer.kind
    if kind in ("conv", "deconv"):
        c_in = ins[0][2]
        params = layer.kernel * layer.kernel * c_in * layer.out_channels + (layer.out_channels if layer.bias else 0)
        pixels = out[0] * out[1] if kind == "conv" else ins[0][0] * ins[0][1]
        return params, layer.kernel * layer.kernel * c_in * layer.out_channels * pixels
    if kind == "norm":
        return 2 * ins[0][2], 0
    if kind == "attention":
        costs = attention_costs(**attention_settings(layer, ins[0], ins[1]))
        return sum(p for p, _ in costs.values()), sum(m for _, m in costs.values())
    return 0, 0


def attention_settings(layer: LayerSpec, image: tuple, alpha: tuple) -> dict:
    d, c_a = image[2], alpha[2]
    return {
        "d": d,
        "c_a": c_a,
        "height": image[0],
        "width": image[1],
        "e": layer.e or max(1, d // 2),
        "r": layer.r,
        "kernel": layer.embed_kernel or layer.r,
        "g_out": layer.g_out or c_a,
        "bias_theta": layer.bias_theta,
        "bias_phi": layer.bias_phi,
        "bias_g": layer.bias_g,
        "bias_w": layer.bias_w,
    }


def account(graph: ModelGraph, input_shapes: Optional[dict] = None) -> AccountingReport:
    primitives, shapes = expand(graph, input_shapes)
    per_layer = []
    for block_id, layer in primitives:
        params, macs = layer_cost(layer, [shapes[i] for i in layer.inputs], shapes[layer.id])
        per_layer.append(LayerCost(layer.id, layer.kind, block_id, shapes[layer.id], int(params), int(macs)))
    return AccountingReport(
        graph=graph.name,
        total_params=sum(c.params for c in per_layer),
        total_macs=sum(c.macs for c in per_layer),
        per_layer=per_layer,
    )


def count_params(graph: ModelGraph, input_shapes: Optional[dict] = None) -> AccountingReport:
    return account(graph, input_shapes)


def count_flops(graph: ModelGraph, input_shapes: Optional[dict] = None) -> AccountingReport:
    return account(graph, input_shapes)


def check_expectations(graph: ModelGraph, shapes: Dict[str, tuple]) -> List[dict]:
    """Layers whose inferred shape differs from their ``expect`` entry."""
    mismatches = []
    for layer in graph.layers:
        if layer.expect is not None and tuple(layer.expect) != shapes[layer.id]:
            mismatches.append({"id": layer.id, "expected": tuple(layer.expect), "inferred": shapes[layer.id]})
    return mismatches
