"""
Graph description files.

A graph file is a JSON object:

    {
      "name": "refinement",
      "inputs": {"coarse_alpha": [512, 512, 1]},
      "outputs": ["residual"],
      "layers": [
        {"id": "conv0", "kind": "conv", "inputs": ["coarse_alpha"],
         "out_channels": 1, "kernel": 3, "bias": true, "expect": [512, 512, 1]},
        ...
      ]
    }

Shapes are (height, width, channels). ``kind`` is either a primitive
(conv, deconv, pool, upsample, concat, add, attention, dropout, activation,
norm) or a block that expands into primitives (conv_unit, resblock,
resblock_down, resblock_up, resnet_layer, aspp). ``expect`` optionally pins
the inferred output shape of a layer.
"""
import json
import re
from typing import Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from matting.shared.errors import GraphSchemaError

PRIMITIVE_KINDS = ("conv", "deconv", "pool", "upsample", "concat", "add", "attention", "dropout", "activation", "norm")
BLOCK_KINDS = ("conv_unit", "resblock", "resblock_down", "resblock_up", "resnet_layer", "aspp")

Shape = Tuple[int, int, int]


class LayerSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    id: str = Field(min_length=1)
    kind: Literal[PRIMITIVE_KINDS + BLOCK_KINDS]
    inputs: List[str] = Field(default_factory=list)
    out_channels: Optional[int] = Field(default=None, ge=1)
    kernel: int = Field(default=1, ge=1)
    stride: int = Field(default=1, ge=1)
    padding: Optional[int] = Field(default=None, ge=0)
    dilation: int = Field(default=1, ge=1)
    bias: bool = False
    # pool: max | avg | global_avg; upsample: bilinear | nearest; activation: relu | leaky_relu
    mode: Optional[str] = None
    scale: int = Field(default=2, ge=1)
    rate: float = Field(default=0.0, ge=0.0, lt=1.0)
    # conv_unit post-ops, applied in this order after each conv
    norm: bool = False
    activation: Optional[Literal["relu", "leaky_relu"]] = None
    dropout: float = Field(default=0.0, ge=0.0, lt=1.0)
    pool: Optional[Literal["max", "avg"]] = None
    upsample: Optional[Literal["bilinear", "nearest"]] = None
    repeat: int = Field(default=1, ge=1)
    # resblocks and resnet_layer
    count: int = Field(default=1, ge=1)
    planes: Optional[int] = Field(default=None, ge=1)
    strides: Optional[List[int]] = None
    dilations: Optional[List[int]] = None
    # aspp
    rates: List[int] = Field(default_factory=lambda: [6, 12, 18])
    # attention
    e: Optional[int] = Field(default=None, ge=1)
    r: int = Field(default=4, ge=1)
    embed_kernel: Optional[int] = Field(default=None, ge=1)
    g_out: Optional[int] = Field(default=None, ge=1)
    bias_theta: bool = False
    bias_phi: bool = False
    bias_g: bool = False
    bias_w: bool = False

    expect: Optional[Shape] = None
    note: Optional[str] = None


class ModelGraph(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str
    description: Optional[str] = None
    inputs: Dict[str, Shape]
    outputs: List[str] = Field(default_factory=list)
    layers: List[LayerSpec]


_NEEDS_CHANNELS = {"conv", "deconv", "conv_unit", "resblock_down", "resblock_up", "aspp"}
_MODES = {
    "pool": ("max", "avg", "global_avg"),
    "upsample": ("bilinear", "nearest"),
    "activation": ("relu", "leaky_relu"),
}


def _layer_line(text: str, layer_id: str):
    if not text or not layer_id:
        return None
    match = re.search(r'"id"\s*:\s*"' + re.escape(layer_id) + '"', text)
    return text.count("\n", 0, match.start()) + 1 if match else None


def field_path(loc) -> str:
    path = ""
    for part in loc:
        path += f"[{part}]" if isinstance(part, int) else (f".{part}" if path else str(part))
    return path


def validate_graph(graph: ModelGraph, text: str = None) -> ModelGraph:
    """Reference and attribute checks beyond the field-level schema."""
    known = set(graph.inputs)
    for i, layer in enumerate(graph.layers):
        line = _layer_line(text, layer.id)

        def fail(message, field):
            raise GraphSchemaError(message, field=f"layers[{i}].{field}", line=line)

        if layer.id in known:
            fail(f"duplicate layer id {layer.id!r}", "id")
        if "/" in layer.id:
            fail(f"layer id {layer.id!r} must not contain '/'", "id")
        for ref in layer.inputs:
            if ref not in known:
                fail(f"layer {layer.id!r} references {ref!r}, which is not defined earlier", "inputs")
        if not layer.inputs:
            fail(f"layer {layer.id!r} has no inputs", "inputs")
        if layer.kind in _NEEDS_CHANNELS and layer.out_channels is None:
            fail(f"{layer.kind} layer {layer.id!r} needs out_channels", "out_channels")
        if layer.kind == "resnet_layer" and layer.planes is None:
            fail(f"resnet_layer {layer.id!r} needs planes", "planes")
        if layer.kind in _MODES and layer.mode not in _MODES[layer.kind]:
            fail(f"{layer.kind} layer {layer.id!r} mode must be one of {_MODES[layer.kind]}, got {layer.mode!r}", "mode")
        if layer.kind == "attention" and len(layer.inputs) != 2:
            fail(f"attention layer {layer.id!r} takes [image_feature, alpha_feature]", "inputs")
        for name in ("strides", "dilations"):
            values = getattr(layer, name)
            if values is not None and len(values) != layer.count:
                fail(f"{name} lists {len(values)} entries for {layer.count} blocks", name)
        known.add(layer.id)
    for j, out in enumerate(graph.outputs):
        if out not in known:
            raise GraphSchemaError(f"output {out!r} is not a layer or input", field=f"outputs[{j}]")
    return graph


def parse_graph(text: str) -> ModelGraph:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise GraphSchemaError(f"invalid JSON: {e.msg}", line=e.lineno) from e
    try:
        graph = ModelGraph.model_validate(raw)
    except ValidationError as e:
        first = e.errors()[0]
        loc = first["loc"]
        line = None
        if len(loc) >= 2 and loc[0] == "layers" and isinstance(loc[1], int):
            layers = raw.get("layers") if isinstance(raw, dict) else None
            if isinstance(layers, list) and loc[1] < len(layers) and isinstance(layers[loc[1]], dict):
                line = _layer_line(text, str(layers[loc[1]].get("id", "")))
        raise GraphSchemaError(first["msg"], field=field_path(loc), line=line) from e
    return validate_graph(graph, text)


def load_graph(path) -> ModelGraph:
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise GraphSchemaError(f"cannot read graph file {path}: {e}") from e
    try:
        return parse_graph(text)
    except GraphSchemaError as e:
        e.args = (f"{path}: {e}",)
        raise
