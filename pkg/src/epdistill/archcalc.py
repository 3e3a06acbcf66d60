"""Declarative layer-graph calculator: shapes, parameter counts, FLOPs, RF.

Rebuilds the published network family as a static layer list per named
configuration, good enough to reproduce the reported parameter counts and
compute costs without ever touching a tensor.  Head internals are a
best-effort reconstruction (the written description leaves kernel choices
open), so comparisons against the published resource table carry a wide band.

Note on units: ``estimate_flops`` counts 2 floating-point operations per
multiply-accumulate.  Cost tables produced with common profilers usually
report multiply-accumulates ("MACs") under the FLOPs name, i.e. half of this
convention; ``estimate_macs`` is provided for that comparison.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import BadDimensionError, BadInputSizeError

#: channel configuration per named model size: c1..c4, c_agg, c_det, allowed dims
_CONFIG_TABLE = {
    "T": (8, 8, 16, 24, 48, 8, (32, 48)),
    "S": (8, 8, 24, 32, 64, 8, (32, 48, 64)),
    "M": (8, 16, 32, 48, 96, 8, (32, 48, 64)),
    "L": (8, 16, 48, 64, 128, 8, (32, 48, 64)),
    "E": (16, 16, 48, 64, 128, 16, (32, 48, 64)),
}

GROUP_WIDTH = 16  # channels per group in the description head's group conv


@dataclass(frozen=True)
class ModelConfig:
    name: str
    c1: int
    c2: int
    c3: int
    c4: int
    c_agg: int
    c_det: int
    c_desc: int

    def __post_init__(self):
        if self.name not in _CONFIG_TABLE:
            raise BadDimensionError(f"unknown model size {self.name!r}")
        row = _CONFIG_TABLE[self.name]
        if (self.c1, self.c2, self.c3, self.c4, self.c_agg, self.c_det) != row[:6]:
            raise BadDimensionError(f"channels do not match the {self.name} row")
        if self.c_desc not in row[6]:
            raise BadDimensionError(
                f"descriptor dim {self.c_desc} not offered for size {self.name} "
                f"(allowed: {row[6]})"
            )

    @classmethod
    def named(cls, name: str, c_desc: int) -> "ModelConfig":
        """Look up a named configuration, e.g. ``named("T", 32)``."""
        if name not in _CONFIG_TABLE:
            raise BadDimensionError(f"unknown model size {name!r}")
        c1, c2, c3, c4, c_agg, c_det, _dims = _CONFIG_TABLE[name]
        return cls(name, c1, c2, c3, c4, c_agg, c_det, c_desc)


def all_configs() -> list[ModelConfig]:
    """All 14 published size/dimension combinations."""
    out = []
    for name, row in _CONFIG_TABLE.items():
        for dim in row[6]:
            out.append(ModelConfig.named(name, dim))
    return out


@dataclass(frozen=True)
class Layer:
    name: str
    kind: str  # conv | group-conv | norm | avg-pool | add | concat | upsample | resize | pixel-shuffle
    kernel: int = 1
    stride: int = 1
    in_ch: int = 0
    out_ch: int = 0
    groups: int = 1
    scale: int = 1  # output feature map is (H/scale, W/scale)
    on_rf_path: bool = False


@dataclass(frozen=True)
class LayerGraph:
    config: ModelConfig
    layers: tuple[Layer, ...]


def _res_block(name: str, c_in: int, c_out: int, scale: int) -> list[Layer]:
    """Two 3x3 convs with norms plus an identity/projected skip."""
    layers = [
        Layer(f"{name}.conv1", "conv", 3, 1, c_in, c_out, scale=scale, on_rf_path=True),
        Layer(f"{name}.norm1", "norm", out_ch=c_out, scale=scale),
        Layer(f"{name}.conv2", "conv", 3, 1, c_out, c_out, scale=scale, on_rf_path=True),
        Layer(f"{name}.norm2", "norm", out_ch=c_out, scale=scale),
    ]
    if c_in != c_out:
        layers += [
            Layer(f"{name}.proj", "conv", 1, 1, c_in, c_out, scale=scale),
            Layer(f"{name}.proj_norm", "norm", out_ch=c_out, scale=scale),
        ]
    layers.append(Layer(f"{name}.add", "add", in_ch=c_out, out_ch=c_out, scale=scale))
    return layers


def build_graph(config: ModelConfig) -> LayerGraph:
    """Assemble the encoder, detection head and description head layer list.

    Encoder: a strided 4x4 stem, a 3x3 conv, and residual blocks at the 1/2,
    1/8 and 1/32 scales with 4x4 average pooling between them.  Detection
    head: per-scale 1x1 reductions added together at 1/2, two 3x3 convs, and
    a 1x1 + pixel-shuffle back to full resolution.  Description head:
    pyramid features resized to 1/4, concatenated, then 1x1 -> grouped 3x3 ->
    1x1 down to the descriptor dimension.
    """
    c = config
    if c.c2 + c.c3 + c.c4 != c.c_agg:
        raise BadDimensionError(
            f"concat channels {c.c2}+{c.c3}+{c.c4} != c_agg {c.c_agg}"
        )
    if c.c_agg % GROUP_WIDTH != 0:
        raise BadDimensionError(f"c_agg {c.c_agg} not divisible by {GROUP_WIDTH}")

    layers: list[Layer] = [
        # encoder
        Layer("enc.stem", "conv", 4, 2, 1, c.c1, scale=2, on_rf_path=True),
        Layer("enc.stem_norm", "norm", out_ch=c.c1, scale=2),
        Layer("enc.conv", "conv", 3, 1, c.c1, c.c2, scale=2, on_rf_path=True),
        Layer("enc.conv_norm", "norm", out_ch=c.c2, scale=2),
        *_res_block("enc.block1", c.c2, c.c2, scale=2),
        Layer("enc.pool1", "avg-pool", 4, 4, c.c2, c.c2, scale=8, on_rf_path=True),
        *_res_block("enc.block2", c.c2, c.c3, scale=8),
        Layer("enc.pool2", "avg-pool", 4, 4, c.c3, c.c3, scale=32, on_rf_path=True),
        *_res_block("enc.block3", c.c3, c.c4, scale=32),
        # detection head at 1/2 scale
        Layer("det.reduce1", "conv", 1, 1, c.c2, c.c_det, scale=2),
        Layer("det.reduce1_norm", "norm", out_ch=c.c_det, scale=2),
        Layer("det.reduce2", "conv", 1, 1, c.c3, c.c_det, scale=8),
        Layer("det.reduce2_norm", "norm", out_ch=c.c_det, scale=8),
        Layer("det.up2", "upsample", in_ch=c.c_det, out_ch=c.c_det, scale=2),
        Layer("det.reduce3", "conv", 1, 1, c.c4, c.c_det, scale=32),
        Layer("det.reduce3_norm", "norm", out_ch=c.c_det, scale=32),
        Layer("det.up3", "upsample", in_ch=c.c_det, out_ch=c.c_det, scale=2),
        Layer("det.add", "add", in_ch=c.c_det, out_ch=c.c_det, scale=2),
        Layer("det.conv1", "conv", 3, 1, c.c_det, c.c_det, scale=2),
        Layer("det.conv1_norm", "norm", out_ch=c.c_det, scale=2),
        Layer("det.conv2", "conv", 3, 1, c.c_det, c.c_det, scale=2),
        Layer("det.conv2_norm", "norm", out_ch=c.c_det, scale=2),
        Layer("det.conv3", "conv", 1, 1, c.c_det, 4 * c.c_det, scale=2),
        Layer("det.shuffle", "pixel-shuffle", in_ch=4 * c.c_det, out_ch=c.c_det, scale=1),
        # description head at 1/4 scale
        Layer("desc.resize1", "resize", in_ch=c.c2, out_ch=c.c2, scale=4),
        Layer("desc.resize2", "upsample", in_ch=c.c3, out_ch=c.c3, scale=4),
        Layer("desc.resize3", "upsample", in_ch=c.c4, out_ch=c.c4, scale=4),
        Layer("desc.concat", "concat", in_ch=c.c2 + c.c3 + c.c4, out_ch=c.c_agg, scale=4),
        Layer("desc.conv1", "conv", 1, 1, c.c_agg, c.c_agg, scale=4),
        Layer("desc.conv1_norm", "norm", out_ch=c.c_agg, scale=4),
        Layer("desc.group", "group-conv", 3, 1, c.c_agg, c.c_agg,
              groups=c.c_agg // GROUP_WIDTH, scale=4),
        Layer("desc.group_norm", "norm", out_ch=c.c_agg, scale=4),
        Layer("desc.conv2", "conv", 1, 1, c.c_agg, c.c_desc, scale=4),
    ]
    return LayerGraph(config=c, layers=tuple(layers))


def layer_params(layer: Layer) -> int:
    if layer.kind in ("conv", "group-conv"):
        return layer.kernel ** 2 * layer.in_ch * layer.out_ch // layer.groups + layer.out_ch
    if layer.kind == "norm":
        return 2 * layer.out_ch
    return 0


def count_params(graph: LayerGraph) -> int:
    """Total learnable parameters: conv weights+bias plus 2 per norm channel."""
    return sum(layer_params(layer) for layer in graph.layers)


def layer_flops(layer: Layer, height: int, width: int) -> int:
    if layer.kind not in ("conv", "group-conv"):
        return 0
    h_out = height // layer.scale
    w_out = width // layer.scale
    return 2 * layer.kernel ** 2 * (layer.in_ch // layer.groups) * layer.out_ch * h_out * w_out


def estimate_flops(graph: LayerGraph, height: int, width: int) -> int:
    """Convolution FLOPs at the given input size (2 ops per multiply-add)."""
    if height % 32 or width % 32 or height < 32 or width < 32:
        raise BadInputSizeError(
            f"input size must be a positive multiple of 32, got {height}x{width}"
        )
    return sum(layer_flops(layer, height, width) for layer in graph.layers)


def estimate_macs(graph: LayerGraph, height: int, width: int) -> int:
    """Multiply-accumulate count, the unit most published cost tables use."""
    return estimate_flops(graph, height, width) // 2


def receptive_field(graph: LayerGraph) -> int:
    """Receptive field along the deepest encoder path.

    Standard recursion over (kernel, stride) pairs: r += (k - 1) * jump,
    jump *= stride.
    """
    rf = 1
    jump = 1
    for layer in graph.layers:
        if not layer.on_rf_path:
            continue
        rf += (layer.kernel - 1) * jump
        jump *= layer.stride
    return rf


def summarize(graph: LayerGraph, height: int, width: int) -> list[tuple[str, str, str, int, int]]:
    """Per-layer rows (name, kind, output shape, params, flops) for display."""
    rows = []
    for layer in graph.layers:
        shape = f"{layer.out_ch}x{height // layer.scale}x{width // layer.scale}"
        rows.append(
            (layer.name, layer.kind, shape, layer_params(layer), layer_flops(layer, height, width))
        )
    return rows
