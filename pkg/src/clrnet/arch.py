"""Declarative CNN descriptions and the built-in presets.

An :class:`ArchSpec` is an ordered list of layer specs. Parameters are
named by *layer path*: top-level layers are ``layers.<i>``; the convs of a
residual block are ``layers.<i>.convs.<j>`` and its projection shortcut is
``layers.<i>.shortcut``; the classifier is ``head``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Optional, Union

from .errors import SpecError


@dataclass(frozen=True)
class Conv:
    out_ch: int
    k: int
    stride: int = 1
    pad: Optional[int] = None
    has_norm: bool = True
    has_relu: bool = True

    def __post_init__(self):
        if self.pad is None:
            object.__setattr__(self, "pad", self.k // 2)

    @property
    def padding(self) -> int:
        return self.k // 2 if self.pad is None else self.pad

    @property
    def has_bias(self) -> bool:
        # a following norm layer makes a conv bias redundant
        return not self.has_norm


@dataclass(frozen=True)
class MaxPool:
    k: int
    stride: Optional[int] = None
    pad: int = 0

    def __post_init__(self):
        if self.stride is None:
            object.__setattr__(self, "stride", self.k)


@dataclass(frozen=True)
class ResidualBlock:
    convs: tuple
    shortcut: Optional[Conv] = None  # None means identity
    out_relu: bool = True


@dataclass(frozen=True)
class GlobalAvgPool:
    pass


@dataclass(frozen=True)
class Head:
    num_classes: int


LayerSpec = Union[Conv, MaxPool, ResidualBlock, GlobalAvgPool, Head]


@dataclass(frozen=True)
class ConvSite:
    """One conv of the network with the geometry needed for accounting."""

    path: str
    spec: Conv
    in_ch: int
    in_hw: tuple
    out_hw: tuple


@dataclass(frozen=True)
class ArchSpec:
    name: str
    layers: tuple
    input_shape: tuple

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        self.validate()

    # --- validation / traversal -------------------------------------------------
    def validate(self):
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise SpecError(f"{self.name}: input_shape must be (channels, h, w), got {self.input_shape}")
        heads = [i for i, l in enumerate(self.layers) if isinstance(l, Head)]
        if len(heads) != 1 or heads[0] != len(self.layers) - 1:
            raise SpecError(f"{self.name}: exactly one Head is required and it must be last")
        if not any(isinstance(l, GlobalAvgPool) for l in self.layers):
            raise SpecError(f"{self.name}: a GlobalAvgPool must precede the Head")
        self.conv_sites()

    def conv_sites(self) -> list:
        """Walk the network, checking the channel chain; return every conv in order."""
        c, h, w = self.input_shape
        pooled = False
        sites: list[ConvSite] = []

        def conv_site(path, spec, c_in, hw):
            if not isinstance(spec, Conv):
                raise SpecError(f"{path}: expected a Conv spec, got {type(spec).__name__}")
            if spec.out_ch < 1 or spec.k < 1 or spec.stride < 1 or spec.padding < 0:
                raise SpecError(f"{path}: invalid conv geometry {spec}")
            out_hw = tuple(_floor_out(v, spec.k, spec.stride, spec.padding, path) for v in hw)
            sites.append(ConvSite(path, spec, c_in, hw, out_hw))
            return spec.out_ch, out_hw

        for i, layer in enumerate(self.layers):
            path = f"layers.{i}"
            if isinstance(layer, Head):
                if not pooled:
                    raise SpecError(f"{self.name}: Head before GlobalAvgPool")
                if layer.num_classes < 1:
                    raise SpecError("Head needs at least one class")
                continue
            if pooled:
                raise SpecError(f"{path}: only the Head may follow GlobalAvgPool")
            if isinstance(layer, Conv):
                c, (h, w) = conv_site(path, layer, c, (h, w))
            elif isinstance(layer, MaxPool):
                stride = layer.stride or layer.k
                h = _floor_out(h, layer.k, stride, layer.pad, path)
                w = _floor_out(w, layer.k, stride, layer.pad, path)
            elif isinstance(layer, ResidualBlock):
                if not layer.convs:
                    raise SpecError(f"{path}: residual block without convs")
                c_in, hw_in = c, (h, w)
                cc, hw = c, (h, w)
                for j, conv in enumerate(layer.convs):
                    cc, hw = conv_site(f"{path}.convs.{j}", conv, cc, hw)
                if layer.shortcut is None:
                    sc, shw = c_in, hw_in
                else:
                    sc, shw = conv_site(f"{path}.shortcut", layer.shortcut, c_in, hw_in)
                if sc != cc or shw != hw:
                    raise SpecError(
                        f"{path}: residual branch gives {cc}x{hw}, shortcut gives {sc}x{shw}"
                    )
                c, (h, w) = cc, hw
            elif isinstance(layer, GlobalAvgPool):
                pooled = True
            else:
                raise SpecError(f"{path}: unknown layer kind {type(layer).__name__}")
        return sites

    @property
    def head(self) -> Head:
        return self.layers[-1]

    @property
    def feature_dim(self) -> int:
        c = self.input_shape[0]
        for layer in self.layers:
            if isinstance(layer, Conv):
                c = layer.out_ch
            elif isinstance(layer, ResidualBlock):
                c = layer.convs[-1].out_ch
        return c

    def with_head(self, num_classes: int) -> "ArchSpec":
        return ArchSpec(self.name, self.layers[:-1] + (Head(num_classes),), self.input_shape)

    # --- serialization --------------------------------------------------------------
    def to_dict(self) -> dict:
        return {"name": self.name, "input_shape": list(self.input_shape),
                "layers": [_layer_to_dict(l) for l in self.layers]}

    @classmethod
    def from_dict(cls, d: dict) -> "ArchSpec":
        try:
            return cls(d["name"], tuple(_layer_from_dict(l) for l in d["layers"]), tuple(d["input_shape"]))
        except (KeyError, TypeError) as exc:
            raise SpecError(f"malformed architecture description: {exc}") from exc

    def fingerprint(self) -> str:
        """Digest of the feature extractor (the head's class count is excluded)."""
        body = self.to_dict()
        body["layers"] = body["layers"][:-1]
        blob = json.dumps(body, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _floor_out(size, k, stride, pad, path):
    span = size + 2 * pad - k
    if span < 0:
        raise SpecError(f"{path}: kernel {k} does not fit spatial size {size} (pad {pad})")
    return span // stride + 1


def _layer_to_dict(layer) -> dict:
    if isinstance(layer, Conv):
        return {"kind": "conv", "out_ch": layer.out_ch, "k": layer.k, "stride": layer.stride,
                "pad": layer.padding, "has_norm": layer.has_norm, "has_relu": layer.has_relu}
    if isinstance(layer, MaxPool):
        return {"kind": "maxpool", "k": layer.k, "stride": layer.stride or layer.k, "pad": layer.pad}
    if isinstance(layer, ResidualBlock):
        return {"kind": "residual", "convs": [_layer_to_dict(c) for c in layer.convs],
                "shortcut": None if layer.shortcut is None else _layer_to_dict(layer.shortcut),
                "out_relu": layer.out_relu}
    if isinstance(layer, GlobalAvgPool):
        return {"kind": "gap"}
    if isinstance(layer, Head):
        return {"kind": "head", "num_classes": layer.num_classes}
    raise SpecError(f"cannot serialize {layer!r}")


def _layer_from_dict(d: dict):
    kind = d["kind"]
    if kind == "conv":
        return Conv(d["out_ch"], d["k"], d.get("stride", 1), d.get("pad"), d.get("has_norm", True), d.get("has_relu", True))
    if kind == "maxpool":
        return MaxPool(d["k"], d.get("stride"), d.get("pad", 0))
    if kind == "residual":
        sc = d.get("shortcut")
        return ResidualBlock(tuple(_layer_from_dict(c) for c in d["convs"]),
                             None if sc is None else _layer_from_dict(sc), d.get("out_relu", True))
    if kind == "gap":
        return GlobalAvgPool()
    if kind == "head":
        return Head(d["num_classes"])
    raise SpecError(f"unknown layer kind {kind!r}")


# --- presets ------------------------------------------------------------------------

def tinynet(input_shape=(1, 28, 28), num_classes=10) -> ArchSpec:
    return ArchSpec(
        "tinynet",
        (Conv(16, 3), Conv(32, 3), MaxPool(2), Conv(64, 3), GlobalAvgPool(), Head(num_classes)),
        input_shape,
    )


def _basic_block(in_ch, out_ch):
    shortcut = None if in_ch == out_ch else Conv(out_ch, 1, has_relu=False)
    return ResidualBlock((Conv(out_ch, 3), Conv(out_ch, 3, has_relu=False)), shortcut)


def resnet18_lite(input_shape=(3, 32, 32), num_classes=10) -> ArchSpec:
    """Four stages of two basic blocks, widths 16/32/64/128.

    Stages 2-4 downsample with a 2x2 max-pool in front of the stage rather
    than with strided convs, which keeps every conv output size exact on
    even inputs.
    """
    layers: list = [Conv(16, 3)]
    ch = 16
    for stage, width in enumerate((16, 32, 64, 128)):
        if stage:
            layers.append(MaxPool(2))
        layers.append(_basic_block(ch, width))
        layers.append(_basic_block(width, width))
        ch = width
    layers += [GlobalAvgPool(), Head(num_classes)]
    return ArchSpec("resnet18-lite", tuple(layers), input_shape)


def resnet50_shape(input_shape=(3, 224, 224), num_classes=1000) -> ArchSpec:
    """The ResNet-50 layer inventory (bottleneck stages 3/4/6/3). Accounting only."""
    layers: list = [Conv(64, 7, stride=2, pad=3), MaxPool(3, 2, 1)]
    for stage, (width, blocks) in enumerate(((64, 3), (128, 4), (256, 6), (512, 3))):
        for blk in range(blocks):
            stride = 2 if stage and blk == 0 else 1
            convs = (Conv(width, 1), Conv(width, 3, stride=stride), Conv(width * 4, 1, has_relu=False))
            shortcut = Conv(width * 4, 1, stride=stride, has_relu=False) if blk == 0 else None
            layers.append(ResidualBlock(convs, shortcut))
    layers += [GlobalAvgPool(), Head(num_classes)]
    return ArchSpec("resnet50-shape", tuple(layers), input_shape)


PRESETS = {"tinynet": tinynet, "resnet18-lite": resnet18_lite, "resnet50-shape": resnet50_shape}


def preset(name: str, input_shape=None, num_classes=None) -> ArchSpec:
    try:
        factory = PRESETS[name]
    except KeyError:
        raise SpecError(f"unknown architecture preset {name!r}; choose from {sorted(PRESETS)}") from None
    kwargs = {}
    if input_shape is not None:
        kwargs["input_shape"] = tuple(input_shape)
    if num_classes is not None:
        kwargs["num_classes"] = int(num_classes)
    return factory(**kwargs)
