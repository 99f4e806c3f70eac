"""Channel-wise lightweight reprogramming layers and per-task adapters.

A reprogramming layer is a depthwise k x k convolution placed right after a
frozen conv (and before that conv's norm). Each task owns a bank of these
layers plus its own linear head; the backbone is shared and never written.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .arch import ArchSpec, Conv, GlobalAvgPool, Head, MaxPool, ResidualBlock
from .autodiff import Tensor, blend, depthwise_conv2d, linear
from .backbone import BackboneState, run_layers
from .errors import ShapeError, SpecError, StateError

# Published reference figures for ResNet-50; printed next to computed values, never asserted.
REPORTED_RATIO = 0.0059
REPORTED_COMPUTE = 1.003
REPORTED_VARIANT_MULTIPLIERS = {"full": 1.69, "reduced": 1.08, "mixed": 1.79}


class ClrVariant(str, enum.Enum):
    STANDARD = "standard"
    FULL = "full"
    REDUCED = "reduced"
    MIXED = "mixed"

    @classmethod
    def parse(cls, value) -> "ClrVariant":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise SpecError(f"unknown CLR variant {value!r}; choose from {[v.value for v in cls]}") from None


def attachment_plan(arch: ArchSpec, variant) -> dict:
    """Map conv path -> reprogramming kernel size for the given variant.

    standard / mixed: 3x3 after every conv with k > 1, 1x1 convs skipped.
    full:             3x3 after every conv.
    reduced:          1x1 after 1x1 convs, 3x3 after the rest.
    """
    variant = ClrVariant.parse(variant)
    plan = {}
    for site in arch.conv_sites():
        k = site.spec.k
        if variant in (ClrVariant.STANDARD, ClrVariant.MIXED):
            if k > 1:
                plan[site.path] = 3
        elif variant is ClrVariant.FULL:
            plan[site.path] = 3
        else:
            plan[site.path] = 1 if k == 1 else 3
    return plan


def identity_kernels(channels: int, k: int) -> np.ndarray:
    w = np.zeros((channels, 1, k, k), dtype=np.float32)
    w[:, 0, k // 2, k // 2] = 1.0
    return w


@dataclass
class ClrLayer:
    kernels: Tensor
    attached_to: str
    blend: Optional[Tensor] = None

    @classmethod
    def identity(cls, channels: int, k: int, attached_to: str, mixed: bool = False) -> "ClrLayer":
        a = Tensor(np.ones(1, dtype=np.float32), requires_grad=True) if mixed else None
        return cls(Tensor(identity_kernels(channels, k), requires_grad=True), attached_to, a)

    @property
    def channels(self) -> int:
        return self.kernels.shape[0]


@dataclass
class TaskAdapter:
    task_id: int
    variant: ClrVariant
    layers: dict
    head_weight: Tensor
    head_bias: Tensor
    arch_fingerprint: str
    norm_affine: Optional[dict] = None
    task_name: str = ""
    training_log: list = field(default_factory=list)

    @property
    def num_classes(self) -> int:
        return self.head_weight.shape[0]

    def parameters(self, train_clr: bool = True) -> list:
        """Trainable tensors. ``train_clr=False`` leaves only the head (and norm affines)."""
        out = []
        if train_clr:
            for layer in self.layers.values():
                out.append(layer.kernels)
                if layer.blend is not None:
                    out.append(layer.blend)
        if self.norm_affine:
            for gamma, beta in self.norm_affine.values():
                out += [gamma, beta]
        out += [self.head_weight, self.head_bias]
        return out

    def named_tensors(self) -> dict:
        named = {}
        for path, layer in self.layers.items():
            named[f"clr.{path}.kernels"] = layer.kernels
            if layer.blend is not None:
                named[f"clr.{path}.blend"] = layer.blend
        for path, (gamma, beta) in (self.norm_affine or {}).items():
            named[f"norm.{path}.gamma"] = gamma
            named[f"norm.{path}.beta"] = beta
        named["head.weight"] = self.head_weight
        named["head.bias"] = self.head_bias
        return named

    def num_parameters(self) -> int:
        return sum(t.size for t in self.named_tensors().values())


def make_adapter(backbone: BackboneState, variant, num_classes: int, seed: int,
                 task_id: int = 0, train_norm_affine: bool = False, task_name: str = "") -> TaskAdapter:
    """Identity-initialized reprogramming layers at the variant's attachment points plus a fresh head."""
    if not backbone.frozen:
        raise StateError("adapters can only be built on a frozen backbone")
    variant = ClrVariant.parse(variant)
    arch = backbone.arch
    sites = {s.path: s for s in arch.conv_sites()}
    layers = {
        path: ClrLayer.identity(sites[path].spec.out_ch, k, path, mixed=variant is ClrVariant.MIXED)
        for path, k in attachment_plan(arch, variant).items()
    }
    norm_affine = None
    if train_norm_affine:
        norm_affine = {
            path: (
                Tensor(backbone.params[f"{path}.bn.gamma"].data.copy(), requires_grad=True),
                Tensor(backbone.params[f"{path}.bn.beta"].data.copy(), requires_grad=True),
            )
            for path, site in sites.items() if site.spec.has_norm
        }
    feat = arch.feature_dim
    rng = np.random.Generator(np.random.PCG64(seed))
    head_w = (rng.standard_normal((num_classes, feat)) * np.sqrt(2.0 / feat)).astype(np.float32)
    return TaskAdapter(
        task_id=task_id,
        variant=variant,
        layers=layers,
        head_weight=Tensor(head_w, requires_grad=True),
        head_bias=Tensor(np.zeros(num_classes, np.float32), requires_grad=True),
        arch_fingerprint=arch.fingerprint(),
        norm_affine=norm_affine,
        task_name=task_name,
    )


def clr_forward(x_prime: Tensor, layer: ClrLayer) -> Tensor:
    """Reprogram each channel of a conv output with its own kernel.

    With a blend weight ``A`` (the mixed variant) the result is
    ``A * reprogrammed + (1 - A) * x_prime``.
    """
    if x_prime.ndim != 4 or x_prime.shape[1] != layer.channels:
        raise ShapeError(
            f"{layer.attached_to}: reprogramming layer has {layer.channels} channels, input {x_prime.shape}"
        )
    out = depthwise_conv2d(x_prime, layer.kernels)
    if layer.blend is not None:
        out = blend(layer.blend, out, x_prime)
    return out


def check_compatible(backbone: BackboneState, adapter: TaskAdapter):
    if adapter.arch_fingerprint != backbone.arch.fingerprint():
        raise SpecError(
            f"adapter for task {adapter.task_id} was built for architecture {adapter.arch_fingerprint}, "
            f"backbone is {backbone.arch.fingerprint()}"
        )
    expected = attachment_plan(backbone.arch, adapter.variant)
    got = {path: layer.kernels.shape[-1] for path, layer in adapter.layers.items()}
    if got != expected:
        raise SpecError(f"adapter attachment points do not match the {adapter.variant.value} rule")
    if adapter.head_weight.shape[1] != backbone.arch.feature_dim:
        raise SpecError("adapter head does not match the backbone feature dimension")


def reprogrammed_forward(backbone: BackboneState, adapter: TaskAdapter, x) -> Tensor:
    """Task logits: frozen backbone with the adapter's layers spliced in, then the task head."""
    check_compatible(backbone, adapter)
    x = x if isinstance(x, Tensor) else Tensor(x)
    layers = adapter.layers

    def hook(path, h):
        layer = layers.get(path)
        return h if layer is None else clr_forward(h, layer)

    feats = run_layers(backbone, x, mode="eval", conv_hook=hook, norm_affine=adapter.norm_affine)
    return linear(feats, adapter.head_weight, adapter.head_bias)


# --- accounting ------------------------------------------------------------------

@dataclass(frozen=True)
class LedgerRow:
    layer: str
    kind: str
    frozen_params: int
    clr_params: int


@dataclass
class ParameterLedger:
    arch_name: str
    variant: ClrVariant
    rows: list
    includes_head: bool
    includes_norm_affine: bool = False

    @property
    def frozen_total(self) -> int:
        return sum(r.frozen_params for r in self.rows)

    @property
    def clr_total(self) -> int:
        return sum(r.clr_params for r in self.rows)

    @property
    def ratio(self) -> float:
        return self.clr_total / self.frozen_total

    def summary_line(self) -> str:
        return (
            f"{self.arch_name} [{self.variant.value}] per-task params {self.clr_total:,} / "
            f"frozen {self.frozen_total:,} = {100 * self.ratio:.3f}% "
            f"(head {'included' if self.includes_head else 'excluded'}); "
            f"published reference for ResNet-50: {100 * REPORTED_RATIO:.2f}%"
        )


def count_parameters(arch: ArchSpec, variant, include_head: bool = False, num_classes: Optional[int] = None,
                     include_norm_affine: bool = False) -> ParameterLedger:
    """Per-layer frozen vs. per-task parameter counts.

    Frozen counts are conv weights + biases + norm gamma/beta (running
    statistics are buffers, not parameters) and the backbone's own head.
    Per-task counts are ``k*k*c`` per reprogramming layer, +1 per layer for
    the mixed blend weight, optionally the task head (``num_classes`` x
    (feature_dim + 1), defaulting to the backbone head's class count) and
    per-task norm affines.
    """
    variant = ClrVariant.parse(variant)
    plan = attachment_plan(arch, variant)
    sites = {s.path: s for s in arch.conv_sites()}
    rows = []

    def conv_row(path):
        site = sites[path]
        spec = site.spec
        frozen = spec.out_ch * site.in_ch * spec.k * spec.k
        frozen += spec.out_ch if spec.has_bias else 0
        norm = 2 * spec.out_ch if spec.has_norm else 0
        clr = 0
        if path in plan:
            clr = plan[path] ** 2 * spec.out_ch + (1 if variant is ClrVariant.MIXED else 0)
        if include_norm_affine:
            clr += norm
        rows.append(LedgerRow(path, f"conv{spec.k}x{spec.k}", frozen + norm, clr))

    for i, layer in enumerate(arch.layers):
        path = f"layers.{i}"
        if isinstance(layer, Conv):
            conv_row(path)
        elif isinstance(layer, ResidualBlock):
            for j in range(len(layer.convs)):
                conv_row(f"{path}.convs.{j}")
            if layer.shortcut is not None:
                conv_row(f"{path}.shortcut")
            else:
                rows.append(LedgerRow(f"{path}.shortcut", "identity", 0, 0))
        elif isinstance(layer, MaxPool):
            rows.append(LedgerRow(path, "maxpool", 0, 0))
        elif isinstance(layer, GlobalAvgPool):
            rows.append(LedgerRow(path, "avgpool", 0, 0))
        elif isinstance(layer, Head):
            feat = arch.feature_dim
            task_classes = layer.num_classes if num_classes is None else num_classes
            frozen = layer.num_classes * (feat + 1)
            clr = task_classes * (feat + 1) if include_head else 0
            rows.append(LedgerRow("head", "linear", frozen, clr))
    return ParameterLedger(arch.name, variant, rows, include_head, include_norm_affine)


def flop_estimate(arch: ArchSpec, variant) -> dict:
    """Multiply-accumulate counts at the architecture's input resolution.

    ``base_flops`` covers the convolutions of the frozen network; the head
    and pooling layers are not counted. Each reprogramming layer costs
    ``k*k*c*h*w`` MACs at its conv's output resolution.
    """
    variant = ClrVariant.parse(variant)
    plan = attachment_plan(arch, variant)
    base = clr = 0
    for site in arch.conv_sites():
        oh, ow = site.out_hw
        spec = site.spec
        base += spec.out_ch * site.in_ch * spec.k * spec.k * oh * ow
        if site.path in plan:
            clr += plan[site.path] ** 2 * spec.out_ch * oh * ow
    return {
        "base_flops": base,
        "clr_flops": clr,
        "ratio": clr / base if base else 0.0,
        "relative_cost": (base + clr) / base if base else 1.0,
    }
