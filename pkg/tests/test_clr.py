import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from clrnet.arch import ArchSpec, Conv, GlobalAvgPool, Head, preset, resnet50_shape
from clrnet.autodiff import Tensor, backward, linear, softmax_cross_entropy
from clrnet.backbone import build_network, forward_features
from clrnet.clr import (
    ClrLayer,
    ClrVariant,
    attachment_plan,
    clr_forward,
    count_parameters,
    flop_estimate,
    make_adapter,
    reprogrammed_forward,
)
from clrnet.errors import ShapeError, SpecError, StateError

import oracles

VARIANTS = list(ClrVariant)


def test_variant_parse():
    assert ClrVariant.parse("Mixed") is ClrVariant.MIXED
    with pytest.raises(SpecError):
        ClrVariant.parse("half")


def test_tinynet_standard_adapter(frozen_tinynet):
    ad = make_adapter(frozen_tinynet, "standard", 10, seed=0)
    assert sorted(layer.channels for layer in ad.layers.values()) == [16, 32, 64]
    for layer in ad.layers.values():
        k = layer.kernels.data
        assert k.shape[-2:] == (3, 3)
        assert (k[:, 0, 1, 1] == 1).all() and np.count_nonzero(k) == layer.channels
        assert layer.blend is None


def test_mixed_blend_starts_at_one(frozen_tinynet):
    ad = make_adapter(frozen_tinynet, "mixed", 4, seed=0)
    assert all(layer.blend.data.tolist() == [1.0] for layer in ad.layers.values())


def test_make_adapter_needs_frozen_backbone():
    with pytest.raises(StateError):
        make_adapter(build_network(preset("tinynet"), 0), "standard", 2, 0)


def test_resnet50_attachment_sites():
    arch = resnet50_shape()
    sites = {s.path: s.spec for s in arch.conv_sites()}
    std = attachment_plan(arch, "standard")
    # the 7x7 stem plus the 16 inner 3x3 convs; no 1x1 and no shortcut
    assert len(std) == 17
    assert {sites[p].k for p in std} == {7, 3}
    assert not any(p.endswith("shortcut") for p in std)
    full, red = attachment_plan(arch, "full"), attachment_plan(arch, "reduced")
    assert set(full) == set(sites) == set(red)
    assert set(full.values()) == {3}
    assert all(red[p] == (1 if sites[p].k == 1 else 3) for p in sites)


@pytest.mark.parametrize("name", ["tinynet", "resnet18-lite", "resnet50-shape"])
def test_attachment_rules_by_enumeration(name):
    arch = preset(name)
    for s in arch.conv_sites():
        assert (s.path in attachment_plan(arch, "standard")) == (s.spec.k > 1)
        assert attachment_plan(arch, "mixed") == attachment_plan(arch, "standard")
        assert attachment_plan(arch, "full")[s.path] == 3
        assert s.path in attachment_plan(arch, "reduced")


# --- clr_forward -----------------------------------------------------------------

def test_identity_layer_leaves_input_unchanged(rng):
    x = Tensor(rng.standard_normal((2, 5, 6, 6)))
    np.testing.assert_array_equal(clr_forward(x, ClrLayer.identity(5, 3, "p")).data, x.data)


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=20, deadline=None)
def test_mixed_endpoints(seed):
    r = np.random.Generator(np.random.PCG64(seed))
    x = Tensor(r.standard_normal((2, 3, 5, 5)).astype(np.float32))
    kernels = r.standard_normal((3, 1, 3, 3)).astype(np.float32)
    std = clr_forward(x, ClrLayer(Tensor(kernels), "p"))
    at0 = clr_forward(x, ClrLayer(Tensor(kernels), "p", Tensor([0.0])))
    at1 = clr_forward(x, ClrLayer(Tensor(kernels), "p", Tensor([1.0])))
    np.testing.assert_allclose(at0.data, x.data, atol=1e-6)
    np.testing.assert_allclose(at1.data, std.data, atol=1e-6)


def test_clr_forward_channel_mismatch(rng):
    with pytest.raises(ShapeError):
        clr_forward(Tensor(rng.standard_normal((1, 4, 5, 5))), ClrLayer.identity(3, 3, "p"))


# --- reprogrammed_forward --------------------------------------------------------

@pytest.mark.parametrize("variant", VARIANTS)
def test_fresh_adapter_is_transparent(frozen_tinynet, rng, variant):
    ad = make_adapter(frozen_tinynet, variant, 5, seed=3)
    x = rng.standard_normal((4, 1, 28, 28)).astype(np.float32)
    ref = linear(forward_features(frozen_tinynet, x), ad.head_weight, ad.head_bias).data
    assert np.abs(reprogrammed_forward(frozen_tinynet, ad, x).data - ref).max() < 1e-5


def test_adapters_are_isolated(frozen_tinynet, rng):
    a = make_adapter(frozen_tinynet, "standard", 3, seed=1, task_id=0)
    b = make_adapter(frozen_tinynet, "standard", 3, seed=2, task_id=1)
    x = rng.standard_normal((3, 1, 28, 28)).astype(np.float32)
    before = reprogrammed_forward(frozen_tinynet, b, x).data.copy()
    for layer in a.layers.values():
        layer.kernels.data += rng.standard_normal(layer.kernels.shape).astype(np.float32)
    np.testing.assert_array_equal(reprogrammed_forward(frozen_tinynet, b, x).data, before)


def test_backbone_receives_no_gradient(frozen_tinynet, rng):
    ad = make_adapter(frozen_tinynet, "full", 3, seed=0)
    x = rng.standard_normal((2, 1, 28, 28)).astype(np.float32)
    backward(softmax_cross_entropy(reprogrammed_forward(frozen_tinynet, ad, x), [0, 2]))
    assert all(t.grad is None for t in frozen_tinynet.params.values())
    assert all(layer.kernels.grad is not None for layer in ad.layers.values())


def test_norm_affine_adapter_copies_and_trains_separately(frozen_tinynet, rng):
    ad = make_adapter(frozen_tinynet, "standard", 3, seed=0, train_norm_affine=True)
    assert set(ad.norm_affine) == {"layers.0", "layers.1", "layers.3"}
    g, _ = ad.norm_affine["layers.0"]
    g.data[:] = 2.0
    assert (frozen_tinynet.params["layers.0.bn.gamma"].data == 1).all()
    assert len(ad.parameters(train_clr=False)) == 2 * 3 + 2


def test_mismatched_adapter_rejected(frozen_tinynet, frozen_resnet18, rng):
    ad = make_adapter(frozen_resnet18, "standard", 3, seed=0)
    with pytest.raises(SpecError):
        reprogrammed_forward(frozen_tinynet, ad, rng.standard_normal((1, 1, 28, 28)).astype(np.float32))


# --- accounting ------------------------------------------------------------------

def test_tinynet_ledger_example():
    led = count_parameters(preset("tinynet"), "standard")
    assert led.clr_total == 9 * (16 + 32 + 64) == 1008
    assert not led.includes_head


def test_ledger_rows_cover_every_layer():
    arch = resnet50_shape()
    rows = {r.layer for r in count_parameters(arch, "standard").rows}
    assert {s.path for s in arch.conv_sites()} <= rows
    for i, layer in enumerate(arch.layers):
        assert any(r == f"layers.{i}" or r.startswith(f"layers.{i}.") or r == "head" for r in rows)


@pytest.mark.parametrize("variant,rule", [
    ("standard", oracles.STANDARD), ("full", oracles.FULL), ("reduced", oracles.REDUCED),
])
def test_resnet50_ledger_matches_oracle(variant, rule):
    led = count_parameters(resnet50_shape(), variant)
    assert led.frozen_total == oracles.resnet50_param_count(1000)
    assert led.clr_total == oracles.resnet50_clr_count(rule)
    assert led.ratio == led.clr_total / led.frozen_total


def test_mixed_adds_one_per_layer():
    arch = resnet50_shape()
    assert count_parameters(arch, "mixed").clr_total == count_parameters(arch, "standard").clr_total + 17


def test_full_dominates_standard():
    arch = resnet50_shape()
    assert count_parameters(arch, "full").clr_total > count_parameters(arch, "standard").clr_total


@pytest.mark.parametrize("variant", VARIANTS)
def test_ledger_conservation(frozen_tinynet, variant):
    ad = make_adapter(frozen_tinynet, variant, 7, seed=0)
    led = count_parameters(frozen_tinynet.arch, variant, include_head=True, num_classes=7)
    assert frozen_tinynet.num_parameters() + ad.num_parameters() == led.frozen_total + led.clr_total


def test_ledger_with_norm_affine(frozen_tinynet):
    ad = make_adapter(frozen_tinynet, "standard", 10, seed=0, train_norm_affine=True)
    led = count_parameters(frozen_tinynet.arch, "standard", include_head=True, include_norm_affine=True)
    assert led.clr_total == ad.num_parameters()


def test_summary_line_shows_both_ratios():
    line = count_parameters(resnet50_shape(), "standard").summary_line()
    assert "0.135%" in line and "0.59%" in line


def test_flop_examples():
    one = ArchSpec("one", (Conv(64, 3), GlobalAvgPool(), Head(2)), (64, 56, 56))
    f = flop_estimate(one, "standard")
    assert f["base_flops"] == 9 * 64 * 64 * 56 * 56
    assert f["ratio"] == pytest.approx(1 / 64, rel=1e-12)
    ones = ArchSpec("ones", (Conv(8, 1), Conv(8, 1), GlobalAvgPool(), Head(2)), (3, 10, 10))
    assert flop_estimate(ones, "standard")["clr_flops"] == 0
    arch = resnet50_shape()
    assert flop_estimate(arch, "full")["ratio"] >= flop_estimate(arch, "standard")["ratio"]
