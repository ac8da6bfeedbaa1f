import numpy as np
import pytest
import torch

from fdct.core import ConfigError, ShapeError
from fdct.losses import total_loss
from fdct.model import (
    DecoderBlock,
    EncoderBlock,
    FdctConfig,
    FdctNetwork,
    OneShotAggregation,
    ShortcutFusion,
    complete_depth,
    count_parameters,
    parameter_breakdown,
)


def tiny_inputs(batch=1, h=64, w=80, seed=0):
    g = torch.Generator().manual_seed(seed)
    rgb = torch.rand(batch, 3, h, w, generator=g)
    depth = torch.rand(batch, 1, h, w, generator=g) * 1.2 + 0.3
    return rgb, depth


def test_config_presets():
    full = FdctConfig.full()
    slim = FdctConfig.slim()
    assert (full.channels, full.osa_layers, full.osa_stage_channels) == (64, 5, 20)
    assert (slim.channels, slim.osa_layers, slim.osa_stage_channels) == (32, 4, 16)


def test_config_validation():
    with pytest.raises(ConfigError):
        FdctConfig(channels=0)
    with pytest.raises(ConfigError):
        FdctConfig(downsample_mode="bilinear")
    with pytest.raises(ConfigError):
        FdctConfig(depth_fusion_mode="add")


def test_osa_concat_widths():
    full = OneShotAggregation(64, 64, 5, 20)
    assert full.reduce.in_channels == 64 + 5 * 20
    slim = OneShotAggregation(32, 32, 4, 16)
    assert slim.reduce.in_channels == 32 + 4 * 16
    x = torch.randn(1, 64, 16, 16)
    assert full(x).shape == x.shape


def test_osa_zero_reducer_is_identity():
    osa = OneShotAggregation(8, 8, 3, 4)
    with torch.no_grad():
        osa.reduce.weight.zero_()
        osa.reduce.bias.zero_()
    x = torch.randn(2, 8, 12, 12)
    assert torch.equal(osa(x), x)


def test_encoder_block_shapes():
    cfg = FdctConfig.full()
    block = EncoderBlock(cfg, has_shortcut=False)
    feats = torch.randn(1, 64, 240, 320)
    depth = torch.rand(1, 1, 240, 320)
    out, pre = block(feats, depth)
    assert pre.shape == (1, 64, 240, 320)
    assert out.shape == (1, 64, 120, 160)


def test_encoder_fusion_width_with_shortcut():
    block = EncoderBlock(FdctConfig.full(), has_shortcut=True)
    assert block.fuse.in_channels == 64 + 1 + 1


def test_encoder_block_scale_mismatch():
    block = EncoderBlock(FdctConfig.full(), has_shortcut=False)
    with pytest.raises(ShapeError):
        block(torch.randn(1, 64, 32, 32), torch.rand(1, 1, 16, 16))


def test_sfm_shapes_and_chain():
    sfm = ShortcutFusion(64)
    prev = torch.randn(1, 64, 240, 320)
    enc = torch.randn(1, 64, 120, 160)
    assert sfm(prev, enc).shape == enc.shape
    # chaining three modules over four encoder outputs lands at 1/16 scale
    sizes = [(120, 160), (60, 80), (30, 40), (15, 20)]
    s = torch.randn(1, 64, *sizes[0])
    for size in sizes[1:]:
        s = ShortcutFusion(64)(s, torch.randn(1, 64, *size))
    assert s.shape[-2:] == (15, 20)


def test_sfm_scale_mismatch():
    with pytest.raises(ShapeError):
        ShortcutFusion(8)(torch.randn(1, 8, 16, 16), torch.randn(1, 8, 16, 16))


def test_sfm_can_select_encoder_channels():
    sfm = ShortcutFusion(8)
    with torch.no_grad():
        sfm.mix.weight.zero_()
        sfm.mix.bias.zero_()
        for i in range(8):
            sfm.mix.weight[i, 8 + i, 0, 0] = 1.0
    prev = torch.rand(1, 8, 16, 16)
    enc = torch.rand(1, 8, 8, 8)  # non-negative, as encoder outputs are
    assert torch.allclose(sfm(prev, enc), enc)


def test_decoder_block_shapes_and_width():
    cfg = FdctConfig.full()
    block = DecoderBlock(cfg, side_channels=65)
    assert block.fuse.in_channels == 64 + 1 + 64 + 1
    feats = torch.randn(1, 64, 15, 20)
    depth = torch.rand(1, 1, 15, 20)
    res = torch.randn(1, 64, 15, 20)
    sc = torch.randn(1, 1, 15, 20)
    out, pre = block(feats, depth, res, sc)
    assert pre.shape == (1, 64, 15, 20)
    assert out.shape == (1, 64, 30, 40)


def test_pixel_shuffle_preserves_constants():
    x = torch.full((1, 4 * 3, 5, 7), 0.25)
    y = torch.nn.functional.pixel_shuffle(x, 2)
    assert y.shape == (1, 3, 10, 14)
    assert torch.equal(y, torch.full_like(y, 0.25))


def test_forward_shape_at_training_resolution():
    for cfg in (FdctConfig.full(), FdctConfig.slim()):
        net = FdctNetwork(cfg, seed=0)
        rgb, depth = tiny_inputs(h=240, w=320)
        with torch.no_grad():
            out = net(rgb, depth)
        assert out.shape == (1, 1, 240, 320)
        assert torch.isfinite(out).all()


def test_forward_rejects_bad_sizes():
    net = FdctNetwork(FdctConfig.slim(), seed=0)
    with pytest.raises(ShapeError):
        net(torch.rand(1, 3, 250, 320), torch.rand(1, 1, 250, 320))
    with pytest.raises(ShapeError):
        net(torch.rand(1, 3, 64, 64), torch.rand(1, 1, 32, 32))
    bad = torch.rand(1, 1, 64, 64)
    bad[0, 0, 0, 0] = float("nan")
    with pytest.raises(ValueError):
        net(torch.rand(1, 3, 64, 64), bad)


def test_zeroed_output_head_gives_zero_depth():
    net = FdctNetwork(FdctConfig.slim(), seed=0)
    with torch.no_grad():
        net.out_head.weight.zero_()
        net.out_head.bias.zero_()
    rgb, depth = tiny_inputs()
    out = net(rgb, depth)
    assert torch.equal(out, torch.zeros_like(out))


def test_constant_inputs_same_for_max_and_avg_pooling():
    cfg_max = FdctConfig.slim(downsample_mode="max_pool")
    cfg_avg = FdctConfig.slim(downsample_mode="avg_pool")
    a = FdctNetwork(cfg_max, seed=3)
    b = FdctNetwork(cfg_avg, seed=3)
    rgb = torch.full((1, 3, 64, 80), 0.5)
    depth = torch.full((1, 1, 64, 80), 1.0)
    with torch.no_grad():
        out_a = a(rgb, depth)
        out_b = b(rgb, depth)
    assert torch.equal(out_a, out_b)


def test_parameter_counts():
    full = count_parameters(FdctNetwork(FdctConfig.full(), seed=0))
    slim = count_parameters(FdctNetwork(FdctConfig.slim(), seed=0))
    assert slim < full
    assert 600_000 <= full <= 2_000_000
    no_fusion = count_parameters(
        FdctNetwork(FdctConfig.full(use_fusion_branch=False), seed=0)
    )
    assert no_fusion < full
    no_sc = count_parameters(
        FdctNetwork(FdctConfig.full(use_cross_shortcuts=False), seed=0)
    )
    assert no_sc < full


def test_parameter_count_deterministic():
    cfg = FdctConfig.slim()
    assert count_parameters(FdctNetwork(cfg, seed=0)) == count_parameters(
        FdctNetwork(cfg, seed=99)
    )


def test_parameter_breakdown_sums_to_total():
    net = FdctNetwork(FdctConfig.full(), seed=0)
    assert sum(parameter_breakdown(net).values()) == count_parameters(net)


def test_same_seed_same_weights():
    a = FdctNetwork(FdctConfig.slim(), seed=5)
    b = FdctNetwork(FdctConfig.slim(), seed=5)
    for pa, pb in zip(a.parameters(), b.parameters()):
        assert torch.equal(pa, pb)


def test_flag_toggles_change_output_not_shape():
    rgb, depth = tiny_inputs()
    base = FdctNetwork(FdctConfig.slim(), seed=1)
    with torch.no_grad():
        ref = base(rgb, depth)
    counts = {count_parameters(base)}
    for overrides in (
        dict(use_fusion_branch=False),
        dict(use_cross_shortcuts=False),
        dict(depth_fusion_mode="concat"),
        dict(downsample_mode="strided_conv"),
    ):
        net = FdctNetwork(FdctConfig.slim(**overrides), seed=1)
        with torch.no_grad():
            out = net(rgb, depth)
        assert out.shape == ref.shape
        assert not torch.equal(out, ref)
        counts.add(count_parameters(net))
    assert len(counts) >= 4  # pooling mode may or may not add parameters


def test_concat_mode_removes_fusion_conv():
    net = FdctNetwork(FdctConfig.slim(depth_fusion_mode="concat"), seed=0)
    assert net.encoder[0].fuse is None
    assert net.encoder[0].osa.layers[0].in_channels == 32 + 1
    assert net.encoder[1].osa.layers[0].in_channels == 32 + 2
    assert net.decoder[1].osa.layers[0].in_channels == 32 + 1 + 32 + 1


def test_full_network_fusion_widths():
    net = FdctNetwork(FdctConfig.full(), seed=0)
    # encoder: block 1 fuses [features, depth]; blocks 2-4 add a 1ch shortcut
    assert net.encoder[0].fuse.in_channels == 64 + 1
    assert all(net.encoder[k].fuse.in_channels == 64 + 1 + 1 for k in (1, 2, 3))
    # decoder: block 1 fuses the fusion-branch output; blocks 2-4 fuse an
    # encoder residual plus a 1ch shortcut
    assert net.decoder[0].fuse.in_channels == 64 + 1 + 64
    assert all(net.decoder[k].fuse.in_channels == 64 + 1 + 64 + 1 for k in (1, 2, 3))
    assert all(sfm.mix.in_channels == 128 for sfm in net.fusion)
    assert net.encoder[0].osa.reduce.in_channels == 64 + 5 * 20
    no_branch = FdctNetwork(FdctConfig.full(use_fusion_branch=False), seed=0)
    assert no_branch.decoder[0].fuse.in_channels == 64 + 1


def test_every_block_receives_gradient():
    net = FdctNetwork(FdctConfig.slim(), seed=2)
    g = torch.Generator().manual_seed(0)
    rgb = torch.rand(2, 3, 64, 80, generator=g)
    gt = torch.rand(2, 1, 64, 80, generator=g) * 1.0 + 0.35
    raw = gt * (torch.rand(2, 1, 64, 80, generator=g) > 0.3)
    mask = torch.rand(2, 1, 64, 80, generator=g) < 0.5
    pred = net(rgb, raw)
    bundle = total_loss(pred, gt, mask)
    bundle.total_tensor.backward()
    for name, child in net.named_children():
        got = any(
            p.grad is not None and p.grad.abs().sum() > 0 for p in child.parameters()
        )
        assert got, f"no gradient reached block {name}"


def test_complete_depth_roundtrip():
    net = FdctNetwork(FdctConfig.slim(), seed=0)
    rng = np.random.default_rng(0)
    rgb = rng.random((64, 80, 3)).astype(np.float32)
    raw = rng.uniform(0.3, 1.5, (64, 80)).astype(np.float32)
    out = complete_depth(net, rgb, raw)
    assert (out.height, out.width) == (64, 80)
    assert out.values.min() >= 0.0
    assert out.values.max() <= net.config.depth_max
