import numpy as np
import pytest
import torch

from a3d.configspace import FULL, Configuration
from a3d.costmodel import LayerSpec
from a3d.errors import ConfigError
from a3d.multipath import FusionBlock, TwoPathwayNet, fuse
from a3d.presets import get_arch
from a3d.resample import target_frames, target_pixels, uniform_frame_indices
from a3d.slimnet import build_model, forward_config


def fusion_spec(alpha, beta_c):
    return LayerSpec(label="fuse.conv", kind="fusion_conv",
                     in_channels=beta_c, out_channels=2 * beta_c,
                     kernel=(5, 1, 1), stride=(alpha, 1, 1),
                     width_scalable_in=False, width_scalable_out=False, bias=True)


def test_fusion_shape_contract_20_random():
    rng = np.random.default_rng(0)
    for _ in range(20):
        alpha = int(rng.choice([2, 4, 8]))
        base_c = int(rng.choice([16, 32, 64]))
        beta_c = max(1, int(base_c * float(rng.choice([0.125, 0.25, 0.5]))))
        base_frames = int(rng.choice([4, 8]))
        fast_s = int(rng.choice([8, 16]))
        gs = float(rng.choice([0.57, 0.71, 0.86, 1.0]))
        gt = float(rng.choice([0.25, 0.5, 0.75, 1.0]))
        block = FusionBlock(fusion_spec(alpha, beta_c))
        fast = torch.rand(2, beta_c, alpha * base_frames, fast_s, fast_s)
        t = target_frames(gt, base_frames)
        h = target_pixels(gs, fast_s)
        out = block(fast, (t, h, h))
        assert out.shape == (2, 2 * beta_c, t, h, h), (alpha, beta_c, gs, gt)


def test_fuse_places_fast_channels_last():
    block = FusionBlock(fusion_spec(4, 8))
    slow = torch.full((2, 32, 2, 6, 6), 5.0)
    fast = torch.rand(2, 8, 8, 6, 6)
    out = fuse(slow, fast, block)
    assert out.shape == (2, 32 + 16, 2, 6, 6)
    assert torch.equal(out[:, :32], slow)


def test_fusion_rejects_non_square_slow_maps():
    block = FusionBlock(fusion_spec(2, 4))
    with pytest.raises(ConfigError):
        block(torch.rand(1, 4, 8, 6, 6), (2, 4, 6))


def test_fusion_identity_when_shapes_already_match():
    block = FusionBlock(fusion_spec(4, 4))
    fast = torch.rand(1, 4, 16, 6, 6)
    y_conv = block.conv(fast)
    out = block(fast, tuple(y_conv.shape[-3:]))
    assert torch.equal(out, y_conv)


def test_derive_slow_input_full_is_stride_alpha_sampling():
    arch = get_arch("toy_slowfast")
    model = TwoPathwayNet(arch)
    clip = torch.rand(2, 3, arch.alpha * arch.base_frames, 32, 32)
    model.set_config(FULL)
    slow = model.derive_slow_input(clip)
    idx = uniform_frame_indices(clip.shape[2], arch.base_frames)
    assert idx == list(range(0, clip.shape[2], arch.alpha))
    assert torch.equal(slow, clip[:, :, idx])


def test_derive_slow_input_scales_with_config():
    arch = get_arch("toy_slowfast")
    model = TwoPathwayNet(arch)
    c = Configuration(1.0, 0.57, 0.5)
    model.set_config(c)
    clip = torch.rand(1, 3, 32, 32, 32)
    slow = model.derive_slow_input(clip)
    assert slow.shape == (1, 3, 4, 18, 18)


def test_two_pathway_rejects_pre_resampled_clip():
    arch = get_arch("toy_slowfast")
    model = build_model(arch, seed=0)
    with pytest.raises(ConfigError):
        forward_config(model, torch.rand(1, 3, 8, 32, 32), FULL)


def test_two_pathway_forward_shapes_across_configs():
    arch = get_arch("toy_slowfast")
    model = build_model(arch, seed=0)
    model.train()
    clip = torch.rand(2, 3, 32, 32, 32)
    for c in (FULL, Configuration(0.5, 0.57, 0.25), Configuration(0.63, 0.8, 0.5)):
        out = forward_config(model, clip, c)
        assert out.shape == (2, arch.num_classes)
        assert bool(torch.isfinite(out).all())


def test_fast_pathway_features_independent_of_config():
    arch = get_arch("toy_slowfast")
    model = build_model(arch, seed=1)
    model.train()
    clip = torch.rand(1, 3, 32, 32, 32)
    with torch.no_grad():
        model.set_config(FULL)
        full_fast = model.fast.forward_features(clip)
        model.set_config(Configuration(0.5, 0.57, 0.25))
        sub_fast = model.fast.forward_features(clip)
    assert torch.equal(full_fast, sub_fast)


def test_permuting_inactive_slow_channels_leaves_sub_logits_bit_identical():
    """Channel correspondence: parameters outside the active prefix are inert."""
    arch = get_arch("toy_slowfast")
    model = build_model(arch, seed=2)
    model.train()
    sub = Configuration(0.5, 0.57, 0.5)
    clip = torch.rand(2, 3, 32, 32, 32)
    with torch.no_grad():
        before_sub = forward_config(model, clip, sub)
        before_full = forward_config(model, clip, FULL)

        last_block = model.slow.stages[-1][-1]
        c_out = last_block.conv2.out_channels          # 128 in the toy
        act = c_out // 2
        perm = torch.arange(act, c_out)[torch.randperm(c_out - act,
                                                       generator=torch.Generator().manual_seed(0))]
        inactive = torch.arange(act, c_out)
        last_block.conv2.weight[inactive] = last_block.conv2.weight[perm].clone()
        last_block.bn2.weight[inactive] = last_block.bn2.weight[perm].clone()
        last_block.bn2.bias[inactive] = last_block.bn2.bias[perm].clone()
        model.head_fc.weight[:, inactive] = model.head_fc.weight[:, perm].clone()

        after_sub = forward_config(model, clip, sub)
        after_full = forward_config(model, clip, FULL)
    assert torch.equal(before_sub, after_sub)
    assert not torch.equal(before_full, after_full)  # permutation is not a no-op
