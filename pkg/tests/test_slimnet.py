import numpy as np
import pytest
import torch
import torch.nn.functional as F

from a3d.configspace import FULL, Configuration
from a3d.costmodel import network_cost, width
from a3d.errors import ConfigError, UncalibratedConfigError
from a3d.presets import get_arch
from a3d.slimnet import (
    CalibBN,
    SlimBackbone,
    SlimConv3d,
    SlimLinear,
    active_slice,
    batch_norm_train_stats,
    build_model,
    calibrated_keys,
    forward_config,
    set_stats_fallback,
)

GAMMAS = (0.5, 0.75, 1.0)


def small_arch():
    return get_arch("toy_slim", frames=4, spatial=16)


def all_slim_convs(model):
    return [m for m in model.modules() if isinstance(m, SlimConv3d)]


# ---------------------------------------------------------------- aliasing

def test_active_slice_is_a_view():
    conv = SlimConv3d(8, 16, kernel=(1, 3, 3))
    view = active_slice(conv, Configuration(0.5, 1, 1))
    assert view.shape == (8, 4, 1, 3, 3)
    with torch.no_grad():
        view[0, 0, 0, 0, 0] = 123.0
    assert conv.weight[0, 0, 0, 0, 0].item() == 123.0


def test_nesting_across_widths():
    model = build_model(small_arch(), seed=0)
    for conv in all_slim_convs(model):
        prev = None
        for gw in GAMMAS:
            v = active_slice(conv, Configuration(gw, 1, 1))
            views = v if isinstance(v, tuple) else (v,)
            if prev is not None:
                for narrow, wide in zip(prev, views):
                    co, ci = narrow.shape[:2]
                    assert wide.shape[0] >= co and wide.shape[1] >= ci
                    assert narrow.data_ptr() == wide.data_ptr()  # same prefix origin
                    assert torch.equal(narrow, wide[:co, :ci])
            prev = views


def _active_masks(model, c):
    """Boolean mask per parameter marking entries inside the active slice."""
    masks = {}
    for name, param in model.named_parameters():
        masks[name] = torch.zeros_like(param, dtype=torch.bool)
    for mod_name, mod in model.named_modules():
        if isinstance(mod, SlimConv3d):
            v = active_slice(mod, c)
            views = v if isinstance(v, tuple) else (v,)
            full = torch.zeros_like(mod.weight, dtype=torch.bool)
            for view in views:
                co, ci = view.shape[:2]
                if len(views) == 2 and view is views[1]:
                    full[:co, mod.in_channels - mod.pinned_in:] = True
                else:
                    full[:co, :ci] = True
            masks[f"{mod_name}.weight"] = full
            if mod.bias is not None:
                co = views[0].shape[0]
                masks[f"{mod_name}.bias"][:co] = True
        elif isinstance(mod, SlimLinear):
            co = mod.out_features if not mod.scalable_out else width(mod.out_features, c.gamma_w)
            n_scal = mod.in_features - mod.pinned_in
            ci = width(n_scal, c.gamma_w) if mod.scalable_in else n_scal
            masks[f"{mod_name}.weight"][:co, :ci] = True
            if mod.pinned_in:
                masks[f"{mod_name}.weight"][:co, n_scal:] = True
            if mod.bias is not None:
                masks[f"{mod_name}.bias"][:co] = True
        elif isinstance(mod, CalibBN):
            # every BN in the single-pathway toy follows a width-scalable conv
            cact = width(mod.channels, c.gamma_w)
            masks[f"{mod_name}.weight"][:cact] = True
            masks[f"{mod_name}.bias"][:cact] = True
    return masks


def test_post_step_modification_confined_to_active_slices():
    """100 randomized plain-SGD steps; weights outside the active slice never move."""
    arch = small_arch()
    model = build_model(arch, seed=1)
    model.train()
    opt = torch.optim.SGD(model.parameters(), lr=0.05)
    rng = np.random.default_rng(42)
    violations = 0
    for step in range(100):
        gw = float(rng.choice(GAMMAS))
        gs = float(rng.choice((0.57, 1.0)))
        gt = float(rng.choice((0.5, 1.0)))
        c = Configuration(gw, gs, gt)
        clips = torch.rand(2, 3, arch.base_frames, arch.base_spatial, arch.base_spatial)
        labels = torch.from_numpy(rng.integers(0, arch.num_classes, 2))
        before = {n: p.detach().clone() for n, p in model.named_parameters()}
        opt.zero_grad(set_to_none=True)
        loss = F.cross_entropy(forward_config(model, clips, c), labels)
        loss.backward()
        opt.step()
        masks = _active_masks(model, c)
        for n, p in model.named_parameters():
            moved = (p.detach() - before[n]) != 0
            if bool((moved & ~masks[n]).any()):
                violations += 1
    assert violations == 0


def test_gradients_masked_outside_active_slice():
    arch = small_arch()
    model = build_model(arch, seed=2)
    model.train()
    c = Configuration(0.5, 1.0, 1.0)
    clips = torch.rand(2, 3, arch.base_frames, arch.base_spatial, arch.base_spatial)
    loss = forward_config(model, clips, c).sum()
    loss.backward()
    masks = _active_masks(model, c)
    checked = 0
    for n, p in model.named_parameters():
        if p.grad is None:
            continue
        assert not bool((p.grad[~masks[n]] != 0).any()), n
        checked += 1
    assert checked > 0


def test_residual_branch_unlocks_after_one_step():
    """Zero-init residual gains gate conv gradients at init but not after a step."""
    arch = small_arch()
    model = build_model(arch, seed=3)
    model.train()
    clips = torch.rand(2, 3, arch.base_frames, arch.base_spatial, arch.base_spatial)
    conv1 = model.stages[0][0].conv1.weight

    loss = forward_config(model, clips, FULL).sum()
    loss.backward()
    assert conv1.grad is None or not bool((conv1.grad != 0).any())

    opt = torch.optim.SGD(model.parameters(), lr=0.5)
    opt.step()
    opt.zero_grad(set_to_none=True)
    loss = forward_config(model, clips, FULL).sum()
    loss.backward()
    assert bool((conv1.grad != 0).any())


# ---------------------------------------------------------------- gradcheck

def _tiny_net():
    torch.manual_seed(0)
    conv = SlimConv3d(3, 4, kernel=(1, 3, 3), scalable_in=False).double()
    bn = CalibBN(4).double()
    fc = SlimLinear(4, 3).double()
    n_params = sum(p.numel() for m in (conv, bn, fc) for p in m.parameters())
    assert n_params <= 200, n_params
    return conv, bn, fc


def _tiny_forward(conv, bn, fc, x, gw):
    for mod in (conv, bn, fc):
        mod.gamma_w = gw
    y = F.relu(bn(conv(x)))
    return fc(y.mean(dim=(2, 3, 4))).pow(2).sum()


def test_gradcheck_central_differences():
    conv, bn, fc = _tiny_net()
    bn.train()
    x = torch.rand(2, 3, 2, 6, 6, dtype=torch.float64)
    h = 1e-5
    for gw in GAMMAS:
        params = [p for m in (conv, bn, fc) for p in m.parameters()]
        for p in params:
            p.grad = None
        loss = _tiny_forward(conv, bn, fc, x, gw)
        loss.backward()
        for p in params:
            analytic = torch.zeros_like(p) if p.grad is None else p.grad
            flat = p.detach().reshape(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + h
                up = _tiny_forward(conv, bn, fc, x, gw).item()
                flat[i] = orig - h
                down = _tiny_forward(conv, bn, fc, x, gw).item()
                flat[i] = orig
                fd = (up - down) / (2 * h)
                a = analytic.reshape(-1)[i].item()
                scale = max(abs(a), abs(fd))
                if scale < 1e-7:
                    assert abs(a - fd) < 1e-7
                else:
                    assert abs(a - fd) / scale <= 1e-4, (gw, i, a, fd)


# ------------------------------------------------------- module equivalence

def test_slimconv_full_matches_plain_conv3d():
    torch.manual_seed(1)
    conv = SlimConv3d(5, 7, kernel=(3, 3, 3), stride=(1, 2, 2), bias=True)
    ref = torch.nn.Conv3d(5, 7, 3, stride=(1, 2, 2), padding=1, bias=True)
    with torch.no_grad():
        ref.weight.copy_(conv.weight)
        ref.bias.copy_(conv.bias)
    x = torch.rand(2, 5, 4, 8, 8)
    assert torch.equal(conv(x), ref(x))


def test_slimconv_sub_width_matches_sliced_conv():
    torch.manual_seed(2)
    conv = SlimConv3d(8, 8, kernel=(1, 3, 3))
    conv.gamma_w = 0.5
    x = torch.rand(2, 4, 2, 6, 6)
    out = conv(x)
    ref = F.conv3d(x, conv.weight[:4, :4], None, (1, 1, 1), (0, 1, 1))
    assert torch.equal(out, ref)


def test_calibbn_train_mode_matches_functional_batch_norm():
    torch.manual_seed(3)
    bn = CalibBN(6)
    with torch.no_grad():
        bn.weight.uniform_(0.5, 1.5)
        bn.bias.uniform_(-0.5, 0.5)
    bn.train()
    x = torch.rand(4, 6, 2, 5, 5)
    ref = F.batch_norm(x, None, None, bn.weight, bn.bias, training=True, eps=bn.eps)
    assert torch.allclose(bn(x), ref, atol=1e-6)
    assert torch.allclose(
        batch_norm_train_stats(x, bn.weight, bn.bias, bn.eps), ref, atol=1e-6
    )


def test_slimlinear_pinned_matches_full_matmul():
    torch.manual_seed(4)
    fc = SlimLinear(10, 4, pinned_in=2)
    fc.gamma_w = 0.5
    active_scal = width(8, 0.5)
    x = torch.rand(3, active_scal + 2)
    out = fc(x)
    w = torch.cat([fc.weight[:, :active_scal], fc.weight[:, 8:]], dim=1)
    assert torch.allclose(out, x @ w.t() + fc.bias, atol=1e-6)


# ------------------------------------------------------------- CalibBN bank

def test_calibbn_eval_requires_calibration():
    bn = CalibBN(4, name="s1.b0.bn1")
    bn.eval()
    bn.active_key = "w0.5000_s1.0000_t1.0000"
    bn.gamma_w = 0.5
    with pytest.raises(UncalibratedConfigError) as err:
        bn(torch.rand(2, 2, 1, 3, 3))
    assert "w0.5000" in str(err.value)


def test_calibbn_fallback_slices_full_stats():
    bn = CalibBN(4)
    bn.begin_calibration()
    bn.gamma_w = 1.0
    bn.active_key = FULL.key()
    x = torch.rand(8, 4, 2, 4, 4)
    bn(x)
    bn.finish_calibration(FULL.key())
    bn.eval()
    bn.gamma_w = 0.5
    bn.active_key = "w0.5000_s1.0000_t1.0000"
    with pytest.raises(UncalibratedConfigError):
        bn(x[:, :2])
    bn.fallback_to_full = True
    out = bn(x[:, :2])
    mean, var = bn.stat_bank[FULL.key()]
    ref = (x[:, :2] - mean[:2].view(1, 2, 1, 1, 1)) / torch.sqrt(
        var[:2].view(1, 2, 1, 1, 1) + bn.eps
    )
    ref = ref * bn.weight[:2].view(1, 2, 1, 1, 1) + bn.bias[:2].view(1, 2, 1, 1, 1)
    assert torch.allclose(out, ref, atol=1e-6)


# ------------------------------------------------------------- whole model

def test_build_model_seed_deterministic():
    a = build_model(small_arch(), seed=7)
    b = build_model(small_arch(), seed=7)
    for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert na == nb and torch.equal(pa, pb)


def test_build_model_rejects_cost_only_presets():
    with pytest.raises(ConfigError):
        build_model(get_arch("slow8x8_r50"))


def test_param_count_matches_cost_model():
    for name in ("toy_slim", "toy_slowfast"):
        arch = get_arch(name)
        model = build_model(arch, seed=0)
        torch_params = sum(p.numel() for p in model.parameters())
        assert torch_params == network_cost(arch, FULL).params


def test_forward_config_output_shape_and_calibrated_keys():
    arch = small_arch()
    model = build_model(arch, seed=5)
    model.train()
    clips = torch.rand(3, 3, arch.base_frames, arch.base_spatial, arch.base_spatial)
    for c in (FULL, Configuration(0.5, 0.57, 0.5)):
        out = forward_config(model, clips, c)
        assert out.shape == (3, arch.num_classes)
    assert calibrated_keys(model) == set()


def test_set_stats_fallback_toggles_every_layer():
    model = build_model(small_arch(), seed=6)
    set_stats_fallback(model, True)
    flags = [m.fallback_to_full for m in model.modules() if isinstance(m, CalibBN)]
    assert flags and all(flags)
    set_stats_fallback(model, False)
    assert not any(m.fallback_to_full for m in model.modules() if isinstance(m, CalibBN))
