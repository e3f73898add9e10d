import numpy as np
import pytest
import torch

from a3d.calibrate import calibrate_config, calibrate_many, calibration_batches
from a3d.checkpoint import param_checksum
from a3d.configspace import FULL, Configuration
from a3d.data import SynthSpec, compute_normalization, generate_split
from a3d.errors import UncalibratedConfigError
from a3d.presets import get_arch
from a3d.slimnet import CalibBN, SlimConv3d, build_model, calibrated_keys, forward_config

ARCH = get_arch("toy_slim", frames=4, spatial=16)
SUB = Configuration(0.5, 0.57, 0.5)


def small_model():
    return build_model(ARCH, seed=0)


def small_batches(n=4, batch=6):
    g = torch.Generator().manual_seed(0)
    return [torch.rand(batch, 3, ARCH.base_frames, ARCH.base_spatial, ARCH.base_spatial,
                       generator=g) for _ in range(n)]


def test_calibration_batches_deterministic_and_normalized():
    data = generate_split(SynthSpec(samples_per_class=8, seed=0), "train")
    norm = compute_normalization(data)
    a = calibration_batches(data, norm, batch_size=4, n_batches=3, seed=0)
    b = calibration_batches(data, norm, batch_size=4, n_batches=3, seed=0)
    c = calibration_batches(data, norm, batch_size=4, n_batches=3, seed=1)
    assert len(a) == 3 and all(x.shape[0] == 4 for x in a)
    assert all(torch.equal(x, y) for x, y in zip(a, b))
    assert not all(torch.equal(x, y) for x, y in zip(a, c))
    stacked = torch.cat(a)
    assert abs(float(stacked.mean())) < 0.5  # roughly centred after normalize


def test_calibrate_fills_banks_and_keeps_params():
    model = small_model()
    before = param_checksum(model)
    batches = small_batches()
    calibrate_many(model, [FULL, SUB], batches, passes=1)
    assert param_checksum(model) == before
    assert calibrated_keys(model) == {FULL.key(), SUB.key()}
    model.eval()
    out = forward_config(model, small_batches(1)[0], SUB)
    assert out.shape == (6, ARCH.num_classes)


def test_eval_without_calibration_raises():
    model = small_model()
    model.eval()
    with pytest.raises(UncalibratedConfigError):
        forward_config(model, small_batches(1)[0], FULL)


def test_calibration_matches_streaming_oracle():
    """CalibBN accumulators agree with an independent Welford implementation."""
    model = small_model()
    batches = small_batches(n=5)

    activations = {}

    def grab(name):
        def hook(mod, inputs, output):
            activations.setdefault(name, []).append(inputs[0].detach().double())
        return hook

    hooks = [
        mod.register_forward_hook(grab(name))
        for name, mod in model.named_modules()
        if isinstance(mod, CalibBN)
    ]
    calibrate_config(model, SUB, batches, passes=1)
    for h in hooks:
        h.remove()

    checked = 0
    for name, mod in model.named_modules():
        if not isinstance(mod, CalibBN):
            continue
        xs = activations[name]
        mean, var = welford(xs)
        got_mean, got_var = mod.stat_bank[SUB.key()]
        assert torch.allclose(got_mean.double(), mean, atol=1e-5), name
        assert torch.allclose(got_var.double(), var, atol=1e-5), name
        checked += 1
    assert checked > 0


def welford(chunks):
    """Streaming mean/variance over the channel axis of [B, C, ...] chunks."""
    count = 0
    mean = None
    m2 = None
    for x in chunks:
        flat = x.movedim(1, 0).reshape(x.shape[1], -1)
        for i in range(flat.shape[1]):
            v = flat[:, i]
            count += 1
            if mean is None:
                mean = v.clone()
                m2 = torch.zeros_like(v)
                continue
            delta = v - mean
            mean += delta / count
            m2 += delta * (v - mean)
    return mean, m2 / count  # biased, matching batch-norm convention


def test_two_passes_match_single_pass_stats():
    """Stats are computed from the union of passes; identical batches twice
    give the same mean/var as once."""
    model_a, model_b = small_model(), small_model()
    batches = small_batches(n=3)
    calibrate_config(model_a, SUB, batches, passes=1)
    calibrate_config(model_b, SUB, batches, passes=2)
    for (na, ma), (_nb, mb) in zip(model_a.named_modules(), model_b.named_modules()):
        if isinstance(ma, CalibBN):
            mean_a, var_a = ma.stat_bank[SUB.key()]
            mean_b, var_b = mb.stat_bank[SUB.key()]
            assert torch.allclose(mean_a, mean_b, atol=1e-6), na
            assert torch.allclose(var_a, var_b, atol=1e-6), na


def test_single_batch_calibration_exactness():
    """With one calibration batch, eval output equals train-mode output."""
    model = small_model()
    batch = small_batches(n=1)[0]
    calibrate_config(model, FULL, [batch], passes=1)
    model.train()
    with torch.no_grad():
        train_out = forward_config(model, batch, FULL)
    model.eval()
    with torch.no_grad():
        eval_out = forward_config(model, batch, FULL)
    assert torch.allclose(train_out, eval_out, atol=1e-4)


def test_recalibration_overwrites_key():
    model = small_model()
    a = small_batches(n=2)
    b = [x + 0.25 for x in a]
    calibrate_config(model, FULL, a, passes=1)
    first = {n: m.stat_bank[FULL.key()][0].clone() for n, m in model.named_modules()
             if isinstance(m, CalibBN)}
    calibrate_config(model, FULL, b, passes=1)
    changed = [
        not torch.equal(first[n], m.stat_bank[FULL.key()][0])
        for n, m in model.named_modules() if isinstance(m, CalibBN)
    ]
    assert any(changed)
