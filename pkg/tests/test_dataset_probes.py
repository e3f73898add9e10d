"""Linear-probe qualification of the synthetic task.

The task factorises into texture x motion. These probes pin down the two
properties the adaptive network is supposed to exploit: motion is readable
only from multiple frames (temporal resolution matters) and texture is
readable only at full spatial resolution (spatial resolution matters).
Probes are logistic regressions on cheap hand features, deliberately
architecture-free.
"""

import numpy as np
import torch
import torch.nn.functional as F
from sklearn.linear_model import LogisticRegression

from a3d.data import SynthSpec, generate_split

TRAIN = generate_split(SynthSpec(samples_per_class=25, seed=0), "train")
VAL = generate_split(SynthSpec(samples_per_class=10, seed=0), "val")


def probe_accuracy(xtr, ytr, xva, yva):
    clf = LogisticRegression(max_iter=3000)
    clf.fit(xtr, ytr)
    return 100.0 * clf.score(xva, yva)


def pooled_pixels(batch, frames):
    x = batch.data[:, :, frames]
    x = F.avg_pool2d(x.reshape(-1, 1, 32, 32), 4).reshape(len(batch.data), -1)
    return x.numpy()


def lag_energies(batch, pool=1):
    """Mean absolute pixel difference at lags 1..3 along each axis.

    Shift-invariant, so the probe cannot cheat off the patch position.
    """
    x = batch.data[:, :, 4].mean(dim=1, keepdim=True)
    if pool > 1:
        x = F.avg_pool2d(x, pool)
    feats = []
    for lag in (1, 2, 3):
        dx = (x[..., :, lag:] - x[..., :, :-lag]).abs().mean(dim=(1, 2, 3))
        dy = (x[..., lag:, :] - x[..., :-lag, :]).abs().mean(dim=(1, 2, 3))
        feats += [dx, dy]
    return torch.stack(feats, dim=1).numpy()


MOTION_TR, MOTION_VA = (TRAIN.labels % 4).numpy(), (VAL.labels % 4).numpy()
TEXTURE_TR, TEXTURE_VA = (TRAIN.labels // 4).numpy(), (VAL.labels // 4).numpy()


def test_motion_readable_from_full_clip():
    acc = probe_accuracy(
        pooled_pixels(TRAIN, list(range(8))), MOTION_TR,
        pooled_pixels(VAL, list(range(8))), MOTION_VA,
    )
    assert acc >= 90.0, acc


def test_motion_unreadable_from_one_shared_half_frame():
    """Frames at u <= 0.5 are common to all motion classes by construction."""
    acc = probe_accuracy(
        pooled_pixels(TRAIN, [3]), MOTION_TR,
        pooled_pixels(VAL, [3]), MOTION_VA,
    )
    assert acc <= 35.0, acc


def test_texture_readable_at_full_resolution():
    acc = probe_accuracy(lag_energies(TRAIN), TEXTURE_TR, lag_energies(VAL), TEXTURE_VA)
    assert acc >= 90.0, acc


def test_texture_unreadable_after_4x_blur():
    """Average pooling to 8x8 erases the 2-3 px texture periods."""
    acc = probe_accuracy(
        lag_energies(TRAIN, pool=4), TEXTURE_TR, lag_energies(VAL, pool=4), TEXTURE_VA
    )
    assert acc <= 35.0, acc
