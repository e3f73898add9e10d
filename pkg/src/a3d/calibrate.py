"""Post-training BN calibration.

A trained model has no usable normalisation statistics: training normalised
every batch with its own moments. Calibration forwards a fixed stream of
training-distribution batches at one configuration and stores each BN layer's
aggregate input mean and biased variance under that configuration's key.
Upstream BN layers normalise with batch statistics during the pass (single
joint pass), exactly as they did in training. Parameters are never touched.
"""

from __future__ import annotations

import numpy as np
import torch

from .configspace import Configuration
from .data import ClipBatch, normalize
from .errors import ConfigError
from .slimnet import CalibBN, forward_config
from .training import augment

CALIB_BATCHES = 32
CALIB_PASSES = 2


def calibration_batches(train_data: ClipBatch, norm, batch_size: int = 16,
                        n_batches: int = CALIB_BATCHES, seed: int = 0) -> list[torch.Tensor]:
    """Deterministic augmented full-resolution batches from the training split.

    The same list serves every configuration; per-configuration resampling
    happens inside the forward pass.
    """
    if n_batches < 1:
        raise ConfigError("calibration needs at least one batch")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(777,)))
    mean, std = norm
    batches = []
    for _ in range(n_batches):
        idx = torch.from_numpy(rng.choice(len(train_data), size=batch_size, replace=False))
        clips = augment(train_data.data[idx], rng)
        batches.append(normalize(clips, mean, std))
    return batches


def calibrate_config(model, c: Configuration, batches: list[torch.Tensor],
                     passes: int = CALIB_PASSES):
    """Populate stat_bank[c] in every BN layer of the model."""
    if not batches:
        raise ConfigError("empty calibration stream")
    bns = [m for m in model.modules() if isinstance(m, CalibBN)]
    model.eval()
    for bn in bns:
        bn.begin_calibration()
    with torch.no_grad():
        for _ in range(passes):
            for clips in batches:
                forward_config(model, clips, c)
    key = c.key()
    for bn in bns:
        bn.finish_calibration(key)


def calibrate_many(model, configs, batches: list[torch.Tensor],
                   passes: int = CALIB_PASSES, progress=None):
    for i, c in enumerate(configs):
        calibrate_config(model, c, batches, passes=passes)
        if progress is not None:
            progress(i + 1, len(configs), c)
