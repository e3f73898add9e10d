"""Class activation analysis across space and time.

The heads here are global-average-pool plus a linear layer, so the classic
formulation applies directly: weighting the final feature maps by the
classifier row of the predicted class gives a per-location contribution to
that class's pre-softmax score. Rectifying and summing per frame turns the
same evidence into a temporal profile.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .configspace import Configuration
from .costmodel import width
from .errors import ConfigError
from .resample import resample_clip, spatial_resize


@dataclass
class CamResult:
    """spatial_maps: [T', S', S'] nonnegative, upsampled to the input resolution;
    temporal_profile: [T'], sums to the positive part of the class score."""

    spatial_maps: torch.Tensor
    temporal_profile: torch.Tensor
    pred_class: int
    class_score: float


def compute_cam(model, c: Configuration, clip: torch.Tensor) -> CamResult:
    """Activation maps of the predicted class for one clip at configuration c.

    The clip may be full-resolution (it is resampled to c) or already
    resampled (resampling is idempotent). Single-pathway models only: the
    two-pathway head mixes pooled features of differently shaped pathways.
    """
    if getattr(model, "kind", "single") != "single":
        raise ConfigError("activation maps are defined for single-pathway models")
    arch = model.arch
    x = resample_clip(clip, c, base_frames=arch.base_frames, base_pixels=arch.base_spatial)
    if x.dim() == 4:
        x = x[None]
    model.eval()
    model.set_config(c)
    with torch.no_grad():
        feat = model.forward_features(x)[0]              # [C', T', h, w]
        pooled = feat.mean(dim=(1, 2, 3))
        logits = model.head_fc(pooled[None])[0]
        pred = int(logits.argmax())
        w_row = model.head_fc.weight[pred, :feat.shape[0]]
        cam = F.relu(torch.einsum("c,cthw->thw", w_row, feat))
        t, h, w_ = cam.shape
        profile = cam.sum(dim=(1, 2)) / (t * h * w_)
        pixels = x.shape[-1]
        maps = spatial_resize(cam[None], pixels)[0] if (h, w_) != (pixels, pixels) else cam
    return CamResult(spatial_maps=maps, temporal_profile=profile,
                     pred_class=pred, class_score=float(logits[pred]))


def active_head_width(model, c: Configuration) -> int:
    """Channel count the head consumes at c (sanity helper for tests)."""
    fc = model.head_fc
    return width(fc.in_features - fc.pinned_in, c.gamma_w) + fc.pinned_in


def save_cam(result: CamResult, out_dir):
    """Per-frame grayscale PNG heatmaps plus the temporal profile as CSV."""
    from PIL import Image

    os.makedirs(out_dir, exist_ok=True)
    peak = float(result.spatial_maps.max())
    scale = 255.0 / peak if peak > 0 else 0.0
    for t in range(result.spatial_maps.shape[0]):
        arr = (result.spatial_maps[t].numpy() * scale).astype(np.uint8)
        Image.fromarray(arr, mode="L").save(os.path.join(out_dir, f"frame_{t:02d}.png"))
    with open(os.path.join(out_dir, "temporal_profile.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["frame", "contribution"])
        for t, v in enumerate(result.temporal_profile.tolist()):
            w.writerow([t, f"{v:.6f}"])
    with open(os.path.join(out_dir, "summary.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["pred_class", "class_score", "profile_argmax"])
        w.writerow([result.pred_class, f"{result.class_score:.6f}",
                    int(result.temporal_profile.argmax())])
