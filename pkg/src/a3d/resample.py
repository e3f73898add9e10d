"""Clip resampling: the input-side half of a configuration.

Temporal down-sampling keeps frames at indices floor(i * T / T'), i < T', so a
T=8 clip at gamma_t=0.5 keeps frames {0, 2, 4, 6}. Spatial down-sampling is a
bilinear resize (align_corners=False) to a square round_half_up(gamma_s * S).
Both steps are exact no-ops when the target size equals the current size.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F

from .configspace import Configuration, round_half_up
from .errors import ConfigError


def uniform_frame_indices(total: int, keep: int) -> list[int]:
    """Evenly spread frame indices: floor(i * total / keep) for i in range(keep).

    Shared by training-time resampling, the fusion block's temporal down-sampling
    and clip-folder ingestion.
    """
    if keep < 1 or total < 1:
        raise ConfigError(f"frame counts must be positive, got total={total} keep={keep}")
    if keep > total:
        raise ConfigError(f"cannot keep {keep} frames out of {total}")
    return [(i * total) // keep for i in range(keep)]


def target_frames(gamma_t: float, base_frames: int) -> int:
    return max(1, round_half_up(gamma_t * base_frames))


def target_pixels(gamma_s: float, base_pixels: int) -> int:
    return max(1, round_half_up(gamma_s * base_pixels))


def spatial_resize(clip: torch.Tensor, pixels: int) -> torch.Tensor:
    """Per-frame bilinear resize of a [..., C, T, H, W] clip to pixels^2."""
    if clip.shape[-1] == pixels and clip.shape[-2] == pixels:
        return clip
    lead = clip.shape[:-4]
    c, t, h, w = clip.shape[-4:]
    flat = clip.reshape(-1, c, t, h, w).transpose(1, 2).reshape(-1, c, h, w)
    flat = F.interpolate(flat, size=(pixels, pixels), mode="bilinear", align_corners=False)
    out = flat.reshape(-1, t, c, pixels, pixels).transpose(1, 2)
    return out.reshape(*lead, c, t, pixels, pixels)


def temporal_subsample(clip: torch.Tensor, frames: int) -> torch.Tensor:
    """Keep uniformly spread frames along the T axis of [..., C, T, H, W]."""
    t = clip.shape[-3]
    if t == frames:
        return clip
    idx = torch.as_tensor(uniform_frame_indices(t, frames), device=clip.device)
    return clip.index_select(clip.dim() - 3, idx)


def resample_clip(
    clip,
    c: Configuration,
    base_frames: int | None = None,
    base_pixels: int | None = None,
):
    """Resample a clip (or ClipBatch) to configuration c.

    Targets are computed against base_frames/base_pixels, which default to the
    clip's own dimensions. Passing the original full-resolution base makes the
    operation idempotent: a clip already at the target size is returned as-is.
    """
    from .data import ClipBatch  # local import, data also imports this module

    if isinstance(clip, ClipBatch):
        return ClipBatch(resample_clip(clip.clips, c, base_frames, base_pixels),
                         clip.labels)
    t, s = clip.shape[-3], clip.shape[-1]
    frames = target_frames(c.gamma_t, base_frames if base_frames else t)
    pixels = target_pixels(c.gamma_s, base_pixels if base_pixels else s)
    if frames > t:
        raise ConfigError(
            f"clip has {t} frames but configuration asks for {frames}; "
            f"pass the clip at full resolution"
        )
    out = temporal_subsample(clip, frames)
    return spatial_resize(out, pixels)
