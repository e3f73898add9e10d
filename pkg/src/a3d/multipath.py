"""Two-pathway network with lateral fusion.

The slow pathway is the adaptive one: the configuration c scales its width and
its input resolution. The fast pathway always consumes alpha * base_frames
frames at full spatial size with a fixed (non-slimmable) width, so its features
are independent of c. Each lateral connection convolves the fast features with
a (5, 1, 1) kernel at temporal stride alpha, resizes them to the slow pathway's
current feature shape (bilinear in space, uniform frame selection in time) and
concatenates them AFTER the slow channels; the next slow convolution consumes
that fused block through its pinned input channels.

The joint head global-average-pools both pathways and classifies the
concatenated vector, slow features first.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .configspace import FULL, Configuration
from .costmodel import ArchSpec
from .errors import ConfigError
from .resample import spatial_resize, target_frames, target_pixels, temporal_subsample
from .slimnet import CalibBN, SlimBackbone, SlimConv3d, SlimLinear


class FusionBlock(nn.Module):
    """Lateral connection: strided temporal conv on fast features, then shape
    alignment to the slow pathway."""

    def __init__(self, spec):
        super().__init__()
        self.conv = SlimConv3d(spec.in_channels, spec.out_channels, spec.kernel,
                               spec.stride, scalable_in=False, scalable_out=False,
                               bias=spec.bias)

    def forward(self, fast_feat: torch.Tensor, slow_shape: tuple[int, int, int]) -> torch.Tensor:
        t, h, w = slow_shape
        if h != w:
            raise ConfigError(f"fusion expects square slow maps, got {h}x{w}")
        y = self.conv(fast_feat)
        y = spatial_resize(y, h)
        return temporal_subsample(y, t)


def fuse(slow_feat: torch.Tensor, fast_feat: torch.Tensor, block: FusionBlock) -> torch.Tensor:
    """Concatenate slow features with shape-aligned fused fast features (fast last)."""
    fused = block(fast_feat, tuple(slow_feat.shape[-3:]))
    return torch.cat([slow_feat, fused], dim=1)


def _stage_of_tap(pathway, layer_index: int) -> int:
    """Stage number a fusion tap sits after; taps must close a stage."""
    label = pathway.layers[layer_index].label
    if not label.startswith("s") or "." not in label:
        raise ConfigError(f"fusion tap {label!r} is not at a stage boundary")
    return int(label.split(".")[0][1:])


class TwoPathwayNet(nn.Module):
    """Executable two-pathway network built from a residual_basic ArchSpec.

    forward takes the FULL-rate clip (alpha * base_frames frames, full spatial
    size); the slow input is derived from it internally according to the active
    configuration, so callers never resample clips for this model themselves.
    """

    kind = "two_pathway"

    def __init__(self, arch: ArchSpec):
        super().__init__()
        if len(arch.pathways) != 2:
            raise ConfigError(f"{arch.name!r} does not define two pathways")
        self.arch = arch
        self.config = FULL
        self.slow = SlimBackbone(arch, pathway=arch.pathways[0], with_head=False)
        self.fast = SlimBackbone(arch, pathway=arch.pathways[1], with_head=False)
        if len(self.slow.stages) != len(self.fast.stages):
            raise ConfigError("pathways disagree on stage count")
        self.fusions = nn.ModuleDict()
        for fu in arch.fusions:
            s_stage = _stage_of_tap(arch.pathways[0], fu.slow_after)
            f_stage = _stage_of_tap(arch.pathways[1], fu.fast_after)
            if s_stage != f_stage:
                raise ConfigError(f"fusion taps stages {s_stage} and {f_stage}")
            self.fusions[str(s_stage)] = FusionBlock(fu.layer)
        head = next(l for l in arch.main.layers if l.label == "head.fc")
        self.head_fc = SlimLinear(head.in_channels, head.out_channels,
                                  scalable_in=head.width_scalable_in,
                                  scalable_out=head.width_scalable_out,
                                  pinned_in=head.pinned_in, bias=head.bias)

    def set_config(self, c: Configuration):
        self.config = c
        key = c.key()
        for m in self.modules():
            if isinstance(m, (SlimConv3d, SlimLinear, CalibBN)):
                m.gamma_w = c.gamma_w
            if isinstance(m, CalibBN):
                m.active_key = key
        return self

    def derive_slow_input(self, clip: torch.Tensor) -> torch.Tensor:
        """Slow-pathway input at the active configuration, taken from the full clip."""
        expect_t = self.arch.alpha * self.arch.base_frames
        if clip.shape[-3] != expect_t:
            raise ConfigError(
                f"{self.arch.name!r} wants {expect_t}-frame clips, got {clip.shape[-3]}"
            )
        c = self.config
        x = temporal_subsample(clip, target_frames(c.gamma_t, self.arch.base_frames))
        return spatial_resize(x, target_pixels(c.gamma_s, self.arch.base_spatial))

    def forward_features(self, clip: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Final feature maps of both pathways, fusion applied along the way."""
        hs = self.slow.stem(self.derive_slow_input(clip))
        hf = self.fast.stem(clip)
        for i, (s_stage, f_stage) in enumerate(zip(self.slow.stages, self.fast.stages), start=1):
            for block in s_stage:
                hs = block(hs)
            for block in f_stage:
                hf = block(hf)
            if str(i) in self.fusions:
                hs = fuse(hs, hf, self.fusions[str(i)])
        return hs, hf

    def forward(self, clip: torch.Tensor) -> torch.Tensor:
        hs, hf = self.forward_features(clip)
        pooled = torch.cat([hs.mean(dim=(2, 3, 4)), hf.mean(dim=(2, 3, 4))], dim=1)
        return self.head_fc(pooled)
