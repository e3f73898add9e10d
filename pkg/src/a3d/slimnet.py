"""Slimmable 3D network modules.

Every weight tensor is allocated at full width; a configuration selects a prefix
slice of each dimension, so the parameters of a narrow sub-network are literally
a view into the full network's parameters (training the slice trains the full
model). Post-fusion layers additionally consume a block of channels pinned to
the END of the input dimension, which never scales (see multipath).

Batch normalisation uses batch statistics during training for every sampled
configuration and never maintains running statistics. Deployable statistics are
produced by an explicit calibration pass per configuration and stored in each
layer's stat_bank under the configuration's canonical key; evaluating at a key
with no entry is an error.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .configspace import FULL, Configuration
from .costmodel import ArchSpec, LayerSpec, Pathway, width
from .errors import ConfigError, UncalibratedConfigError


def batch_norm_train_stats(x: torch.Tensor, scale: torch.Tensor, shift: torch.Tensor,
                           eps: float = 1e-5) -> torch.Tensor:
    """Normalise x with its own batch statistics (biased variance), then affine.

    Pure function of its inputs; this is the training-mode path of CalibBN.
    """
    dims = (0,) + tuple(range(2, x.dim()))
    mean = x.mean(dims)
    var = x.var(dims, unbiased=False)
    shape = (1, x.shape[1]) + (1,) * (x.dim() - 2)
    y = (x - mean.reshape(shape)) / torch.sqrt(var.reshape(shape) + eps)
    return y * scale.reshape(shape) + shift.reshape(shape)


class SlimConv3d(nn.Module):
    """Conv3d whose active kernel is a prefix view of the full weight.

    With pinned_in > 0, the active input channels are the first
    width(Ci - pinned_in, gamma_w) rows plus the LAST pinned_in rows; the
    forward pass then runs as two convolutions over weight views summed
    together, so gradients still land inside the full parameter.
    """

    def __init__(self, in_channels, out_channels, kernel=(1, 1, 1), stride=(1, 1, 1),
                 scalable_in=True, scalable_out=True, pinned_in=0, bias=False):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = tuple(kernel)
        self.stride = tuple(stride)
        self.padding = tuple(k // 2 for k in self.kernel)
        self.scalable_in = scalable_in
        self.scalable_out = scalable_out
        self.pinned_in = pinned_in
        self.gamma_w = 1.0
        self.weight = nn.Parameter(torch.empty(out_channels, in_channels, *self.kernel))
        self.bias = nn.Parameter(torch.zeros(out_channels)) if bias else None
        nn.init.kaiming_normal_(self.weight, mode="fan_out", nonlinearity="relu")

    def active_out(self) -> int:
        return width(self.out_channels, self.gamma_w) if self.scalable_out else self.out_channels

    def forward(self, x):
        co = self.active_out()
        ci = x.shape[1]
        bias = self.bias[:co] if (self.bias is not None and self.scalable_out) else self.bias
        n_scal = ci - self.pinned_in
        if self.pinned_in > 0 and n_scal < self.in_channels - self.pinned_in:
            w_scal = self.weight[:co, :n_scal]
            w_pin = self.weight[:co, self.in_channels - self.pinned_in:]
            y = F.conv3d(x[:, :n_scal], w_scal, bias, self.stride, self.padding)
            y = y + F.conv3d(x[:, n_scal:], w_pin, None, self.stride, self.padding)
            return y
        return F.conv3d(x, self.weight[:co, :ci], bias, self.stride, self.padding)

    def extra_repr(self):
        return (f"{self.in_channels}->{self.out_channels}, k={self.kernel}, "
                f"s={self.stride}, pinned={self.pinned_in}")


def active_slice(conv: SlimConv3d, c: Configuration):
    """Weight view(s) active at configuration c.

    Returns a single view (out, in) prefix for ordinary layers; for layers with
    pinned input channels, a (scalable_view, pinned_view) pair. Mutating a view
    mutates the corresponding region of the full parameter.
    """
    co = width(conv.out_channels, c.gamma_w) if conv.scalable_out else conv.out_channels
    if conv.pinned_in == 0:
        ci = (width(conv.in_channels, c.gamma_w) if conv.scalable_in
              else conv.in_channels)
        return conv.weight[:co, :ci]
    n_scal = width(conv.in_channels - conv.pinned_in, c.gamma_w)
    return (conv.weight[:co, :n_scal],
            conv.weight[:co, conv.in_channels - conv.pinned_in:])


class SlimLinear(nn.Module):
    """Linear layer with a prefix-sliced input (and optional pinned tail)."""

    def __init__(self, in_features, out_features, scalable_in=True, scalable_out=False,
                 pinned_in=0, bias=True):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        self.scalable_in = scalable_in
        self.scalable_out = scalable_out
        self.pinned_in = pinned_in
        self.gamma_w = 1.0
        self.weight = nn.Parameter(torch.empty(out_features, in_features))
        self.bias = nn.Parameter(torch.zeros(out_features)) if bias else None
        nn.init.normal_(self.weight, std=0.01)

    def forward(self, x):
        co = width(self.out_features, self.gamma_w) if self.scalable_out else self.out_features
        ci = x.shape[-1]
        bias = self.bias[:co] if self.bias is not None else None
        n_scal = ci - self.pinned_in
        if self.pinned_in > 0 and n_scal < self.in_features - self.pinned_in:
            y = F.linear(x[..., :n_scal], self.weight[:co, :n_scal], bias)
            return y + F.linear(x[..., n_scal:],
                                self.weight[:co, self.in_features - self.pinned_in:])
        return F.linear(x, self.weight[:co, :ci], bias)


class CalibBN(nn.Module):
    """BN with shared prefix-sliced affine and per-configuration statistics.

    Training mode normalises with the batch's own statistics (no running-stat
    updates). Evaluation looks up (mean, var) in stat_bank under the active
    configuration key; entries appear only through calibration. The optional
    fallback reuses the full configuration's statistics sliced to the active
    channels, for the explicit uncalibrated baseline.
    """

    def __init__(self, channels, eps=1e-5, name=""):
        super().__init__()
        self.channels = channels
        self.eps = eps
        self.name = name
        self.weight = nn.Parameter(torch.ones(channels))   # scale
        self.bias = nn.Parameter(torch.zeros(channels))    # shift
        self.gamma_w = 1.0
        self.active_key = FULL.key()
        self.calibrating = False
        self.fallback_to_full = False
        self.stat_bank: dict[str, tuple[torch.Tensor, torch.Tensor]] = {}
        self._acc = None

    def begin_calibration(self):
        self.calibrating = True
        self._acc = None

    def finish_calibration(self, key: str):
        if self._acc is None:
            raise ConfigError(f"calibration of {self.name or 'bn'} saw no batches")
        n, s, sq = self._acc
        mean = s / n
        var = sq / n - mean * mean
        self.stat_bank[key] = (mean.float(), var.clamp_min(0).float())
        self.calibrating = False
        self._acc = None

    def _lookup(self, channels):
        stats = self.stat_bank.get(self.active_key)
        if stats is None and self.fallback_to_full:
            stats = self.stat_bank.get(FULL.key())
        if stats is None:
            raise UncalibratedConfigError(self.active_key, self.name)
        mean, var = stats
        if mean.shape[0] < channels:
            raise ConfigError(
                f"stat bank entry {self.active_key} of {self.name or 'bn'} has "
                f"{mean.shape[0]} channels, need {channels}"
            )
        return mean[:channels], var[:channels]

    def forward(self, x):
        cact = x.shape[1]
        scale, shift = self.weight[:cact], self.bias[:cact]
        if self.training or self.calibrating:
            if self.calibrating:
                dims = (0,) + tuple(range(2, x.dim()))
                n = x.numel() // cact
                s = x.sum(dims, dtype=torch.float64)
                sq = (x.double() ** 2).sum(dims)
                if self._acc is None:
                    self._acc = [0, torch.zeros_like(s), torch.zeros_like(sq)]
                self._acc[0] += n
                self._acc[1] += s
                self._acc[2] += sq
            return batch_norm_train_stats(x, scale, shift, self.eps)
        mean, var = self._lookup(cact)
        shape = (1, cact) + (1,) * (x.dim() - 2)
        y = (x - mean.reshape(shape)) / torch.sqrt(var.reshape(shape) + self.eps)
        return y * scale.reshape(shape) + shift.reshape(shape)

    def extra_repr(self):
        return f"{self.channels}, calibrated_keys={len(self.stat_bank)}"


class BasicBlock(nn.Module):
    """Two-conv residual block; conv1 carries the block's stride."""

    def __init__(self, conv1, bn1, conv2, bn2, proj=None, proj_bn=None):
        super().__init__()
        self.conv1, self.bn1 = conv1, bn1
        self.conv2, self.bn2 = conv2, bn2
        self.proj, self.proj_bn = proj, proj_bn

    def forward(self, x):
        h = F.relu(self.bn1(self.conv1(x)))
        h = self.bn2(self.conv2(h))
        sc = self.proj_bn(self.proj(x)) if self.proj is not None else x
        return F.relu(h + sc)


def _module_for(spec: LayerSpec):
    if spec.kind == "conv3d":
        return SlimConv3d(spec.in_channels, spec.out_channels, spec.kernel, spec.stride,
                          scalable_in=spec.width_scalable_in,
                          scalable_out=spec.width_scalable_out,
                          pinned_in=spec.pinned_in, bias=spec.bias)
    if spec.kind == "bn":
        return CalibBN(spec.out_channels, name=spec.label)
    raise ConfigError(f"no module builder for layer kind {spec.kind!r}")


class SlimBackbone(nn.Module):
    """Executable single-pathway network built from a residual_basic ArchSpec."""

    kind = "single"

    def __init__(self, arch: ArchSpec, pathway: Pathway | None = None, with_head=True):
        super().__init__()
        self.arch = arch
        self.config = FULL
        pathway = pathway if pathway is not None else arch.main
        by_label = {l.label: l for l in pathway.layers}
        self.stem_conv = _module_for(by_label["stem.conv"])
        self.stem_bn = _module_for(by_label["stem.bn"])
        stages = []
        i = 1
        while f"s{i}.b0.conv1" in by_label:
            blocks = []
            b = 0
            while f"s{i}.b{b}.conv1" in by_label:
                p = f"s{i}.b{b}"
                has_proj = f"{p}.proj" in by_label
                block = BasicBlock(
                    _module_for(by_label[f"{p}.conv1"]), _module_for(by_label[f"{p}.bn1"]),
                    _module_for(by_label[f"{p}.conv2"]), _module_for(by_label[f"{p}.bn2"]),
                    _module_for(by_label[f"{p}.proj"]) if has_proj else None,
                    _module_for(by_label[f"{p}.proj_bn"]) if has_proj else None,
                )
                block.bn2.weight.data.zero_()   # residual branch starts as identity
                blocks.append(block)
                b += 1
            stages.append(nn.ModuleList(blocks))
            i += 1
        self.stages = nn.ModuleList(stages)
        self.head_fc = None
        if with_head and "head.fc" in by_label:
            spec = by_label["head.fc"]
            self.head_fc = SlimLinear(spec.in_channels, spec.out_channels,
                                      scalable_in=spec.width_scalable_in,
                                      scalable_out=spec.width_scalable_out,
                                      pinned_in=spec.pinned_in, bias=spec.bias)

    def set_config(self, c: Configuration):
        self.config = c
        key = c.key()
        for m in self.modules():
            if isinstance(m, (SlimConv3d, SlimLinear, CalibBN)):
                m.gamma_w = c.gamma_w
            if isinstance(m, CalibBN):
                m.active_key = key
        return self

    def stem(self, x):
        return F.relu(self.stem_bn(self.stem_conv(x)))

    def forward_features(self, x):
        h = self.stem(x)
        for stage in self.stages:
            for block in stage:
                h = block(h)
        return h

    def forward(self, x):
        h = self.forward_features(x)
        pooled = h.mean(dim=(2, 3, 4))
        return self.head_fc(pooled)


def build_model(arch: ArchSpec, seed: int | None = None):
    """Executable network for a buildable ArchSpec (toy presets).

    With a seed, initialisation is deterministic. Two-pathway archs come back
    as multipath.TwoPathwayNet.
    """
    if arch.topology != "residual_basic":
        raise ConfigError(
            f"architecture {arch.name!r} is cost-model-only (topology {arch.topology!r})"
        )
    if seed is not None:
        torch.manual_seed(seed)
    if len(arch.pathways) > 1:
        from .multipath import TwoPathwayNet
        return TwoPathwayNet(arch)
    return SlimBackbone(arch)


def forward_config(model: nn.Module, clips: torch.Tensor, c: Configuration) -> torch.Tensor:
    """Set c and forward, resampling the clip for single-pathway models.

    Two-pathway models receive the full-rate clip untouched; they derive the
    slow input themselves.
    """
    from .resample import resample_clip

    model.set_config(c)
    if model.kind == "two_pathway":
        return model(clips)
    arch = model.arch
    x = resample_clip(clips, c, base_frames=arch.base_frames, base_pixels=arch.base_spatial)
    return model(x)


def set_stats_fallback(model: nn.Module, enabled: bool):
    """Toggle the uncalibrated-baseline fallback (full-config stats, sliced)."""
    for m in model.modules():
        if isinstance(m, CalibBN):
            m.fallback_to_full = enabled


def calibrated_keys(model: nn.Module) -> set[str]:
    """Configuration keys calibrated in every BN layer of the model."""
    keys = None
    for m in model.modules():
        if isinstance(m, CalibBN):
            k = set(m.stat_bank)
            keys = k if keys is None else (keys & k)
    return keys or set()
