"""Architecture presets.

The R50 presets reproduce the published layer arithmetic of the Slow-8x8 and
SlowFast-4x16 video backbones and exist for the cost model only. The toy presets
(topology "residual_basic") are buildable as executable networks: 4 stages with
channels 16-32-64-128, two basic blocks per stage, temporal kernels only in the
last two stages, 8x32x32 input. The stem and the stage transitions carry the
spatial strides, leaving 2x2 maps before the head at full resolution.
"""

from __future__ import annotations

from .costmodel import ArchSpec, FusionSpec, LayerSpec, Pathway
from .errors import ConfigError


def _conv(label, ci, co, k=(1, 1, 1), s=(1, 1, 1), scal_in=True, scal_out=True,
          pinned=0, bias=False, kind="conv3d"):
    return LayerSpec(label=label, kind=kind, in_channels=ci, out_channels=co,
                     kernel=k, stride=s, width_scalable_in=scal_in,
                     width_scalable_out=scal_out, pinned_in=pinned, bias=bias)


def _bn(label, c, scal=True):
    return LayerSpec(label=label, kind="bn", in_channels=c, out_channels=c,
                     width_scalable_in=scal, width_scalable_out=scal)


# ---------------------------------------------------------------------------
# R50 pathways (cost model only)
# ---------------------------------------------------------------------------

_R50_STAGES = ((3, 64, 256), (4, 128, 512), (6, 256, 1024), (3, 512, 2048))


def _r50_pathway(prefix, stem_kt, stage_kt, ch_scale=1.0, scalable=True, pinned=None):
    """Bottleneck-v1.5 pathway: stride on the 3x3 conv, temporal kernel on the
    first 1x1 conv of each block where stage_kt says so. pinned maps stage index
    to fused fast channels entering that stage's first block."""
    def ch(c):
        return max(1, round(c * ch_scale))

    pinned = pinned or {}
    layers = [
        _conv(f"{prefix}stem.conv", 3, ch(64), k=(stem_kt, 7, 7), s=(1, 2, 2),
              scal_in=False, scal_out=scalable),
        _bn(f"{prefix}stem.bn", ch(64), scal=scalable),
        LayerSpec(label=f"{prefix}pool1", kind="pool3d", in_channels=ch(64),
                  out_channels=ch(64), kernel=(1, 3, 3), stride=(1, 2, 2)),
    ]
    cin = ch(64)
    for i, (blocks, mid, cout) in enumerate(_R50_STAGES):
        mid, cout = ch(mid), ch(cout)
        for b in range(blocks):
            p = f"{prefix}res{i + 2}.b{b}"
            ci = cin if b == 0 else cout
            pin = pinned.get(i, 0) if b == 0 else 0
            stride = (1, 2, 2) if (b == 0 and i > 0) else (1, 1, 1)
            layers += [
                _conv(f"{p}.conv1", ci + pin, mid, k=(stage_kt[i], 1, 1),
                      scal_in=scalable, scal_out=scalable, pinned=pin),
                _bn(f"{p}.bn1", mid, scal=scalable),
                _conv(f"{p}.conv2", mid, mid, k=(1, 3, 3), s=stride,
                      scal_in=scalable, scal_out=scalable),
                _bn(f"{p}.bn2", mid, scal=scalable),
                _conv(f"{p}.conv3", mid, cout, scal_in=scalable, scal_out=scalable),
                _bn(f"{p}.bn3", cout, scal=scalable),
            ]
            if b == 0:
                layers += [
                    _conv(f"{p}.proj", ci + pin, cout, s=stride,
                          scal_in=scalable, scal_out=scalable, pinned=pin),
                    _bn(f"{p}.proj_bn", cout, scal=scalable),
                ]
        cin = cout
    return layers, cin


def slow8x8_r50(num_classes: int = 400) -> ArchSpec:
    """Slow-pathway R50, 8 frames at stride 8, 256^2 full test crop.

    Full configuration: 54.5 GFLOPs per view, 32.5M parameters.
    """
    layers, cfinal = _r50_pathway("", stem_kt=1, stage_kt=(1, 1, 3, 3))
    layers += [
        LayerSpec(label="head.gap", kind="gap", in_channels=cfinal, out_channels=cfinal),
        _conv("head.fc", cfinal, num_classes, scal_in=True, scal_out=False,
              bias=True, kind="fc"),
    ]
    return ArchSpec(name="slow8x8_r50", num_classes=num_classes, base_frames=8,
                    base_spatial=256, pathways=(Pathway("slow", tuple(layers)),))


def slowfast4x16_r50(num_classes: int = 400) -> ArchSpec:
    """SlowFast-4x16 R50: Slow pathway at 4 frames plus a fixed Fast pathway at
    32 frames with 1/8 of the channels, laterally fused after pool1 and the first
    three stages. Full configuration: 36.1 GFLOPs per view, 34.4M parameters.
    """
    alpha, beta = 8, 0.125
    pinned = {i: int(2 * beta * c) for i, (_, _, c) in enumerate(
        ((0, 0, 64), (0, 0, 256), (0, 0, 512), (0, 0, 1024)))}
    slow_layers, c_slow = _r50_pathway("", stem_kt=1, stage_kt=(1, 1, 3, 3),
                                       pinned=pinned)
    fast_layers, c_fast = _r50_pathway("", stem_kt=5, stage_kt=(3, 3, 3, 3),
                                       ch_scale=beta, scalable=False)
    head_in = c_slow + c_fast
    slow_layers += [
        LayerSpec(label="head.gap", kind="gap", in_channels=head_in, out_channels=head_in),
        _conv("head.fc", head_in, num_classes, scal_in=True, scal_out=False,
              pinned=c_fast, bias=True, kind="fc"),
    ]

    def idx(layers, label):
        return next(i for i, l in enumerate(layers) if l.label == label)

    taps = [("pool1", 8), ("res2.b2.bn3", 32), ("res3.b3.bn3", 64), ("res4.b5.bn3", 128)]
    slow_at = ["pool1", "res2.b2.bn3", "res3.b3.bn3", "res4.b5.bn3"]
    fusions = tuple(
        FusionSpec(
            slow_after=idx(slow_layers, s_lab),
            fast_after=idx(fast_layers, f_lab),
            layer=_conv(f"fuse{i}.conv", cf, 2 * cf, k=(5, 1, 1), s=(alpha, 1, 1),
                        scal_in=False, scal_out=False, bias=True, kind="fusion_conv"),
        )
        for i, ((f_lab, cf), s_lab) in enumerate(zip(taps, slow_at))
    )
    return ArchSpec(name="slowfast4x16_r50", num_classes=num_classes, base_frames=4,
                    base_spatial=256, alpha=alpha, beta=beta,
                    pathways=(Pathway("slow", tuple(slow_layers)),
                              Pathway("fast", tuple(fast_layers), scaled=False)),
                    fusions=fusions)


# ---------------------------------------------------------------------------
# toy backbones (buildable)
# ---------------------------------------------------------------------------

_TOY_CHANNELS = (16, 32, 64, 128)
_TOY_BLOCKS = 2


def _toy_pathway(prefix, ch_scale=1.0, temporal_all=False, scalable=True, pinned=None):
    """Basic-block pathway: conv1 carries the block stride, temporal kernel 3 in
    stages 3 and 4 (everywhere when temporal_all, for the fast pathway)."""
    def ch(c):
        return max(1, round(c * ch_scale))

    pinned = pinned or {}
    layers = [
        _conv(f"{prefix}stem.conv", 3, ch(16), k=(1, 3, 3), s=(1, 2, 2),
              scal_in=False, scal_out=scalable),
        _bn(f"{prefix}stem.bn", ch(16), scal=scalable),
    ]
    cin = ch(16)
    for i, cout in enumerate(_TOY_CHANNELS):
        cout = ch(cout)
        kt = 3 if (temporal_all or i >= 2) else 1
        for b in range(_TOY_BLOCKS):
            p = f"{prefix}s{i + 1}.b{b}"
            ci = cin if b == 0 else cout
            pin = pinned.get(i, 0) if b == 0 else 0
            stride = (1, 2, 2) if (b == 0 and i > 0) else (1, 1, 1)
            layers += [
                _conv(f"{p}.conv1", ci + pin, cout, k=(kt, 3, 3), s=stride,
                      scal_in=scalable, scal_out=scalable, pinned=pin),
                _bn(f"{p}.bn1", cout, scal=scalable),
                _conv(f"{p}.conv2", cout, cout, k=(kt, 3, 3),
                      scal_in=scalable, scal_out=scalable),
                _bn(f"{p}.bn2", cout, scal=scalable),
            ]
            if b == 0 and (ci + pin != cout or stride != (1, 1, 1)):
                layers += [
                    _conv(f"{p}.proj", ci + pin, cout, s=stride,
                          scal_in=scalable, scal_out=scalable, pinned=pin),
                    _bn(f"{p}.proj_bn", cout, scal=scalable),
                ]
        cin = cout
    return layers, cin


def toy_slim(num_classes: int = 16) -> ArchSpec:
    """Single-pathway toy backbone for runnable experiments (8x32x32 input)."""
    layers, cfinal = _toy_pathway("")
    layers += [
        LayerSpec(label="head.gap", kind="gap", in_channels=cfinal, out_channels=cfinal),
        _conv("head.fc", cfinal, num_classes, scal_in=True, scal_out=False,
              bias=True, kind="fc"),
    ]
    return ArchSpec(name="toy_slim", num_classes=num_classes, base_frames=8,
                    base_spatial=32, topology="residual_basic",
                    pathways=(Pathway("slow", tuple(layers)),))


def toy_slowfast(num_classes: int = 16) -> ArchSpec:
    """Two-pathway toy: alpha=4, beta=1/4, fusion after each of the first three
    stages. The fast pathway consumes 32 frames at full spatial size."""
    alpha, beta = 4, 0.25
    pinned = {i + 1: int(2 * beta * _TOY_CHANNELS[i]) for i in range(3)}
    slow_layers, c_slow = _toy_pathway("", pinned=pinned)
    fast_layers, c_fast = _toy_pathway("", ch_scale=beta, temporal_all=True,
                                       scalable=False)
    head_in = c_slow + c_fast
    slow_layers += [
        LayerSpec(label="head.gap", kind="gap", in_channels=head_in, out_channels=head_in),
        _conv("head.fc", head_in, num_classes, scal_in=True, scal_out=False,
              pinned=c_fast, bias=True, kind="fc"),
    ]

    def idx(layers, label):
        return next(i for i, l in enumerate(layers) if l.label == label)

    fusions = tuple(
        FusionSpec(
            slow_after=idx(slow_layers, f"s{i + 1}.b1.bn2"),
            fast_after=idx(fast_layers, f"s{i + 1}.b1.bn2"),
            layer=_conv(f"fuse{i}.conv", int(beta * c), int(2 * beta * c),
                        k=(5, 1, 1), s=(alpha, 1, 1), scal_in=False,
                        scal_out=False, bias=True, kind="fusion_conv"),
        )
        for i, c in enumerate(_TOY_CHANNELS[:3])
    )
    return ArchSpec(name="toy_slowfast", num_classes=num_classes, base_frames=8,
                    base_spatial=32, alpha=alpha, beta=beta,
                    topology="residual_basic",
                    pathways=(Pathway("slow", tuple(slow_layers)),
                              Pathway("fast", tuple(fast_layers), scaled=False)),
                    fusions=fusions)


def uniform_scalable(channels: int = 512, depth: int = 4, frames: int = 20,
                     spatial: int = 40) -> ArchSpec:
    """Synthetic architecture whose every layer is width-scalable on both sides
    and keeps a constant feature shape, so cost(c)/cost(full) is exactly
    gamma_w^2 * gamma_s^2 * gamma_t on configurations where rounding is exact."""
    layers = tuple(
        _conv(f"conv{i}", channels, channels, k=(1, 3, 3))
        for i in range(depth)
    )
    return ArchSpec(name="uniform_scalable", num_classes=1, base_frames=frames,
                    base_spatial=spatial, pathways=(Pathway("main", layers),))


_PRESETS = {
    "slow8x8_r50": slow8x8_r50,
    "slowfast4x16_r50": slowfast4x16_r50,
    "toy_slim": toy_slim,
    "toy_slowfast": toy_slowfast,
    "uniform512": uniform_scalable,
}


def get_arch(name: str, frames: int | None = None, spatial: int | None = None) -> ArchSpec:
    """Preset by name, optionally at a different full input size."""
    try:
        arch = _PRESETS[name]()
    except KeyError:
        raise ConfigError(f"unknown architecture {name!r}; available: {sorted(_PRESETS)}") from None
    if frames or spatial:
        arch = arch.with_input(frames=frames, spatial=spatial)
    return arch


def preset_names() -> list[str]:
    return sorted(_PRESETS)
