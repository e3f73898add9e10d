"""Analytic multiply-add cost model.

A layer's cost at the full configuration is Kt*Kh*Kw * Ci * Co * T*H*W multiply-adds
(T*H*W taken from its output feature map). At a configuration c the scalable
dimensions shrink: channels to width(C, gamma_w), spatial to round_half_up(gamma_s*H)
per side and frames to max(1, round_half_up(gamma_t*T)), each applied to the layer's
full-configuration output shape. Pooling, normalisation and activations cost nothing.

Reported GFLOPs count the multiply-adds of convolution and fusion layers; the
classifier head (whose Ci'*Co' cost is below 2e-5 of any preset here) is excluded
from network totals so that pure resolution scaling is exactly multiplicative.
Parameter counts include everything: conv kernels, BN affine pairs and the head.

Costs are computed in exact integer arithmetic; GFLOPs = multiply-adds / 1e9.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict, replace

import numpy as np

from .configspace import Configuration, ComputeRange, round_half_up, sample_training_triple
from .errors import ConfigError

LAYER_KINDS = ("conv3d", "fusion_conv", "bn", "pool3d", "gap", "fc")


def width(channels: int, gamma_w: float) -> int:
    """Active channel count at gamma_w: max(1, round-half-up(gamma_w * channels))."""
    return max(1, round_half_up(gamma_w * channels))


@dataclass(frozen=True)
class LayerSpec:
    """One layer of an architecture, as seen by the cost model and the builder.

    pinned_in counts trailing input channels that never scale with gamma_w
    (the fused fast-pathway block entering a post-fusion convolution).
    """

    label: str
    kind: str
    in_channels: int
    out_channels: int
    kernel: tuple[int, int, int] = (1, 1, 1)
    stride: tuple[int, int, int] = (1, 1, 1)
    width_scalable_in: bool = True
    width_scalable_out: bool = True
    pinned_in: int = 0
    bias: bool = False

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ConfigError(f"unknown layer kind {self.kind!r} in {self.label!r}")
        if self.pinned_in < 0 or self.pinned_in >= self.in_channels and self.kind in ("conv3d", "fc"):
            if self.pinned_in != 0:
                raise ConfigError(f"pinned_in out of range in {self.label!r}")

    def active_channels(self, c: Configuration) -> tuple[int, int]:
        """(in, out) channel counts at configuration c."""
        if self.width_scalable_in:
            ci = width(self.in_channels - self.pinned_in, c.gamma_w) + self.pinned_in
        else:
            ci = self.in_channels
        co = width(self.out_channels, c.gamma_w) if self.width_scalable_out else self.out_channels
        return ci, co


@dataclass(frozen=True)
class Pathway:
    """A sequential stack of layers. Only scaled pathways respond to c."""

    name: str
    layers: tuple[LayerSpec, ...]
    scaled: bool = True   # whether c applies to this pathway


@dataclass(frozen=True)
class FusionSpec:
    """A lateral connection: conv on the fast pathway's features, concatenated
    into the slow pathway. slow_after / fast_after are layer indices."""

    slow_after: int
    fast_after: int
    layer: LayerSpec


@dataclass(frozen=True)
class ArchSpec:
    """Architecture description, usable both for building networks and for cost.

    pathways[0] is the (scaled) main pathway. base_frames / base_spatial give the
    full-configuration input size of the main pathway; a fast pathway consumes
    alpha * base_frames frames at full spatial size.
    """

    name: str
    num_classes: int
    base_frames: int
    base_spatial: int
    pathways: tuple[Pathway, ...]
    fusions: tuple[FusionSpec, ...] = ()
    alpha: int = 1            # fast/slow frame-rate ratio
    beta: float = 0.0         # fast/slow channel ratio
    topology: str = "plain"   # "residual_basic" archs are buildable as modules

    @property
    def main(self) -> Pathway:
        return self.pathways[0]

    def fusion_points(self) -> list[int]:
        return [f.slow_after for f in self.fusions]

    def with_input(self, frames: int | None = None, spatial: int | None = None) -> "ArchSpec":
        """Same architecture, different full-configuration input size."""
        return replace(
            self,
            base_frames=frames or self.base_frames,
            base_spatial=spatial or self.base_spatial,
        )

    def input_size(self, c: Configuration) -> tuple[int, int]:
        """(frames, pixels) of the main pathway's input at configuration c."""
        frames = max(1, round_half_up(c.gamma_t * self.base_frames))
        pixels = max(1, round_half_up(c.gamma_s * self.base_spatial))
        return frames, pixels

    # -- serialisation ------------------------------------------------------

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @staticmethod
    def from_json(text: str) -> "ArchSpec":
        raw = json.loads(text)
        try:
            pathways = tuple(
                Pathway(
                    name=p["name"],
                    scaled=p["scaled"],
                    layers=tuple(_layer_from_dict(l) for l in p["layers"]),
                )
                for p in raw["pathways"]
            )
            fusions = tuple(
                FusionSpec(f["slow_after"], f["fast_after"], _layer_from_dict(f["layer"]))
                for f in raw.get("fusions", ())
            )
            return ArchSpec(
                name=raw["name"],
                num_classes=raw["num_classes"],
                base_frames=raw["base_frames"],
                base_spatial=raw["base_spatial"],
                pathways=pathways,
                fusions=fusions,
                alpha=raw.get("alpha", 1),
                beta=raw.get("beta", 0.0),
                topology=raw.get("topology", "plain"),
            )
        except (KeyError, TypeError) as e:
            raise ConfigError(f"malformed architecture file: {e}") from e

    def save(self, path):
        with open(path, "w") as f:
            f.write(self.to_json())

    @staticmethod
    def load(path) -> "ArchSpec":
        with open(path) as f:
            return ArchSpec.from_json(f.read())


def _layer_from_dict(d) -> LayerSpec:
    d = dict(d)
    d["kernel"] = tuple(d.get("kernel", (1, 1, 1)))
    d["stride"] = tuple(d.get("stride", (1, 1, 1)))
    return LayerSpec(**d)


# ---------------------------------------------------------------------------
# shape propagation
# ---------------------------------------------------------------------------

def _conv_out(size: int, k: int, s: int) -> int:
    """Output size for kernel k, stride s, padding k // 2 (the package convention)."""
    return (size + 2 * (k // 2) - k) // s + 1


def _block_prefix(label: str) -> str:
    return label.rsplit(".", 1)[0] if "." in label else label


def propagate_shapes(arch: ArchSpec, pathway: Pathway) -> list[tuple[int, int, int]]:
    """Full-configuration output shape (T, H, W) after each layer of a pathway.

    Layers run sequentially except residual projections (labels ending ".proj"),
    which branch from their block's entry shape instead of the previous layer.
    """
    if pathway.scaled:
        t, h, w = arch.base_frames, arch.base_spatial, arch.base_spatial
    else:
        t, h, w = arch.alpha * arch.base_frames, arch.base_spatial, arch.base_spatial
    shapes = []
    entry_shape = {}
    prev_prefix = None
    for layer in pathway.layers:
        prefix = _block_prefix(layer.label)
        if prefix != prev_prefix:
            entry_shape[prefix] = (t, h, w)
            prev_prefix = prefix
        if layer.kind in ("conv3d", "pool3d", "fusion_conv"):
            src = entry_shape[prefix] if layer.label.endswith(".proj") else (t, h, w)
            (kt, kh, kw), (st, sh, sw) = layer.kernel, layer.stride
            t = _conv_out(src[0], kt, st)
            h = _conv_out(src[1], kh, sh)
            w = _conv_out(src[2], kw, sw)
        elif layer.kind == "gap":
            t, h, w = 1, 1, 1
        # bn / fc keep the incoming shape
        shapes.append((t, h, w))
    return shapes


def scaled_shape(out_shape: tuple[int, int, int], c: Configuration) -> tuple[int, int, int]:
    """Apply (gamma_s, gamma_t) to a full-configuration output shape."""
    t, h, w = out_shape
    return (
        max(1, round_half_up(c.gamma_t * t)),
        max(1, round_half_up(c.gamma_s * h)),
        max(1, round_half_up(c.gamma_s * w)),
    )


# ---------------------------------------------------------------------------
# costs
# ---------------------------------------------------------------------------

def layer_cost(layer: LayerSpec, out_shape: tuple[int, int, int], c: Configuration,
               scaled: bool = True) -> int:
    """Multiply-adds of one layer at configuration c.

    out_shape is the layer's full-configuration output shape. Unscaled layers
    (fast pathway, fusion convs) ignore c entirely. Pool/BN/activation cost 0;
    fc costs Ci' * Co'.
    """
    if layer.kind in ("bn", "pool3d", "gap"):
        return 0
    if scaled:
        ci, co = layer.active_channels(c)
        t, h, w = scaled_shape(out_shape, c)
    else:
        ci, co = layer.in_channels, layer.out_channels
        t, h, w = out_shape
    if layer.kind == "fc":
        return ci * co
    kt, kh, kw = layer.kernel
    return kt * kh * kw * ci * co * t * h * w


def _layer_params(layer: LayerSpec, c: Configuration, scaled: bool) -> int:
    if scaled:
        ci, co = layer.active_channels(c)
    else:
        ci, co = layer.in_channels, layer.out_channels
    if layer.kind in ("conv3d", "fusion_conv"):
        kt, kh, kw = layer.kernel
        return kt * kh * kw * ci * co + (co if layer.bias else 0)
    if layer.kind == "fc":
        return ci * co + (co if layer.bias else 0)
    if layer.kind == "bn":
        return 2 * co
    return 0


@dataclass(frozen=True)
class NetworkCost:
    """Cost summary at one configuration."""

    gflops: float     # conv + fusion multiply-adds per view, / 1e9
    params: int       # active parameters, head and BN affine included
    macs: int         # the exact integer behind gflops
    frames: int
    pixels: int


def network_cost(arch: ArchSpec, c: Configuration) -> NetworkCost:
    """Total cost of an architecture at configuration c.

    For multi-pathway architectures, c applies to the scaled (slow) pathway only;
    the fast pathway and the fusion convolutions run at fixed shape.
    """
    macs = 0
    params = 0
    for pw in arch.pathways:
        shapes = propagate_shapes(arch, pw)
        for layer, shp in zip(pw.layers, shapes):
            if layer.kind in ("conv3d", "fusion_conv"):
                macs += layer_cost(layer, shp, c, scaled=pw.scaled)
            params += _layer_params(layer, c, scaled=pw.scaled)
    fast_shapes = propagate_shapes(arch, arch.pathways[1]) if len(arch.pathways) > 1 else []
    for fu in arch.fusions:
        _, h, w = fast_shapes[fu.fast_after]
        out_shape = (arch.base_frames, h, w)   # temporal stride alpha lands on slow frames
        macs += layer_cost(fu.layer, out_shape, c, scaled=False)
        params += _layer_params(fu.layer, c, scaled=False)
    frames, pixels = arch.input_size(c)
    return NetworkCost(gflops=macs / 1e9, params=params, macs=macs,
                       frames=frames, pixels=pixels)


def expected_training_cost(
    arch: ArchSpec,
    crange: ComputeRange,
    n_samples: int = 10_000,
    rng: np.random.Generator | None = None,
) -> float:
    """Monte-Carlo estimate of E[cost(full) + cost(sub1) + cost(sub2)] / cost(full).

    Uses sample_training_triple, so the estimate reflects the actual training
    distribution (continuous gamma_w, discrete resolution grids). Deterministic
    for a seeded rng.
    """
    if n_samples < 1000:
        raise ConfigError(f"n_samples must be >= 1000 for a stable estimate, got {n_samples}")
    rng = rng if rng is not None else np.random.default_rng(0)
    full_macs = network_cost(arch, Configuration(1, 1, 1)).macs
    acc = 0.0
    for _ in range(n_samples):
        triple = sample_training_triple(crange, rng)
        acc += sum(network_cost(arch, c).macs for c in triple.as_list())
    return acc / n_samples / full_macs


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

COST_CSV_COLUMNS = ("gamma_w", "gamma_s", "gamma_t", "frames", "pixels", "gflops", "params")


def cost_rows(arch: ArchSpec, configs) -> list[dict]:
    """One report row per configuration, in the given order."""
    rows = []
    for c in configs:
        nc = network_cost(arch, c)
        rows.append({
            "gamma_w": c.gamma_w, "gamma_s": c.gamma_s, "gamma_t": c.gamma_t,
            "frames": nc.frames, "pixels": nc.pixels,
            "gflops": nc.gflops, "params": nc.params,
        })
    return rows


def write_cost_csv(path, rows):
    """Cost report CSV. GFLOPs column counts conv/fusion multiply-adds per view."""
    import csv
    with open(path, "w", newline="") as f:
        f.write("# gflops = conv and fusion multiply-adds per view / 1e9\n")
        w = csv.writer(f)
        w.writerow(COST_CSV_COLUMNS)
        for r in rows:
            w.writerow([f"{r['gamma_w']:.4f}", f"{r['gamma_s']:.4f}", f"{r['gamma_t']:.4f}",
                        r["frames"], r["pixels"], f"{r['gflops']:.6f}", r["params"]])
