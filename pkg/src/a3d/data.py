"""Synthetic video classification data with separable spatial and temporal signal.

Classes factorize as texture x motion (4 x 4 = 16). A textured square patch
moves vertically across a dark background; the texture (2-pixel period) carries
the spatial signal and degrades under blurring, while the trajectory carries
the temporal signal: all four motions share the SAME first half and diverge
only in the second half of the clip, so a single frame cannot identify the
motion class. Trajectories are vertical and textures mirror-symmetric, which
keeps labels invariant under horizontal flips (the training augmentation).

Everything is a pure function of (spec, split, index); train and validation
draw from disjoint seed streams.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
import torch

from .errors import ConfigError
from .resample import uniform_frame_indices

N_TEXTURES = 4
N_MOTIONS = 4

TEXTURE_NAMES = ("checker2", "vstripes", "hstripes", "checker3")
MOTION_NAMES = ("continue", "reverse", "stop", "accelerate")


@dataclass(frozen=True)
class SynthSpec:
    """Generation parameters; num_classes is fixed by the texture/motion grid."""

    clip_frames: int = 8
    clip_pixels: int = 32
    samples_per_class: int = 50
    noise_std: float = 0.04
    seed: int = 0

    num_classes: int = N_TEXTURES * N_MOTIONS

    def __post_init__(self):
        if self.clip_frames < 4:
            raise ConfigError(f"clip_frames must be >= 4, got {self.clip_frames}")
        if self.clip_pixels < 16:
            raise ConfigError(f"clip_pixels must be >= 16, got {self.clip_pixels}")
        if self.samples_per_class < 1:
            raise ConfigError("samples_per_class must be positive")
        if self.noise_std < 0:
            raise ConfigError(f"noise_std must be >= 0, got {self.noise_std}")
        if self.num_classes != N_TEXTURES * N_MOTIONS:
            raise ConfigError("the label space is texture x motion; num_classes is fixed")


@dataclass
class ClipBatch:
    """A batch of clips: data [B, 3, T, S, S] in [0, 1], integer labels [B]."""

    data: torch.Tensor
    labels: torch.Tensor

    def __post_init__(self):
        if self.data.dim() != 5 or self.data.shape[0] != self.labels.shape[0]:
            raise ConfigError("ClipBatch wants data [B, 3, T, S, S] and labels [B]")

    def __len__(self):
        return self.data.shape[0]

    def subset(self, idx) -> "ClipBatch":
        return ClipBatch(self.data[idx], self.labels[idx])

    def sha256(self) -> str:
        h = hashlib.sha256()
        h.update(self.data.numpy().tobytes())
        h.update(self.labels.numpy().tobytes())
        return h.hexdigest()


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------

def _texture(texture_id: int, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Binary pattern in patch-local coordinates.

    All four patterns are mirror-symmetric up to a phase shift and cover
    exactly half the patch, so neither flips nor mean brightness leak the
    class; only fine structure does.
    """
    u = np.floor(ys / 2.0).astype(np.int64)
    v = np.floor(xs / 2.0).astype(np.int64)
    if texture_id == 0:    # 2-pixel checker
        return ((u + v) % 2).astype(np.float64)
    if texture_id == 1:    # vertical stripes
        return (v % 2).astype(np.float64)
    if texture_id == 2:    # horizontal stripes
        return (u % 2).astype(np.float64)
    if texture_id == 3:    # 3-pixel checker (off-grid from any 2^k pooling)
        u2 = np.floor(ys / 3.0).astype(np.int64)
        v2 = np.floor(xs / 3.0).astype(np.int64)
        return ((u2 + v2) % 2).astype(np.float64)
    raise ConfigError(f"texture_id out of range: {texture_id}")


def _motion_y(motion_id: int, u: float, y0: float, v: float) -> float:
    """Vertical patch position at clip fraction u in [0, 1].

    All motions coincide for u <= 0.5 (constant downward speed v); the second
    half disambiguates: continue, reverse, stop, or double speed.
    """
    if u <= 0.5 or motion_id == 0:
        return y0 + v * u
    if motion_id == 1:
        return y0 + v * (1.0 - u)
    if motion_id == 2:
        return y0 + v * 0.5
    if motion_id == 3:
        return y0 + v * (2.0 * u - 0.5)
    raise ConfigError(f"motion_id out of range: {motion_id}")


def _render_frame(pixels: int, patch: float, y: float, x: float,
                  texture_id: int, fg: float, bg: float) -> np.ndarray:
    """One frame: antialiased textured square at float position (y, x)."""
    coords = np.arange(pixels, dtype=np.float64)
    # soft box mask, 1 inside the patch, linear 1-pixel falloff at the border
    my = np.clip(np.minimum(coords - y + 1.0, y + patch - coords), 0.0, 1.0)
    mx = np.clip(np.minimum(coords - x + 1.0, x + patch - coords), 0.0, 1.0)
    mask = my[:, None] * mx[None, :]
    ys = coords[:, None] - y
    xs = coords[None, :] - x
    tex = _texture(texture_id, np.broadcast_to(ys, (pixels, pixels)),
                   np.broadcast_to(xs, (pixels, pixels)))
    fg_map = bg + (fg - bg) * (0.35 + 0.65 * tex)
    return bg + mask * (fg_map - bg)


def render_clip(spec: SynthSpec, label: int, rng: np.random.Generator) -> np.ndarray:
    """One clip [3, T, S, S] for a class label, parameters drawn from rng."""
    texture_id, motion_id = divmod(label, N_MOTIONS)
    T, S = spec.clip_frames, spec.clip_pixels
    patch = 0.38 * S
    v = S * rng.uniform(0.22, 0.30)          # total first-half travel budget x2
    y_max = S - patch - 1.5 * v - 2.0        # accelerate reaches y0 + 1.5 v
    y0 = rng.uniform(1.0, max(1.01, y_max))
    x = rng.uniform(1.0, S - patch - 1.0)
    bg = rng.uniform(0.08, 0.18)
    fg = rng.uniform(0.72, 0.95)
    tint = rng.uniform(0.85, 1.0, size=3)
    clip = np.empty((3, T, S, S), dtype=np.float64)
    for t in range(T):
        u = t / (T - 1)
        y = _motion_y(motion_id, u, y0, v)
        frame = _render_frame(S, patch, y, x, texture_id, fg, bg)
        clip[:, t] = frame[None] * tint[:, None, None]
    clip += rng.normal(0.0, spec.noise_std, size=clip.shape)
    return np.clip(clip, 0.0, 1.0)


def mean_level(spec: SynthSpec, n_clips: int = 16) -> np.ndarray:
    """Per-channel mean brightness of the spec's training distribution,
    estimated from a fixed small sample (deterministic in spec)."""
    acc = np.zeros(3)
    for i in range(n_clips):
        acc += render_clip(spec, i % spec.num_classes,
                           _clip_rng(spec, "train", i)).mean(axis=(1, 2, 3))
    return acc / n_clips


# ---------------------------------------------------------------------------
# dataset assembly
# ---------------------------------------------------------------------------

_SPLIT_STREAM = {"train": 0, "val": 1, "stimulus": 2}


def _clip_rng(spec: SynthSpec, split: str, index: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence(entropy=spec.seed,
                               spawn_key=(_SPLIT_STREAM[split], index))
    )


def generate_split(spec: SynthSpec, split: str) -> ClipBatch:
    """Class-balanced split; clip i of class k is a pure function of
    (spec, split, k * samples_per_class + i)."""
    if split not in ("train", "val"):
        raise ConfigError(f"split must be train or val, got {split!r}")
    n = spec.num_classes * spec.samples_per_class
    data = np.empty((n, 3, spec.clip_frames, spec.clip_pixels, spec.clip_pixels),
                    dtype=np.float32)
    labels = np.empty(n, dtype=np.int64)
    i = 0
    for label in range(spec.num_classes):
        for _ in range(spec.samples_per_class):
            data[i] = render_clip(spec, label, _clip_rng(spec, split, i))
            labels[i] = label
            i += 1
    return ClipBatch(torch.from_numpy(data), torch.from_numpy(labels))


def generate_synth(spec: SynthSpec, val_fraction: float = 0.4) -> tuple[ClipBatch, ClipBatch]:
    """(train, val) splits; validation uses a disjoint seed stream and
    round(samples_per_class * val_fraction) clips per class."""
    val_spec = SynthSpec(clip_frames=spec.clip_frames, clip_pixels=spec.clip_pixels,
                         samples_per_class=max(1, round(spec.samples_per_class * val_fraction)),
                         noise_std=spec.noise_std, seed=spec.seed)
    return generate_split(spec, "train"), generate_split(val_spec, "val")


def single_frame_stimulus(spec: SynthSpec, label: int, frame: int,
                          index: int = 0,
                          fill: np.ndarray | None = None) -> torch.Tensor:
    """Clip [3, T, S, S] whose class evidence exists only at one frame.

    Every other frame sits at the dataset's mean brightness (so it whitens
    to nothing under the training normalization and carries no evidence for
    any class), while the planted frame shows the class patch at maximum
    in-range contrast. Pass fill to pin the exact mean of the training split
    the probed model was normalized with; the default estimates it from a
    small sample.
    """
    if not 0 <= frame < spec.clip_frames:
        raise ConfigError(f"frame {frame} outside [0, {spec.clip_frames})")
    if fill is None:
        fill = mean_level(spec)
    fill = np.asarray(fill, dtype=np.float64).reshape(3)
    texture_id, motion_id = divmod(label, N_MOTIONS)
    T, S = spec.clip_frames, spec.clip_pixels
    rng = _clip_rng(spec, "stimulus", label * 10_000 + frame * 100 + index)
    patch = 0.38 * S
    v = S * rng.uniform(0.22, 0.30)
    y_max = S - patch - 1.5 * v - 2.0
    y0 = rng.uniform(1.0, max(1.01, y_max))
    x = rng.uniform(1.0, S - patch - 1.0)
    clip = np.tile(fill[:, None, None, None], (1, T, S, S))
    u = frame / (T - 1)
    y = _motion_y(motion_id, u, y0, v)
    clip[:, frame] = _render_frame(S, patch, y, x, texture_id, fg=0.95, bg=0.08)[None]
    clip += rng.normal(0.0, spec.noise_std, size=clip.shape)
    return torch.from_numpy(np.clip(clip, 0.0, 1.0).astype(np.float32))


def compute_normalization(batch: ClipBatch) -> tuple[torch.Tensor, torch.Tensor]:
    """Per-channel mean and std over a (training) batch, for input whitening."""
    mean = batch.data.mean(dim=(0, 2, 3, 4))
    std = batch.data.std(dim=(0, 2, 3, 4)).clamp_min(1e-4)
    return mean, std


def normalize(clips: torch.Tensor, mean: torch.Tensor, std: torch.Tensor) -> torch.Tensor:
    shape = (1, 3, 1, 1, 1) if clips.dim() == 5 else (3, 1, 1, 1)
    return (clips - mean.reshape(shape)) / std.reshape(shape)


# ---------------------------------------------------------------------------
# caching and folder ingestion
# ---------------------------------------------------------------------------

def save_dataset(path, train: ClipBatch, val: ClipBatch, spec: SynthSpec):
    """Single-archive cache of both splits plus the generating spec."""
    np.savez_compressed(
        path,
        train_data=train.data.numpy(), train_labels=train.labels.numpy(),
        val_data=val.data.numpy(), val_labels=val.labels.numpy(),
        spec=np.array([spec.clip_frames, spec.clip_pixels, spec.samples_per_class,
                       spec.seed], dtype=np.int64),
        noise_std=np.array([spec.noise_std]),
    )


def load_dataset(path) -> tuple[ClipBatch, ClipBatch, SynthSpec]:
    with np.load(path) as z:
        spec = SynthSpec(clip_frames=int(z["spec"][0]), clip_pixels=int(z["spec"][1]),
                         samples_per_class=int(z["spec"][2]), seed=int(z["spec"][3]),
                         noise_std=float(z["noise_std"][0]))
        train = ClipBatch(torch.from_numpy(z["train_data"]), torch.from_numpy(z["train_labels"]))
        val = ClipBatch(torch.from_numpy(z["val_data"]), torch.from_numpy(z["val_labels"]))
    return train, val, spec


def load_clip_folder(path, frames: int, pixels: int) -> tuple[ClipBatch, list[str]]:
    """Clips from <path>/<class>/<clip>/<frame images>, labels from folder order.

    Frames are center-cropped square, resized to pixels^2 and sampled with the
    same uniform index rule the resampler uses.
    """
    from pathlib import Path

    from PIL import Image

    root = Path(path)
    classes = sorted(p.name for p in root.iterdir() if p.is_dir())
    if not classes:
        raise ConfigError(f"no class folders under {root}")
    clips, labels = [], []
    for label, cname in enumerate(classes):
        for clip_dir in sorted((root / cname).iterdir()):
            if not clip_dir.is_dir():
                continue
            files = sorted(f for f in clip_dir.iterdir() if f.is_file())
            if not files:
                raise ConfigError(f"{clip_dir} contains no frames")
            take = (files if len(files) == frames
                    else [files[i] for i in uniform_frame_indices(len(files), min(frames, len(files)))])
            frames_np = []
            for f in take:
                img = Image.open(f).convert("RGB")
                side = min(img.size)
                left = (img.width - side) // 2
                top = (img.height - side) // 2
                img = img.crop((left, top, left + side, top + side)).resize(
                    (pixels, pixels), Image.BILINEAR)
                frames_np.append(np.asarray(img, dtype=np.float32) / 255.0)
            arr = np.stack(frames_np)                      # [T, S, S, 3]
            if arr.shape[0] < frames:                      # loop-pad short clips
                reps = [arr[i % arr.shape[0]] for i in range(frames)]
                arr = np.stack(reps)
            clips.append(torch.from_numpy(arr).permute(3, 0, 1, 2))
            labels.append(label)
    return ClipBatch(torch.stack(clips), torch.tensor(labels)), classes
