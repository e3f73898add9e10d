"""Training loop: sandwich-sampled mutual distillation and its baselines.

Every iteration of the main mode trains three members of the configuration
space on the SAME batch: the full network against the labels, plus a random
and a minimum-width sub-network against the full network's detached softmax.
Baseline modes reuse the loop with the sampling turned off (independent: one
fixed configuration, CE only) or restricted (multires: resolution resampled
per iteration at full width, CE only).

Reproducibility contract: all per-epoch randomness (batch order, augmentation,
configuration draws) comes from generators derived from (seed, epoch), so a
run resumed from an epoch-boundary checkpoint is bit-for-bit identical to the
uninterrupted run.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import asdict, dataclass, replace

import numpy as np
import torch

from .configspace import FULL, ComputeRange, Configuration, get_range, sample_training_triple
from .data import ClipBatch, SynthSpec, compute_normalization, generate_synth, normalize
from .errors import ConfigError, TrainingDivergedError
from .losses import std_loss
from .checkpoint import load_checkpoint, save_checkpoint
from .slimnet import build_model, forward_config

MODES = ("a3d", "independent", "multires", "a3d_no_temporal")

METRICS_COLUMNS = ("epoch", "lr", "ce", "kl_mean", "train_acc_full")

MOMENTUM = 0.9
WEIGHT_DECAY = 1e-4


@dataclass(frozen=True)
class RunConfig:
    """Everything a training run needs; JSON round-trips for the CLI."""

    arch: str = "toy_slim"
    range_name: str = "0.016-1"
    mode: str = "a3d"
    epochs: int = 20
    batch_size: int = 16
    base_lr: float = 0.4
    seed: int = 0
    samples_per_class: int = 50
    val_fraction: float = 0.4
    noise_std: float = 0.04
    shared_draw: bool = False
    fixed_config: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.epochs < 1 or self.batch_size < 2:
            raise ConfigError("epochs must be >= 1 and batch_size >= 2")
        if self.base_lr <= 0:
            raise ConfigError("base_lr must be positive")
        Configuration(*self.fixed_config)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @staticmethod
    def from_json(text: str) -> "RunConfig":
        raw = json.loads(text)
        unknown = set(raw) - set(RunConfig.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown run-config fields: {sorted(unknown)}")
        if "fixed_config" in raw:
            raw["fixed_config"] = tuple(raw["fixed_config"])
        return RunConfig(**raw)

    @staticmethod
    def load(path) -> "RunConfig":
        with open(path) as f:
            return RunConfig.from_json(f.read())


@dataclass
class TrainState:
    model: torch.nn.Module
    optimizer: torch.optim.SGD
    crange: ComputeRange
    cfg: RunConfig
    norm: tuple[torch.Tensor, torch.Tensor]
    epoch: int = 0
    iteration: int = 0
    total_iters: int = 0


def clip_frames_for(arch) -> int:
    """Frames the data pipeline must provide: two-pathway models take the
    full fast-rate clip and derive the slow input themselves."""
    return arch.alpha * arch.base_frames if len(arch.pathways) > 1 else arch.base_frames


def effective_range(cfg: RunConfig) -> ComputeRange:
    crange = get_range(cfg.range_name)
    if cfg.mode == "a3d_no_temporal":
        crange = crange.without_temporal()
    return crange


def lr_at(cfg: RunConfig, iteration: int, total_iters: int) -> float:
    """Half-period cosine, per iteration, scaled linearly by batch size / 64."""
    peak = cfg.base_lr * cfg.batch_size / 64.0
    return peak * 0.5 * (1.0 + math.cos(math.pi * iteration / max(1, total_iters)))


def _epoch_streams(seed: int, epoch: int):
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(1000 + epoch,))
    order, aug, cfgs = (np.random.default_rng(child) for child in ss.spawn(3))
    return order, aug, cfgs


def augment(clips: torch.Tensor, rng: np.random.Generator) -> torch.Tensor:
    """Random horizontal flip and temporal roll of +-1 frame, per clip."""
    flip = rng.random(clips.shape[0]) < 0.5
    shift = rng.integers(-1, 2, size=clips.shape[0])
    out = clips.clone()
    idx = torch.from_numpy(np.nonzero(flip)[0])
    if idx.numel():
        out[idx] = torch.flip(out[idx], dims=[-1])
    for s in (-1, 1):
        rows = torch.from_numpy(np.nonzero(shift == s)[0])
        if rows.numel():
            out[rows] = torch.roll(out[rows], shifts=int(s), dims=-3)
    return out


# frame-dropout schedule: fractions of clips that lose a few frames or are
# reduced to a few frames each step, active only for the last few epochs so
# the clean objective converges first (dropout corrupts the distillation
# targets of temporally subsampled views if applied from the start)
DROP_FEW_P = 0.24
KEEP_FEW_P = 0.16
DROPOUT_EPOCHS = 6


def blank_frames(clips: torch.Tensor, rng: np.random.Generator) -> torch.Tensor:
    """Blank random frame subsets of whitened clips (in place).

    Blanked frames are set to zero, the whitened image of the dataset mean,
    so the network learns that mean-level frames carry no class evidence and
    must read whatever frames remain. Without this, per-frame attribution of
    a trained network degenerates: frames near the dataset mean never occur
    in training, so their activations land on an arbitrary class.
    """
    B, _, T = clips.shape[:3]
    draw = rng.random(B)
    for b in range(B):
        if draw[b] < DROP_FEW_P:
            k = int(rng.integers(1, 4))
            clips[b, :, rng.choice(T, size=k, replace=False)] = 0.0
        elif draw[b] < DROP_FEW_P + KEEP_FEW_P:
            keep = rng.choice(T, size=int(rng.integers(1, 4)), replace=False)
            mask = np.ones(T, dtype=bool)
            mask[keep] = False
            clips[b, :, mask] = 0.0
    return clips


def train_step(state: TrainState, clips: torch.Tensor, labels: torch.Tensor,
               cfg_rng: np.random.Generator) -> dict:
    """One optimizer step in the state's mode; returns the loss record."""
    cfg = state.cfg
    model = state.model
    model.train()
    lr = lr_at(cfg, state.iteration, state.total_iters)
    for group in state.optimizer.param_groups:
        group["lr"] = lr
    state.optimizer.zero_grad()

    if cfg.mode in ("a3d", "a3d_no_temporal"):
        triple = sample_training_triple(state.crange, cfg_rng, shared_draw=cfg.shared_draw)
        full_logits = forward_config(state.model, clips, triple.full)
        # a sub drawn AT the full configuration would distil the teacher into
        # itself: the KL term and its gradient are identically zero, so the
        # redundant forward is skipped (this makes the degenerate full-only
        # range literally equal to plain CE training)
        subs = [c for c in (triple.random_sub, triple.min_sub) if not c.is_full]
        sub_logits = [forward_config(state.model, clips, c) for c in subs]
        total, parts = std_loss(full_logits, sub_logits, labels)
        parts["kl"] += [0.0] * (2 - len(subs))
    elif cfg.mode == "multires":
        gs = float(cfg_rng.choice(state.crange.spatial_grid))
        gt = float(cfg_rng.choice(state.crange.temporal_grid))
        full_logits = forward_config(state.model, clips, Configuration(1.0, gs, gt))
        total = torch.nn.functional.cross_entropy(full_logits, labels)
        parts = {"ce": float(total.detach()), "kl": []}
    else:   # independent
        full_logits = forward_config(state.model, clips, Configuration(*cfg.fixed_config))
        total = torch.nn.functional.cross_entropy(full_logits, labels)
        parts = {"ce": float(total.detach()), "kl": []}

    if not torch.isfinite(total):
        raise TrainingDivergedError(
            f"non-finite loss at iteration {state.iteration} (lr={lr:.4f})"
        )
    total.backward()
    state.optimizer.step()
    state.iteration += 1
    parts["lr"] = lr
    parts["acc"] = float((full_logits.argmax(1) == labels).float().mean())
    return parts


def run_epoch(state: TrainState, train_data: ClipBatch) -> dict:
    """All batches of one epoch; returns the averaged metrics row."""
    order_rng, aug_rng, cfg_rng = _epoch_streams(state.cfg.seed, state.epoch)
    perm = torch.from_numpy(order_rng.permutation(len(train_data)))
    bs = state.cfg.batch_size
    mean, std = state.norm
    records = []
    for start in range(0, len(train_data), bs):
        idx = perm[start:start + bs]
        if idx.numel() < 2:
            continue    # a 1-clip tail has no batch statistics
        clips = augment(train_data.data[idx], aug_rng)
        clips = normalize(clips, mean, std)
        if state.epoch >= state.cfg.epochs - DROPOUT_EPOCHS:
            clips = blank_frames(clips, aug_rng)
        records.append(train_step(state, clips, train_data.labels[idx], cfg_rng))
    state.epoch += 1
    kls = [k for r in records for k in r["kl"]]
    return {
        "epoch": state.epoch,
        "lr": records[0]["lr"],
        "ce": sum(r["ce"] for r in records) / len(records),
        "kl_mean": sum(kls) / len(kls) if kls else 0.0,
        "train_acc_full": sum(r["acc"] for r in records) / len(records),
    }


def prepare_state(cfg: RunConfig, train_data: ClipBatch) -> TrainState:
    from .presets import get_arch

    arch = get_arch(cfg.arch)
    model = build_model(arch, seed=cfg.seed)
    optimizer = torch.optim.SGD(model.parameters(), lr=0.0,
                                momentum=MOMENTUM, weight_decay=WEIGHT_DECAY)
    iters_per_epoch = sum(1 for s in range(0, len(train_data), cfg.batch_size)
                          if min(cfg.batch_size, len(train_data) - s) >= 2)
    return TrainState(
        model=model, optimizer=optimizer, crange=effective_range(cfg), cfg=cfg,
        norm=compute_normalization(train_data),
        total_iters=cfg.epochs * iters_per_epoch,
    )


def make_data(cfg: RunConfig) -> tuple[ClipBatch, ClipBatch]:
    from .presets import get_arch

    spec = SynthSpec(clip_frames=clip_frames_for(get_arch(cfg.arch)),
                     samples_per_class=cfg.samples_per_class,
                     noise_std=cfg.noise_std, seed=cfg.seed)
    return generate_synth(spec, val_fraction=cfg.val_fraction)


def fit(cfg: RunConfig, out_dir, resume: bool = False,
        data: tuple[ClipBatch, ClipBatch] | None = None,
        until: int | None = None) -> dict:
    """Train to cfg.epochs, checkpointing at every epoch boundary.

    Writes checkpoint.zip and metrics.csv into out_dir. With resume=True an
    existing checkpoint continues from its epoch; metrics rows for completed
    epochs are kept verbatim. `until` stops the session early at that epoch
    (the run config, and with it the schedule, is unchanged).
    """
    os.makedirs(out_dir, exist_ok=True)
    ckpt_path = os.path.join(out_dir, "checkpoint.zip")
    metrics_path = os.path.join(out_dir, "metrics.csv")
    train_data, _ = data if data is not None else make_data(cfg)
    state = prepare_state(cfg, train_data)

    rows = []
    if resume and os.path.exists(ckpt_path):
        meta = load_checkpoint(ckpt_path, model=state.model, optimizer=state.optimizer)
        if meta["run_config"] != json.loads(cfg.to_json()):
            raise ConfigError("checkpoint was produced by a different run config")
        state.epoch = meta["epoch"]
        state.iteration = meta["iteration"]
        if os.path.exists(metrics_path):
            with open(metrics_path) as f:
                rows = [r for r in csv.DictReader(f) if int(r["epoch"]) <= state.epoch]

    mean, std = state.norm
    while state.epoch < min(cfg.epochs, until if until is not None else cfg.epochs):
        row = run_epoch(state, train_data)
        rows.append({k: f"{row[k]:.6f}" if isinstance(row[k], float) else str(row[k])
                     for k in METRICS_COLUMNS})
        _write_metrics(metrics_path, rows)
        save_checkpoint(
            ckpt_path, state.model, state.model.arch,
            meta={
                "epoch": state.epoch,
                "iteration": state.iteration,
                "run_config": json.loads(cfg.to_json()),
                "norm_mean": mean.tolist(),
                "norm_std": std.tolist(),
            },
            optimizer=state.optimizer,
        )
    return {"checkpoint": ckpt_path, "metrics": metrics_path,
            "epochs": state.epoch, "iterations": state.iteration}


def _write_metrics(path, rows):
    tmp = path + ".tmp"
    with open(tmp, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=METRICS_COLUMNS)
        w.writeheader()
        w.writerows(rows)
    os.replace(tmp, path)
