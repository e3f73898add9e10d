"""The desk-scale end-to-end experiment.

Trains the adaptive model and an independently trained full-width baseline on
the synthetic task with the same seed and schedule, calibrates a deployment
grid, evaluates the trade-off table, builds the budget table, measures the
calibration effect at a low-compute probe configuration, and runs the
planted-frame activation check. Everything lands in one directory with a
machine-readable summary.
"""

from __future__ import annotations

import dataclasses
import json
import os
import time

import torch

from .budget import assert_monotone, build_budget_table
from .calibrate import calibrate_many, calibration_batches
from .cam import compute_cam
from .checkpoint import build_from_checkpoint, save_checkpoint
from .configspace import FULL, ComputeRange, Configuration, enumerate_grid
from .data import ClipBatch, SynthSpec, normalize, single_frame_stimulus
from .evaluate import accuracy, evaluate_grid, write_tradeoff_csv, write_tradeoff_matrix
from .presets import get_arch
from .slimnet import set_stats_fallback
from .training import RunConfig, fit, make_data

# probe the criterion cares about: half width, 18 of 32 pixels, half the frames
PROBE = Configuration(0.5, 0.57, 0.5)

# deployment grid: small enough to calibrate in seconds, wide enough for a
# meaningful Pareto front; includes the probe configuration
EVAL_RANGE = ComputeRange(
    name="toy-eval", rho=64.0,
    width_grid=(0.5, 0.75, 1.0),
    spatial_grid=(0.57, 0.78, 1.0),
    temporal_grid=(0.5, 1.0),
)


def run_toy_experiment(out_dir, epochs: int = 20, samples_per_class: int = 50,
                       seed: int = 0, base_lr: float = 0.4,
                       n_stimuli: int = 10, log=print) -> dict:
    os.makedirs(out_dir, exist_ok=True)
    t0 = time.time()

    cfg = RunConfig(arch="toy_slim", range_name="0.016-1", mode="a3d",
                    epochs=epochs, batch_size=16, base_lr=base_lr, seed=seed,
                    samples_per_class=samples_per_class)
    data = make_data(cfg)
    log(f"[{time.time()-t0:6.1f}s] data: {len(data[0])} train / {len(data[1])} val clips")

    a3d_dir = os.path.join(out_dir, "a3d")
    fit(cfg, a3d_dir, data=data)
    log(f"[{time.time()-t0:6.1f}s] adaptive model trained")

    ind_dir = os.path.join(out_dir, "independent")
    fit(dataclasses.replace(cfg, mode="independent"), ind_dir, data=data)
    log(f"[{time.time()-t0:6.1f}s] independent baseline trained")

    model, meta = build_from_checkpoint(os.path.join(a3d_dir, "checkpoint.zip"))
    norm = (torch.tensor(meta["norm_mean"]), torch.tensor(meta["norm_std"]))
    val = ClipBatch(normalize(data[1].data, *norm), data[1].labels)
    batches = calibration_batches(data[0], norm, batch_size=cfg.batch_size, seed=seed)

    # uncalibrated baseline FIRST: only full-config statistics, sliced as a
    # stand-in for every sub-configuration
    calibrate_many(model, [FULL], batches)
    set_stats_fallback(model, True)
    probe_uncal = accuracy(model, val, PROBE)[0]
    set_stats_fallback(model, False)
    log(f"[{time.time()-t0:6.1f}s] probe {PROBE.key()} uncalibrated: {probe_uncal:.2f}%")

    grid = enumerate_grid(EVAL_RANGE)
    todo = [c for c in grid if not c.is_full]
    if PROBE not in todo:
        todo.append(PROBE)
    calibrate_many(model, todo, batches)
    log(f"[{time.time()-t0:6.1f}s] calibrated {len(todo)} configurations")
    calibrated_path = os.path.join(a3d_dir, "calibrated.zip")
    save_checkpoint(calibrated_path, model, get_arch(cfg.arch), meta=meta)

    rows = evaluate_grid(model, val, EVAL_RANGE)
    write_tradeoff_csv(os.path.join(out_dir, "tradeoff.csv"), rows)
    write_tradeoff_matrix(os.path.join(out_dir, "tradeoff_matrix.csv"), rows)
    table = build_budget_table(rows, arch=cfg.arch, views=(1, 1))
    assert_monotone(table)
    table.save(os.path.join(out_dir, "budget.json"))

    probe_cal = accuracy(model, val, PROBE)[0]
    a3d_full = next(r["top1"] for r in rows if
                    (r["gamma_w"], r["gamma_s"], r["gamma_t"]) == (1.0, 1.0, 1.0))

    ind_model, ind_meta = build_from_checkpoint(os.path.join(ind_dir, "checkpoint.zip"))
    ind_norm = (torch.tensor(ind_meta["norm_mean"]), torch.tensor(ind_meta["norm_std"]))
    calibrate_many(ind_model, [FULL],
                   calibration_batches(data[0], ind_norm, batch_size=cfg.batch_size, seed=seed))
    ind_val = ClipBatch(normalize(data[1].data, *ind_norm), data[1].labels)
    ind_full = accuracy(ind_model, ind_val, FULL)[0]
    log(f"[{time.time()-t0:6.1f}s] full top-1: adaptive {a3d_full:.2f}% "
        f"vs independent {ind_full:.2f}%; probe calibrated {probe_cal:.2f}%")

    # planted-frame stimuli: one discriminative frame per clip, varied labels
    spec = SynthSpec(samples_per_class=samples_per_class, seed=seed)
    hits, planted = [], []
    for i in range(n_stimuli):
        label = (i * 5) % spec.num_classes
        frame = 1 + (i % (spec.clip_frames - 2))        # avoid the edge frames
        clip = single_frame_stimulus(spec, label, frame, index=i,
                                     fill=meta["norm_mean"])
        result = compute_cam(model, FULL, normalize(clip, *norm))
        hits.append(int(result.temporal_profile.argmax()) == frame)
        planted.append(frame)
    cam_hits = sum(hits)
    log(f"[{time.time()-t0:6.1f}s] planted-frame localisation: {cam_hits}/{n_stimuli}")

    summary = {
        "seed": seed, "epochs": epochs,
        "train_clips": len(data[0]), "val_clips": len(data[1]),
        "a3d_full_top1": a3d_full, "independent_full_top1": ind_full,
        "probe": {"config": PROBE.key(), "uncalibrated_top1": probe_uncal,
                  "calibrated_top1": probe_cal},
        "budget_entries": len(table.entries),
        "cam_hits": cam_hits, "cam_stimuli": n_stimuli,
        "planted_frames": planted,
        "wall_seconds": round(time.time() - t0, 1),
        "paths": {
            "a3d_checkpoint": os.path.join(a3d_dir, "checkpoint.zip"),
            "calibrated_checkpoint": calibrated_path,
            "independent_checkpoint": os.path.join(ind_dir, "checkpoint.zip"),
            "tradeoff": os.path.join(out_dir, "tradeoff.csv"),
            "budget": os.path.join(out_dir, "budget.json"),
        },
    }
    with open(os.path.join(out_dir, "experiment_summary.json"), "w") as f:
        json.dump(summary, f, indent=2)
    return summary
