"""Grid evaluation and multi-view prediction.

evaluate_grid measures every configuration of a range on a validation set and
emits the full trade-off table; this runs once per trained model, after
calibration. Budget selection then reads the table, never the model.
"""

from __future__ import annotations

import csv
import warnings

import torch
import torch.nn.functional as F

from .configspace import ComputeRange, Configuration, enumerate_grid
from .costmodel import network_cost
from .data import ClipBatch
from .errors import ConfigError
from .resample import spatial_resize, uniform_frame_indices
from .slimnet import forward_config
from .training import clip_frames_for

TRADEOFF_COLUMNS = ("gamma_w", "gamma_s", "gamma_t", "frames", "pixels",
                    "gflops", "params", "top1", "top5")


def predict(model, clips: torch.Tensor, c: Configuration,
            batch_size: int = 64) -> torch.Tensor:
    """Eval-mode logits for a stack of clips at configuration c."""
    model.eval()
    outs = []
    with torch.no_grad():
        for start in range(0, clips.shape[0], batch_size):
            outs.append(forward_config(model, clips[start:start + batch_size], c))
    return torch.cat(outs)


def accuracy(model, data: ClipBatch, c: Configuration,
             batch_size: int = 64) -> tuple[float, float]:
    """(top1, top5) percentages on a labeled batch."""
    logits = predict(model, data.data, c, batch_size)
    top5 = logits.topk(min(5, logits.shape[1]), dim=1).indices
    hit1 = (top5[:, 0] == data.labels).float().mean()
    hit5 = (top5 == data.labels[:, None]).any(dim=1).float().mean()
    return float(hit1) * 100.0, float(hit5) * 100.0


def evaluate_grid(model, val_data: ClipBatch, crange: ComputeRange,
                  views: tuple[int, int] = (1, 1), batch_size: int = 64) -> list[dict]:
    """One trade-off row per grid configuration, most expensive first.

    views=(1,1) scores each clip once; larger view counts average softmax over
    multi_view_predict's windows and crops per clip.
    """
    arch = model.arch
    rows = []
    for c in enumerate_grid(crange):
        if views == (1, 1):
            top1, top5 = accuracy(model, val_data, c, batch_size)
        else:
            top1, top5 = _multiview_accuracy(model, val_data, c, views)
        nc = network_cost(arch, c)
        rows.append({
            "gamma_w": c.gamma_w, "gamma_s": c.gamma_s, "gamma_t": c.gamma_t,
            "frames": nc.frames, "pixels": nc.pixels,
            "gflops": nc.gflops, "params": nc.params,
            "top1": top1, "top5": top5,
        })
    rows.sort(key=lambda r: (-r["gflops"], -r["gamma_w"], -r["gamma_s"], -r["gamma_t"]))
    return rows


def _multiview_accuracy(model, data: ClipBatch, c: Configuration, views):
    nt, ns = views
    hits1 = hits5 = 0
    for i in range(len(data)):
        dist = multi_view_predict(model, c, data.data[i], nt, ns)
        top5 = dist.topk(min(5, dist.shape[0])).indices
        hits1 += int(top5[0] == data.labels[i])
        hits5 += int((top5 == data.labels[i]).any())
    return 100.0 * hits1 / len(data), 100.0 * hits5 / len(data)


def multi_view_predict(model, c: Configuration, video: torch.Tensor,
                       n_temporal: int = 10, n_spatial: int = 3) -> torch.Tensor:
    """Mean softmax over n_temporal clip windows x n_spatial square crops.

    video is [3, T, H, W] at the model's full frame rate. Crops slide along the
    longer spatial side (left/center/right); n_spatial=1 uses the center crop.
    Videos shorter than one clip window are loop-padded with a warning.
    """
    if n_temporal < 1 or n_spatial not in (1, 3):
        raise ConfigError("need n_temporal >= 1 and n_spatial in {1, 3}")
    arch = model.arch
    window = clip_frames_for(arch)
    t_total = video.shape[1]
    if t_total < window:
        warnings.warn(f"video of {t_total} frames loop-padded to one {window}-frame window")
        reps = [video[:, i % t_total] for i in range(window)]
        video = torch.stack(reps, dim=1)
        t_total = window
    starts = uniform_frame_indices(t_total - window + 1, min(n_temporal, t_total - window + 1))

    _, _, h, w = video.shape
    side = min(h, w)
    span = max(h, w) - side
    offsets = [span // 2] if n_spatial == 1 else [0, span // 2, span]
    dists = []
    for s in starts:
        clip = video[:, s:s + window]
        for off in offsets:
            crop = clip[..., off:off + side, :] if h > w else clip[..., :, off:off + side]
            if side != arch.base_spatial:
                crop = spatial_resize(crop, arch.base_spatial)
            logits = forward_config(model, crop[None], c)
            dists.append(F.softmax(logits[0], dim=0))
    return torch.stack(dists).mean(dim=0)


# ---------------------------------------------------------------------------
# trade-off table files
# ---------------------------------------------------------------------------

def write_tradeoff_csv(path, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(TRADEOFF_COLUMNS)
        for r in rows:
            w.writerow([f"{r['gamma_w']:.4f}", f"{r['gamma_s']:.4f}", f"{r['gamma_t']:.4f}",
                        r["frames"], r["pixels"], f"{r['gflops']:.6f}", r["params"],
                        f"{r['top1']:.2f}", f"{r['top5']:.2f}"])


def read_tradeoff_csv(path) -> list[dict]:
    with open(path) as f:
        rows = []
        for r in csv.DictReader(f):
            rows.append({
                "gamma_w": float(r["gamma_w"]), "gamma_s": float(r["gamma_s"]),
                "gamma_t": float(r["gamma_t"]), "frames": int(r["frames"]),
                "pixels": int(r["pixels"]), "gflops": float(r["gflops"]),
                "params": int(r["params"]), "top1": float(r["top1"]),
                "top5": float(r["top5"]),
            })
    if not rows:
        raise ConfigError(f"{path} holds no trade-off rows")
    return rows


def write_tradeoff_matrix(path, rows):
    """Appendix-style pivot: one row per input resolution (pixels^2 x frames),
    one top-1 column per gamma_w, widest first."""
    widths = sorted({r["gamma_w"] for r in rows}, reverse=True)
    res = {}
    for r in rows:
        res.setdefault((r["pixels"], r["frames"]), {})[r["gamma_w"]] = r["top1"]
    order = sorted(res, key=lambda pf: (-pf[0] * pf[0] * pf[1], -pf[0]))
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["resolution"] + [f"gw={gw:.2f}" for gw in widths])
        for pf in order:
            cells = [res[pf].get(gw) for gw in widths]
            w.writerow([f"{pf[0]}^2x{pf[1]}"] +
                       [("" if c is None else f"{c:.2f}") for c in cells])
