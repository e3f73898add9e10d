"""Command-line surface.

Subcommands: cost, train, calibrate, eval, budget, select, cam, plot, rerun.
Every command writes a manifest next to its outputs; `rerun <manifest>`
replays the recorded argument vector. Exit codes: 0 success, 2 validation
error, 3 infeasible budget, 4 I/O failure.

GFLOPs throughout are billions of multiply-adds per view (conv and fusion
layers; pooling, BN, activations and the classifier head are not counted).
The A3D_SEED environment variable overrides any configured seed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

from .budget import BudgetTable, build_budget_table, select_config
from .calibrate import CALIB_BATCHES, CALIB_PASSES, calibrate_many, calibration_batches
from .cam import compute_cam, save_cam
from .checkpoint import build_from_checkpoint, load_checkpoint, save_checkpoint
from .configspace import Configuration, enumerate_grid, get_range
from .costmodel import cost_rows, expected_training_cost, network_cost, write_cost_csv
from .data import SynthSpec, single_frame_stimulus
from .errors import A3dError, ConfigError, InfeasibleBudgetError
from .evaluate import (evaluate_grid, read_tradeoff_csv, write_tradeoff_csv,
                       write_tradeoff_matrix)
from .manifest import RunManifest, write_manifest
from .presets import get_arch, preset_names
from .training import RunConfig, clip_frames_for, fit, make_data

try:
    import torch
except ImportError:  # pragma: no cover
    torch = None


def _parse_config(text: str) -> Configuration:
    parts = text.split(",")
    if len(parts) != 3:
        raise ConfigError(f"--config wants w,s,t, got {text!r}")
    try:
        return Configuration(*(float(p) for p in parts))
    except ValueError as e:
        raise ConfigError(f"--config values must be numbers: {e}") from e


def _parse_views(text: str) -> tuple[int, int]:
    try:
        nt, ns = (int(p) for p in text.split(","))
        return nt, ns
    except ValueError as e:
        raise ConfigError(f"--views wants nt,ns, got {text!r}") from e


def _seed_override(seed: int) -> int:
    return int(os.environ["A3D_SEED"]) if "A3D_SEED" in os.environ else seed


# ---------------------------------------------------------------------------
# commands: each returns the list of output paths for the manifest
# ---------------------------------------------------------------------------

def cmd_cost(args) -> list[str]:
    arch = get_arch(args.arch, frames=args.frames, spatial=args.spatial)
    outputs = []
    if args.grid:
        crange = get_range(args.range)
        rows = cost_rows(arch, enumerate_grid(crange))
        if not args.out:
            raise ConfigError("--grid needs --out for the CSV")
        write_cost_csv(args.out, rows)
        outputs.append(args.out)
        print(f"{len(rows)} configurations -> {args.out}")
        if args.expected_training_cost:
            ratio = expected_training_cost(arch, crange)
            print(f"expected training cost (Monte-Carlo): {ratio:.3f}x the full network")
    else:
        c = _parse_config(args.config)
        nc = network_cost(arch, c)
        print(f"{args.arch} @ {c.key()}: {nc.gflops:.2f} GFLOPs/view "
              f"(multiply-adds), {nc.params / 1e6:.2f}M params, "
              f"input {nc.pixels}^2 x {nc.frames}")
        if args.out:
            write_cost_csv(args.out, cost_rows(arch, [c]))
            outputs.append(args.out)
    return outputs


def cmd_train(args) -> list[str]:
    cfg = RunConfig.load(args.config_file)
    if args.mode:
        cfg = replace(cfg, mode=args.mode)
    cfg = replace(cfg, seed=_seed_override(cfg.seed))
    result = fit(cfg, args.out, resume=args.resume)
    print(f"trained {cfg.mode} for {result['epochs']} epochs "
          f"({result['iterations']} iterations) -> {result['checkpoint']}")
    return [result["checkpoint"], result["metrics"]]


def _load_model_and_data(ckpt_path):
    model, meta = build_from_checkpoint(ckpt_path)
    cfg = RunConfig.from_json(json.dumps(meta["run_config"]))
    cfg = replace(cfg, seed=_seed_override(cfg.seed))
    norm = (torch.tensor(meta["norm_mean"]), torch.tensor(meta["norm_std"]))
    return model, meta, cfg, norm


def cmd_calibrate(args) -> list[str]:
    model, meta, cfg, norm = _load_model_and_data(args.checkpoint)
    optimizer = torch.optim.SGD(model.parameters(), lr=0.0)
    load_checkpoint(args.checkpoint, model=model, optimizer=optimizer)
    train_data, _ = make_data(cfg)
    if args.range:
        configs = enumerate_grid(get_range(args.range))
    elif args.config:
        configs = [_parse_config(t) for t in args.config]
    else:
        raise ConfigError("calibrate needs --range or --config")
    batches = calibration_batches(train_data, norm, batch_size=args.batch_size,
                                  n_batches=args.batches, seed=cfg.seed)
    calibrate_many(model, configs, batches, passes=args.passes)
    save_checkpoint(args.checkpoint, model, get_arch(cfg.arch), meta=meta,
                    optimizer=optimizer)
    print(f"calibrated {len(configs)} configurations into {args.checkpoint}")
    return [args.checkpoint]


def cmd_eval(args) -> list[str]:
    model, meta, cfg, norm = _load_model_and_data(args.checkpoint)
    _, val_data = make_data(cfg)
    from .data import ClipBatch, normalize

    val_data = ClipBatch(normalize(val_data.data, *norm), val_data.labels)
    rows = evaluate_grid(model, val_data, get_range(args.range),
                         views=_parse_views(args.views), batch_size=args.batch_size)
    write_tradeoff_csv(args.out, rows)
    outputs = [args.out]
    if args.matrix:
        write_tradeoff_matrix(args.matrix, rows)
        outputs.append(args.matrix)
    print(f"{len(rows)} configurations evaluated -> {args.out}")
    return outputs


def cmd_budget(args) -> list[str]:
    rows = read_tradeoff_csv(args.tradeoff)
    table = build_budget_table(rows, arch=args.arch, views=_parse_views(args.views))
    table.save(args.out)
    print(f"budget table with {len(table.entries)} entries -> {args.out}")
    return [args.out]


def cmd_select(args) -> list[str]:
    table = BudgetTable.load(args.table)
    entry = select_config(table, args.budget)
    print(f"budget {args.budget} GFLOPs -> {entry.config.key()} "
          f"({entry.pixels}^2 x {entry.frames}, {entry.gflops:.3f} GFLOPs, "
          f"top-1 {entry.top1:.2f})")
    return []


def cmd_cam(args) -> list[str]:
    model, meta, cfg, norm = _load_model_and_data(args.checkpoint)
    c = _parse_config(args.config)
    arch = get_arch(cfg.arch)
    if args.clip_index is not None:
        _, val_data = make_data(cfg)
        clip = val_data.data[args.clip_index]
    else:
        spec = SynthSpec(clip_frames=clip_frames_for(arch),
                         samples_per_class=cfg.samples_per_class,
                         noise_std=cfg.noise_std, seed=cfg.seed)
        clip = single_frame_stimulus(spec, args.stimulus_label, args.stimulus_frame)
    from .data import normalize

    result = compute_cam(model, c, normalize(clip, *norm))
    save_cam(result, args.out)
    print(f"predicted class {result.pred_class}, profile argmax "
          f"{int(result.temporal_profile.argmax())} -> {args.out}")
    return [os.path.join(args.out, "temporal_profile.csv")]


def cmd_plot(args) -> list[str]:
    from .plotting import plot_tradeoff

    curves = {os.path.basename(p): read_tradeoff_csv(p) for p in args.tradeoff}
    plot_tradeoff(curves, args.out, title=args.title)
    print(f"plot -> {args.out}")
    return [args.out]


def cmd_rerun(args) -> list[str]:
    mf = RunManifest.load(args.manifest)
    print(f"replaying: a3d {' '.join(mf.argv)}")
    return _dispatch(mf.argv, write_mf=False)


# ---------------------------------------------------------------------------
# wiring
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="a3d",
                                description="adaptive 3D networks: one model, many operating points")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("cost", help="analytic GFLOPs/params for a preset")
    c.add_argument("--arch", required=True, choices=preset_names())
    c.add_argument("--range", default="0.016-1")
    c.add_argument("--grid", action="store_true")
    c.add_argument("--config", default="1,1,1")
    c.add_argument("--frames", type=int)
    c.add_argument("--spatial", type=int)
    c.add_argument("--out")
    c.add_argument("--expected-training-cost", action="store_true")
    c.set_defaults(fn=cmd_cost)

    t = sub.add_parser("train", help="train a model from a run-config JSON")
    t.add_argument("--config-file", required=True)
    t.add_argument("--mode", choices=("a3d", "independent", "multires", "a3d_no_temporal"))
    t.add_argument("--out", required=True)
    t.add_argument("--resume", action="store_true")
    t.set_defaults(fn=cmd_train)

    cal = sub.add_parser("calibrate", help="populate BN statistics per configuration")
    cal.add_argument("--checkpoint", required=True)
    cal.add_argument("--range")
    cal.add_argument("--config", action="append")
    cal.add_argument("--batches", type=int, default=CALIB_BATCHES)
    cal.add_argument("--passes", type=int, default=CALIB_PASSES)
    cal.add_argument("--batch-size", type=int, default=16)
    cal.set_defaults(fn=cmd_calibrate)

    e = sub.add_parser("eval", help="trade-off table over a configuration grid")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--range", required=True)
    e.add_argument("--views", default="1,1")
    e.add_argument("--batch-size", type=int, default=64)
    e.add_argument("--out", required=True)
    e.add_argument("--matrix")
    e.set_defaults(fn=cmd_eval)

    b = sub.add_parser("budget", help="Pareto budget table from a trade-off CSV")
    b.add_argument("--tradeoff", required=True)
    b.add_argument("--arch", default="")
    b.add_argument("--views", default="1,1")
    b.add_argument("--out", required=True)
    b.set_defaults(fn=cmd_budget)

    s = sub.add_parser("select", help="pick the best configuration for a budget")
    s.add_argument("--table", required=True)
    s.add_argument("--budget", type=float, required=True)
    s.set_defaults(fn=cmd_select)

    cm = sub.add_parser("cam", help="class activation maps for one clip")
    cm.add_argument("--checkpoint", required=True)
    cm.add_argument("--config", default="1,1,1")
    cm.add_argument("--clip-index", type=int)
    cm.add_argument("--stimulus-label", type=int, default=0)
    cm.add_argument("--stimulus-frame", type=int, default=3)
    cm.add_argument("--out", required=True)
    cm.set_defaults(fn=cmd_cam)

    pl = sub.add_parser("plot", help="accuracy-vs-cost curve from trade-off CSVs")
    pl.add_argument("--tradeoff", nargs="+", required=True)
    pl.add_argument("--title", default="")
    pl.add_argument("--out", required=True)
    pl.set_defaults(fn=cmd_plot)

    r = sub.add_parser("rerun", help="replay a command from its manifest")
    r.add_argument("manifest")
    r.set_defaults(fn=cmd_rerun)
    return p


def _manifest_dir(args) -> str:
    for attr in ("out", "checkpoint", "table"):
        value = getattr(args, attr, None)
        if value:
            d = value if os.path.isdir(value) else os.path.dirname(os.path.abspath(value))
            return d or "."
    return "."


def _dispatch(argv, write_mf=True) -> list[str]:
    parser = build_parser()
    args = parser.parse_args(argv)
    mf = RunManifest(command=args.command, argv=list(argv),
                     resolved={k: v for k, v in vars(args).items()
                               if k not in ("fn",) and not callable(v)},
                     seed=int(os.environ["A3D_SEED"]) if "A3D_SEED" in os.environ else None)
    outputs = args.fn(args)
    if write_mf and args.command != "rerun":
        mf.finish(outputs)
        write_manifest(_manifest_dir(args), mf)
    return outputs


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        _dispatch(argv)
        return 0
    except InfeasibleBudgetError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except A3dError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
