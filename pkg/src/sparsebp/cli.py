"""Command-line front end: single runs, the comparison grid, sweeps, evaluation.

Exit codes: 0 ok, 1 runtime failure (including divergence), 2 config error.
Every command is deterministic given config + seed, except the wall-time
fields in summaries.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import report as report_mod
from .config import (
    ConfigError,
    RunConfig,
    load_datasets,
    parse_engine_token,
    parse_run_config,
)
from .controller import FINETUNE_PRESET, SCRATCH_PRESET, AdaptiveConfig
from .engines import Adaptive, Full
from .network import Network, apply_weights, load_weights, save_weights
from .train import TrainingDiverged, evaluate, pretrain, train


def _build_net(cfg: RunConfig) -> Network:
    n = cfg.network
    return Network.build(n.widths, hidden=n.hidden, output=n.output,
                         loss=n.loss, seed=cfg.trainer.seed)


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    if args.seed is not None:
        cfg.trainer = dataclasses.replace(cfg.trainer, seed=args.seed)
    if args.out is not None:
        cfg.output.dir = args.out
    if args.limit is not None:
        cfg.dataset.limit = args.limit
    return cfg


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        h.update(f.read())
    return h.hexdigest()


# --------------------------------------------------------------------------
# train
# --------------------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = _apply_overrides(parse_run_config(args.config), args)
    train_data, test_data = load_datasets(cfg.dataset)
    net = _build_net(cfg)
    os.makedirs(cfg.output.dir, exist_ok=True)

    trace_fh = None
    writer = None
    if cfg.output.trace:
        trace_fh = open(os.path.join(cfg.output.dir, "trace.jsonl"), "w")
        writer = report_mod.TraceWriter(trace_fh)
    try:
        result = train(net, train_data, test_data, cfg.trainer, trace_writer=writer)
    finally:
        if trace_fh is not None:
            trace_fh.close()

    summary = report_mod.summary_dict(result)
    report_mod.write_json(os.path.join(cfg.output.dir, "summary.json"), summary)
    save_weights(os.path.join(cfg.output.dir, "weights.bin"), net)
    print(f"engine={result.engine} accuracy={result.final_accuracy:.4f} "
          f"mean_ratio={result.mean_backprop_ratio:.4f} "
          f"acceleration={result.acceleration_analytic:.2f}x")
    return 0


# --------------------------------------------------------------------------
# compare
# --------------------------------------------------------------------------


def _run_compare_row(payload: dict) -> dict:
    """One grid row, isolated so rows can run in worker processes."""
    cfg: RunConfig = payload["cfg"]
    token = payload["token"]
    engine = parse_engine_token(token, None, cfg.trainer.mode)
    if isinstance(engine, Adaptive) and token == "adaptive":
        engine = Adaptive(config=payload["adaptive_config"])
    train_data, test_data = load_datasets(cfg.dataset)
    net = _build_net(cfg)
    apply_weights(net, load_weights(payload["start_weights"]))
    row_cfg = dataclasses.replace(cfg.trainer, engine=engine)
    result = train(net, train_data, test_data, row_cfg,
                   skip_pretrain=payload["skip_pretrain"])
    return {
        "engine": token,
        "accuracy": result.final_accuracy,
        "mean_backprop_ratio": result.mean_backprop_ratio,
        "acceleration_analytic": result.acceleration_analytic,
        "epoch_time_mean_s": result.epoch_time_mean_s,
        "s_mean_per_epoch": result.s_mean_per_epoch,
        "seed": result.seed,
    }


def cmd_compare(args) -> int:
    cfg = _apply_overrides(parse_run_config(args.config), args)
    os.makedirs(cfg.output.dir, exist_ok=True)
    train_data, test_data = load_datasets(cfg.dataset)

    # One shared initialization per grid; every row starts from this file.
    net = _build_net(cfg)
    init_path = os.path.join(cfg.output.dir, "init_weights.bin")
    save_weights(init_path, net)
    init_hash = _sha256(init_path)

    start_weights = init_path
    skip_pretrain = False
    pretrain_info = {}
    if cfg.trainer.mode == "fine-tune":
        # Pretrain once, then every row fine-tunes from the same snapshot.
        metrics = []
        steps = pretrain(net, train_data, test_data, cfg.trainer, metrics)
        pre_path = os.path.join(cfg.output.dir, "pretrained_weights.bin")
        save_weights(pre_path, net)
        start_weights = pre_path
        skip_pretrain = True

        pretrain_info = {
            "pretrain_steps": steps,
            "pretrain_accuracy": evaluate(net, test_data),
            "pretrained_sha256": _sha256(pre_path),
        }

    adaptive_cfg = (cfg.engine.config if isinstance(cfg.engine, Adaptive)
                    else AdaptiveConfig(*(SCRATCH_PRESET if cfg.trainer.mode == "scratch"
                                          else FINETUNE_PRESET)))
    payloads = [
        {"cfg": cfg, "token": token, "start_weights": start_weights,
         "skip_pretrain": skip_pretrain, "adaptive_config": adaptive_cfg}
        for token in cfg.compare_engines
    ]

    rows = []
    if args.threads > 1:
        with ProcessPoolExecutor(max_workers=args.threads) as pool:
            futures = [pool.submit(_run_compare_row, p) for p in payloads]
            for token, fut in zip(cfg.compare_engines, futures):
                try:
                    rows.append(fut.result())
                except Exception as e:  # a failed row must not sink the grid
                    rows.append({"engine": token, "error": str(e)})
    else:
        for p in payloads:
            try:
                rows.append(_run_compare_row(p))
            except Exception as e:
                rows.append({"engine": p["token"], "error": str(e)})

    baseline = next((r for r in rows if r.get("engine") == "full" and "error" not in r), None)
    for r in rows:
        if "error" in r:
            continue
        r["acceleration_measured"] = (
            baseline["epoch_time_mean_s"] / r["epoch_time_mean_s"]
            if baseline and r["epoch_time_mean_s"] > 0 else None
        )

    grid = {"rows": rows, "init_sha256": init_hash, "mode": cfg.trainer.mode,
            "seed": cfg.trainer.seed, **pretrain_info}
    report_mod.validate_compare(grid)
    report_mod.write_json(os.path.join(cfg.output.dir, "compare.json"), grid)

    print(f"{'engine':<22} {'accuracy':>9} {'ratio':>7} {'accel':>7} {'epoch_s':>9} {'t-ratio':>8}")
    for r in rows:
        if "error" in r:
            print(f"{r['engine']:<22} FAILED: {r['error']}")
            continue
        tr = r["acceleration_measured"]
        t_col = f"{tr:>7.2f}x" if tr is not None else "       -"
        print(f"{r['engine']:<22} {r['accuracy']:>9.4f} {r['mean_backprop_ratio']:>7.3f} "
              f"{r['acceleration_analytic']:>6.2f}x {r['epoch_time_mean_s']:>9.2f} {t_col}")
    return 0 if all("error" not in r for r in rows) else 1


# --------------------------------------------------------------------------
# sweep
# --------------------------------------------------------------------------


def _run_sweep_cell(payload: dict) -> dict:
    cfg: RunConfig = payload["cfg"]
    acfg: AdaptiveConfig = payload["adaptive_config"]
    train_data, test_data = load_datasets(cfg.dataset)
    accs, ratios = [], []
    for r in range(payload["repeats"]):
        seed = cfg.trainer.seed + r
        row_cfg = dataclasses.replace(cfg.trainer, engine=Adaptive(config=acfg), seed=seed)
        n = cfg.network
        net = Network.build(n.widths, hidden=n.hidden, output=n.output,
                            loss=n.loss, seed=seed)
        result = train(net, train_data, test_data, row_cfg)
        accs.append(result.final_accuracy)
        ratios.append(result.mean_backprop_ratio)
    preset = None
    combo = (acfg.s_min, acfg.s_max, acfg.zeta)
    if combo == SCRATCH_PRESET:
        preset = "scratch-default"
    elif combo == FINETUNE_PRESET:
        preset = "finetune-default"
    return {
        "s_min": acfg.s_min, "s_max": acfg.s_max, "zeta": acfg.zeta,
        "runs": len(accs),
        "accuracy_mean": float(np.mean(accs)), "accuracy_std": float(np.std(accs)),
        "ratio_mean": float(np.mean(ratios)), "ratio_std": float(np.std(ratios)),
        "preset": preset,
    }


def cmd_sweep(args) -> int:
    cfg = _apply_overrides(parse_run_config(args.config), args)
    os.makedirs(cfg.output.dir, exist_ok=True)
    s_mins = cfg.sweep_s_min or [SCRATCH_PRESET[0]]
    s_maxs = cfg.sweep_s_max or [SCRATCH_PRESET[1]]
    zetas = cfg.sweep_zeta or [SCRATCH_PRESET[2]]

    cells = []
    for s_min in s_mins:
        for s_max in s_maxs:
            for zeta in zetas:
                try:
                    acfg = AdaptiveConfig(s_min=s_min, s_max=s_max, zeta=zeta)
                except ValueError as e:
                    raise ConfigError("sweep", str(e)) from None
                cells.append({"cfg": cfg, "adaptive_config": acfg,
                              "repeats": cfg.sweep_repeats})

    if args.threads > 1:
        with ProcessPoolExecutor(max_workers=args.threads) as pool:
            rows = list(pool.map(_run_sweep_cell, cells))
    else:
        rows = [_run_sweep_cell(c) for c in cells]

    grid = {"rows": rows, "repeats": cfg.sweep_repeats, "seed": cfg.trainer.seed}
    report_mod.validate_sweep(grid)
    report_mod.write_json(os.path.join(cfg.output.dir, "sweep.json"), grid)
    print(f"{'s_min':>6} {'s_max':>6} {'zeta':>6} {'accuracy':>16} {'ratio':>16} preset")
    for r in rows:
        print(f"{r['s_min']:>6.2f} {r['s_max']:>6.2f} {r['zeta']:>6.2f} "
              f"{r['accuracy_mean']:>8.4f}±{r['accuracy_std']:<7.4f} "
              f"{r['ratio_mean']:>8.4f}±{r['ratio_std']:<7.4f} {r['preset'] or '-'}")
    return 0


# --------------------------------------------------------------------------
# eval
# --------------------------------------------------------------------------


def cmd_eval(args) -> int:
    cfg = _apply_overrides(parse_run_config(args.config), args)
    _, test_data = load_datasets(cfg.dataset)
    net = _build_net(cfg)
    apply_weights(net, load_weights(args.weights))
    acc = evaluate(net, test_data)
    print(f"accuracy={acc:.4f} n={len(test_data)}")
    return 0


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sparsebp",
        description="Train dense nets with full, fixed top-k, or adaptive sparse backprop.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (("train", cmd_train), ("compare", cmd_compare),
                     ("sweep", cmd_sweep), ("eval", cmd_eval)):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="run-config file (INI)")
        p.add_argument("--seed", type=int, default=None, help="override trainer.seed")
        p.add_argument("--out", default=None, help="override output.dir")
        p.add_argument("--limit", type=int, default=None,
                       help="truncate the train split to this many samples")
        p.add_argument("--threads", type=int, default=1,
                       help="parallel worker processes for grid/sweep cells")
        if name == "eval":
            p.add_argument("--weights", required=True, help="weights file to evaluate")
        p.set_defaults(fn=fn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except TrainingDiverged as e:
        print(f"training diverged: {e}", file=sys.stderr)
        return 1
    except (OSError, ValueError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
