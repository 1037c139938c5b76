"""Command-line entry point: train, eval, profile and sweep.

Exit codes are a stable contract:
  0 success, 2 configuration error, 3 training diverged,
  4 artifact mismatch (checkpoint/dataset not what the config expects),
  5 I/O error.

``UPSEG_THREADS`` caps internal parallelism. The cap must reach the BLAS
libraries before numpy first loads, which is why this module sets the
thread environment variables at import time, ahead of every numpy import.
"""

from __future__ import annotations

import os


def _cap_threads() -> None:
    cap = os.environ.get("UPSEG_THREADS")
    if not cap:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS", "VECLIB_MAXIMUM_THREADS"):
        os.environ.setdefault(var, cap)


_cap_threads()

import argparse
import concurrent.futures
import dataclasses
import sys
from pathlib import Path

from .complexity import format_table, profile, report_to_csv, upscale_overhead
from .config import RunConfig, load_run_config
from .errors import (ArtifactMismatchError, ConfigError, DivergedError,
                     DomainError, FormatError, ShapeError, UsageError)
from .graph import UpscaleStackConfig, build_unet
from .loss import LossConfig
from .train import (build_model, evaluate_model, load_checkpoint,
                    prepare_samples, save_checkpoint, train_model)

TRAIN_LOG_NAME = "train_log.csv"
PROFILE_CSV_NAME = "profile.csv"
SWEEP_CSV_NAME = "sweep.csv"


def _fmt_cell(value) -> str:
    return repr(value) if isinstance(value, float) else str(value)


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    lines = [",".join(header)]
    lines.extend(",".join(_fmt_cell(v) for v in row) for row in rows)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def _resolve(path_str: str, out_dir: Path) -> Path:
    p = Path(path_str)
    return p if p.is_absolute() else out_dir / p


# ---------------------------------------------------------------------------
# commands


def cmd_train(cfg: RunConfig, out_dir: Path, args) -> None:
    graph = build_model(cfg)
    train_samples, val_samples, _ = prepare_samples(cfg)
    result = train_model(graph, train_samples, val_samples, cfg.loss,
                         cfg.optimizer)
    ckpt_path = _resolve(cfg.eval.checkpoint, out_dir)
    save_checkpoint(ckpt_path, graph)
    log_path = out_dir / TRAIN_LOG_NAME
    _write_csv(log_path, ["epoch", "train_loss", "val_dice", "val_jaccard"],
               [[r.epoch, r.train_loss, r.val_dice, r.val_jaccard]
                for r in result.log])
    stop = "early-stopped" if result.stopped_early else "ran to max_epochs"
    print(f"trained {result.epochs_run} epochs ({stop}); best validation "
          f"jaccard {result.best_val_jaccard:.4f} at epoch {result.best_epoch}")
    print(f"checkpoint: {ckpt_path}")
    print(f"training log: {log_path}")


def cmd_eval(cfg: RunConfig, out_dir: Path, args) -> None:
    graph = build_model(cfg)
    load_checkpoint(_resolve(cfg.eval.checkpoint, out_dir), graph)
    train_samples, val_samples, _ = prepare_samples(cfg)
    subset = {"val": val_samples, "train": train_samples,
              "all": train_samples + val_samples}[cfg.eval.split]
    gt_res = subset[0].mask.shape[-1]
    scores = evaluate_model(graph, subset, gt_res, cfg.optimizer.batch_size)
    report_path = _resolve(cfg.eval.report_path, out_dir)
    _write_csv(report_path, ["aggregation", "mean_dice", "mean_jaccard"],
               [["macro", scores["macro_dice"], scores["macro_jaccard"]],
                ["pooled", scores["pooled_dice"], scores["pooled_jaccard"]]])
    print(f"evaluated {len(subset)} samples ({cfg.eval.split} split) at "
          f"ground-truth resolution {gt_res}")
    for kind in ("macro", "pooled"):
        print(f"{kind}: dice {scores[f'{kind}_dice']:.4f}, "
              f"jaccard {scores[f'{kind}_jaccard']:.4f}")
    print(f"report: {report_path}")


def cmd_profile(cfg: RunConfig, out_dir: Path, args) -> None:
    res = cfg.resolve_profile_res()
    extended = build_model(cfg)
    report = profile(extended, res)
    csv_path = out_dir / PROFILE_CSV_NAME
    csv_path.write_text(report_to_csv(report), encoding="utf-8", newline="\n")
    print(format_table(report))
    if cfg.upscale.num_stages > 0:
        base = profile(build_unet(cfg.backbone, seed=cfg.optimizer.seed), res)
        over = upscale_overhead(base, report)
        print(f"up-scaling stack overhead: +{over.params_delta} params "
              f"({over.params_relative:.2%}), +{over.macs_delta} macs "
              f"({over.macs_relative:.2%}), +{over.act_bytes_delta} "
              f"activation bytes ({over.act_bytes_relative:.2%})")
    print(f"profile csv: {csv_path}")


def _sweep_run_config(cfg: RunConfig, resolution: int, variant: str,
                      index: int) -> RunConfig:
    spec = cfg.data.spec
    if spec is None:
        raise ConfigError("sweep requires data.source = synthetic")
    if resolution % 2 ** cfg.backbone.depth:
        raise ConfigError(f"sweep resolution {resolution} is not a multiple "
                          f"of 2^depth = {2 ** cfg.backbone.depth}")
    ratio = spec.gt_res // resolution
    if resolution > spec.gt_res or ratio * resolution != spec.gt_res \
            or ratio & (ratio - 1):
        raise ConfigError(f"sweep resolution {resolution} does not divide "
                          f"gt_res {spec.gt_res} by a power of two")
    stages = ratio.bit_length() - 1 if variant == "extended" else 0
    new_spec = dataclasses.replace(spec, input_res=resolution)
    return dataclasses.replace(
        cfg,
        data=dataclasses.replace(cfg.data, spec=new_spec),
        upscale=UpscaleStackConfig(
            num_stages=stages, num_classes=cfg.backbone.num_classes,
            use_skips=cfg.upscale.use_skips,
            skip_exempt_stages=cfg.upscale.skip_exempt_stages),
        loss=LossConfig(num_stages=stages, base_loss=cfg.loss.base_loss),
        optimizer=dataclasses.replace(cfg.optimizer,
                                      seed=cfg.optimizer.seed + 17 * index),
    )


def _sweep_job(job: tuple[RunConfig, int, str]) -> list:
    cfg, resolution, variant = job
    graph = build_model(cfg)
    train_samples, val_samples, _ = prepare_samples(cfg)
    train_model(graph, train_samples, val_samples, cfg.loss, cfg.optimizer)
    gt_res = val_samples[0].mask.shape[-1]
    scores = evaluate_model(graph, val_samples, gt_res,
                            cfg.optimizer.batch_size)
    report = profile(graph, resolution)
    return [resolution, report.total_macs / 1e9, report.total_params,
            scores["macro_dice"], scores["macro_jaccard"], variant]


def cmd_sweep(cfg: RunConfig, out_dir: Path, args) -> None:
    resolutions = (tuple(int(r) for r in args.resolutions.split(","))
                   if args.resolutions else cfg.sweep.resolutions)
    if not resolutions:
        raise ConfigError("sweep needs at least one resolution")
    parallel = cfg.sweep.parallel or args.parallel
    jobs = [(_sweep_run_config(cfg, res, variant, i), res, variant)
            for i, res in enumerate(resolutions)
            for variant in ("baseline", "extended")]
    if parallel:
        workers = int(os.environ.get("UPSEG_THREADS") or os.cpu_count() or 1)
        with concurrent.futures.ProcessPoolExecutor(
                max_workers=min(workers, len(jobs))) as pool:
            rows = list(pool.map(_sweep_job, jobs))
    else:
        rows = [_sweep_job(job) for job in jobs]
    csv_path = out_dir / SWEEP_CSV_NAME
    _write_csv(csv_path, ["resolution", "gmacs", "params", "mean_dice",
                          "mean_jaccard", "variant"], rows)
    for row in rows:
        print(f"resolution {row[0]:>4}  {row[5]:<9} gmacs {row[1]:.4f}  "
              f"params {row[2]:>9}  dice {row[3]:.4f}  jaccard {row[4]:.4f}")
    print(f"sweep csv: {csv_path}")


# ---------------------------------------------------------------------------
# argument parsing and dispatch


def _parse_args(argv):
    parser = argparse.ArgumentParser(
        prog="upseg",
        description="Low-resolution-input segmentation with up-scaled "
                    "supervision: train, evaluate, profile, sweep.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, func in (("train", cmd_train), ("eval", cmd_eval),
                       ("profile", cmd_profile), ("sweep", cmd_sweep)):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="run config path")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--seed", type=int, default=None,
                       help="override optimizer.seed")
        if name == "sweep":
            p.add_argument("--resolutions", default=None,
                           help="comma list overriding sweep.resolutions")
            p.add_argument("--parallel", action="store_true",
                           help="run sweep sub-runs in worker processes")
        p.set_defaults(func=func)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    args = _parse_args(argv)
    try:
        cfg = load_run_config(args.config)
        if args.seed is not None:
            if not 0 <= args.seed < 2 ** 64:
                raise ConfigError("--seed must be a 64-bit unsigned integer")
            cfg = dataclasses.replace(
                cfg, optimizer=dataclasses.replace(cfg.optimizer,
                                                   seed=args.seed))
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        args.func(cfg, out_dir, args)
        return 0
    except (ConfigError, UsageError, ShapeError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ArtifactMismatchError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 5


def entry() -> None:
    sys.exit(main())
