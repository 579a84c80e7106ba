"""Command-line interface.

Subcommands: ``train`` (full pipeline), ``prune-only``, ``eval``,
``sharpness``, ``corrupt`` (materialize corrupted sets), ``ablate``,
``export``. Every run-config key is exposed as a ``--key`` flag on the
training-style subcommands and overrides the config file.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import tensor as T
from .config import RunConfig, build_config, parse_config_file, _parse_value
from .corruption import corrupt_batch, evaluate
from .data import load_dataset, measurement_batches
from .models import load_model
from .pipeline import ablation_matrix, export_pruned_model, run_pipeline
from .sharpness import perturbation_gap, top_hessian_eigenvalue


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", default=None, help="flat-key config file")
    for f in fields(RunConfig):
        parser.add_argument(f"--{f.name}", default=None, metavar="V")


def _collect_config(args) -> RunConfig:
    file_values = parse_config_file(args.config) if args.config else {}
    overrides = {}
    for f in fields(RunConfig):
        raw = getattr(args, f.name, None)
        if raw is not None:
            overrides[f.name] = _parse_value(f.name, str(raw))
    return build_config(file_values, overrides)


def _cmd_train(args) -> int:
    cfg = _collect_config(args)
    summary = run_pipeline(cfg, args.out or cfg.out_dir)
    print(json.dumps(summary.to_json_dict()["robustness"], sort_keys=True))
    print(f"final val acc {summary.final_val_acc:.4f}  "
          f"param fraction {summary.param_fraction:.4f}  steps {summary.steps}")
    return 1 if summary.diverged else 0


def _cmd_prune_only(args) -> int:
    cfg = _collect_config(args)
    overrides = {"warmup_epochs": 0, "finetune_epochs": 0}
    flat = cfg.to_flat_dict()
    flat.update({k: str(v) for k, v in overrides.items()})
    cfg = build_config({k: _parse_value(k, v) for k, v in flat.items()})
    summary = run_pipeline(cfg, args.out or cfg.out_dir)
    print(f"prune events {summary.prune_events}  "
          f"alive fraction {summary.alive_fraction:.4f}  "
          f"post-prune val acc {summary.post_prune_val_acc}")
    return 1 if summary.diverged else 0


def _cmd_eval(args) -> int:
    cfg = _collect_config(args)
    T.set_default_dtype(cfg.dtype)
    model, _ = load_model(args.checkpoint)
    _, _, xv, yv = load_dataset(cfg)
    report = evaluate(
        model, xv, yv, kinds=cfg.corruption_kinds, severities=cfg.severities,
        seed=cfg.corruption_seed, batch_size=cfg.batch_size,
    )
    out = Path(args.out or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report.to_csv(out / "robustness.csv")
    report.to_json(out / "robustness.json")
    print(json.dumps(report.to_json_dict(), indent=2, sort_keys=True))
    return 0


def _cmd_sharpness(args) -> int:
    cfg = _collect_config(args)
    T.set_default_dtype(cfg.dtype)
    model, _ = load_model(args.checkpoint)
    _, _, xv, yv = load_dataset(cfg)
    batches = measurement_batches(
        xv, yv, cfg.measure_batches, cfg.measure_batch_size, cfg.measure_seed
    )
    gap = perturbation_gap(model, batches, rho=cfg.sharpness_rho, ascent_steps=cfg.ascent_steps)
    eig = top_hessian_eigenvalue(
        model, batches, iters=cfg.hessian_iters, tol=cfg.hessian_tol, seed=cfg.measure_seed
    )
    print(json.dumps(
        {
            "perturbation_gap": gap.value, "rho": gap.rho, "ascent_steps": gap.ascent_steps,
            "top_hessian_eig": eig.value, "power_iterations": eig.iterations,
            "hvp_mode": eig.meta.get("mode"),
        },
        indent=2, sort_keys=True,
    ))
    return 0


def _cmd_corrupt(args) -> int:
    cfg = _collect_config(args)
    _, _, xv, yv = load_dataset(cfg)
    out = Path(args.out or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for ki, kind in enumerate(cfg.corruption_kinds):
        for severity in cfg.severities:
            seed = cfg.corruption_seed * 1_000_003 + ki * 7919 + severity * 101
            xc = corrupt_batch(xv, kind, severity, seed)
            np.savez_compressed(out / f"{kind}_s{severity}.npz", x=xc, y=yv)
    print(f"wrote {len(cfg.corruption_kinds) * len(cfg.severities)} corrupted sets to {out}")
    return 0


def _cmd_ablate(args) -> int:
    cfg = _collect_config(args)
    axes: dict[str, list] = {}
    for spec in args.axis or []:
        if "=" not in spec:
            raise SystemExit(f"--axis expects key=v1,v2,..., got {spec!r}")
        key, raw = spec.split("=", 1)
        axes[key.strip()] = [v.strip() for v in raw.split(",") if v.strip()]
    results = ablation_matrix(cfg, axes, args.out or cfg.out_dir)
    for r in results:
        s = r["summary"]
        if s is None:
            print(f"{r['axes']}: FAILED ({r['error']})")
        else:
            print(f"{r['axes']}: val_acc {s.final_val_acc:.4f} "
                  f"acc_c {s.robustness.get('acc_c', float('nan')):.4f} "
                  f"r_c {s.robustness.get('r_c')}")
    return 0


def _cmd_export(args) -> int:
    reduced, max_diff = export_pruned_model(
        args.checkpoint, args.out, probe_batches=args.probe_batches
    )
    counts = {l.name: l.out_channels() for l in reduced.param_layers}
    print(f"exported to {args.out}; certified max |logit diff| {max_diff:.3e}; channels {counts}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="adasap",
        description="Sharpness-aware channel pruning: train, prune, measure, evaluate.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run the full warmup/prune/finetune pipeline")
    _add_config_flags(p)
    p.add_argument("--out", default=None, help="output directory (default: config out_dir)")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("prune-only", help="run only the pruning phase of the pipeline")
    _add_config_flags(p)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_prune_only)

    p = sub.add_parser("eval", help="clean + corrupted evaluation of a checkpoint")
    _add_config_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("sharpness", help="sharpness readings for a checkpoint")
    _add_config_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=_cmd_sharpness)

    p = sub.add_parser("corrupt", help="materialize corrupted evaluation sets")
    _add_config_flags(p)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_corrupt)

    p = sub.add_parser("ablate", help="run an ablation matrix over config axes")
    _add_config_flags(p)
    p.add_argument("--axis", action="append", metavar="KEY=V1,V2",
                   help="repeatable; e.g. --axis optimizer=sgd,adasap")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("export", help="physically shrink a masked checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--probe-batches", type=int, default=4, dest="probe_batches")
    p.set_defaults(func=_cmd_export)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
