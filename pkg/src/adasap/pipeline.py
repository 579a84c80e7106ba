"""Config-driven warmup -> prune -> finetune orchestration.

The run trains with per-neuron adaptive perturbations through the warmup and
pruning phases, fires prune events every ``prune_frequency`` optimizer steps
during the pruning phase until the schedule completes, then finetunes with a
uniform radius. Sharpness is measured at the three phase boundaries on a
fixed batch set, a corruption-robustness report is produced at the end, and
every logged number is reproducible from (config, seed).

Outputs per run directory: ``metrics.csv``, ``prune_events.jsonl``,
checkpoints at phase boundaries, ``summary.json``, ``config.txt``.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .config import PRESET_MANAGED_KEYS, RunConfig, build_config
from .corruption import evaluate
from .data import epoch_batches, load_dataset, measurement_batches
from .importance import RhoBounds
from .models import build_model, load_model, reduce_model, save_model
from .optimizer import LRSchedule, PerturbationConfig, SGDMomentum, adasap_step
from .pruning import PruneEvent, append_event, build_schedule, prune_step, sparsity_report
from .sharpness import measure_phase

METRIC_COLUMNS = [
    "record", "step", "epoch", "phase", "loss", "perturbed_loss", "mean_rho", "max_rho",
    "lr", "val_acc", "alive_fraction", "param_fraction", "kind", "value", "rho",
    "ascent_steps",
]


class ExportError(RuntimeError):
    pass


class MetricsLog:
    """Append-only metric rows; CSV text is identical for identical runs."""

    def __init__(self):
        self.rows: list[dict] = []

    def add(self, record: str, **values) -> None:
        row = {"record": record}
        row.update(values)
        self.rows.append(row)

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(METRIC_COLUMNS)
        for row in self.rows:
            writer.writerow([_fmt(row.get(col, "")) for col in METRIC_COLUMNS])
        return buf.getvalue()

    def write(self, path) -> None:
        Path(path).write_text(self.to_csv_text(), encoding="utf-8")


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass
class RunSummary:
    config: dict
    seed: int
    steps: int = 0
    final_val_acc: float = 0.0
    post_prune_val_acc: float | None = None
    robustness: dict = field(default_factory=dict)
    sharpness: list = field(default_factory=list)
    alive_fraction: float = 1.0
    param_fraction: float = 1.0
    prune_events: int = 0
    diverged: bool = False
    out_dir: str | None = None

    def sharpness_value(self, phase: str, kind: str) -> float | None:
        for r in self.sharpness:
            if r["phase"] == phase and r["kind"] == kind:
                return r["value"]
        return None

    def to_json_dict(self) -> dict:
        return {
            "config": self.config,
            "seed": self.seed,
            "steps": self.steps,
            "final_val_acc": self.final_val_acc,
            "post_prune_val_acc": self.post_prune_val_acc,
            "robustness": self.robustness,
            "sharpness": self.sharpness,
            "alive_fraction": self.alive_fraction,
            "param_fraction": self.param_fraction,
            "prune_events": self.prune_events,
            "diverged": self.diverged,
        }


def epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    """Batch-order generator for one epoch; part of the reproducibility contract."""
    return np.random.default_rng([seed, epoch, 920_461])


def _phase_perturbation(cfg: RunConfig, phase: str) -> PerturbationConfig:
    if phase == "finetune":
        if cfg.finetune_mode == "adaptive":
            bounds = RhoBounds(cfg.rho_min, cfg.rho_max)
            adaptive = cfg.rho_min < cfg.rho_max
        elif cfg.finetune_mode == "none":
            bounds = RhoBounds(0.0, 0.0)
            adaptive = False
        else:
            bounds = RhoBounds(cfg.finetune_rho, cfg.finetune_rho)
            adaptive = False
    else:
        bounds = RhoBounds(cfg.rho_min, cfg.rho_max)
        adaptive = cfg.rho_min < cfg.rho_max
    return PerturbationConfig(
        bounds=bounds,
        transform=cfg.transform,
        transform_eta=cfg.transform_eta,
        denominator=cfg.epsilon_denominator,
        adaptive=adaptive,
        psi=cfg.psi,
        score_ema=cfg.score_ema,
    )


def run_pipeline(cfg: RunConfig, out_dir: str | Path | None = None) -> RunSummary:
    cfg.validate()
    T.set_default_dtype(cfg.dtype)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    xt, yt, xv, yv = load_dataset(cfg)
    model = build_model(cfg.model_spec(), cfg.seed, dtype=cfg.dtype)
    steps_per_epoch = cfg.n_train // cfg.batch_size
    total_epochs = cfg.warmup_epochs + cfg.pruning_epochs + cfg.finetune_epochs
    total_steps = total_epochs * steps_per_epoch
    schedule = LRSchedule(
        peak=cfg.lr_peak,
        warmup_steps=int(round(cfg.lr_warmup_epochs * steps_per_epoch)),
        total_steps=total_steps,
    )
    opt = SGDMomentum(model.trainable_params(), schedule, cfg.momentum, cfg.weight_decay)

    prune_sched = None
    if cfg.prune_keep_fraction < 1.0 and cfg.pruning_epochs > 0:
        m = len(model.prunable_partitions())
        n_layers = sum(1 for l in model.param_layers if l.prunable)
        pruning_steps = cfg.pruning_epochs * steps_per_epoch
        total_events = pruning_steps // cfg.prune_frequency
        if total_events < 1:
            raise ValueError(
                f"pruning phase has {pruning_steps} steps; no prune event fits at "
                f"frequency {cfg.prune_frequency}"
            )
        prune_sched = build_schedule(
            cfg.prune_keep_fraction, total_events, m, n_layers=n_layers,
            frequency=cfg.prune_frequency,
        )

    measure = measurement_batches(
        xv, yv, cfg.measure_batches, cfg.measure_batch_size, cfg.measure_seed
    )
    log = MetricsLog()
    summary = RunSummary(config=cfg.to_flat_dict(), seed=cfg.seed, out_dir=str(out) if out else None)
    events: list[PruneEvent] = []
    score_state: dict[str, float] = {}

    phases = (
        [("warmup", cfg.warmup_epochs), ("pruning", cfg.pruning_epochs),
         ("finetune", cfg.finetune_epochs)]
    )

    def measure_boundary(tag: str, step: int) -> None:
        readings = measure_phase(
            model, measure, tag, rho=cfg.sharpness_rho, ascent_steps=cfg.ascent_steps,
            iters=cfg.hessian_iters, tol=cfg.hessian_tol, seed=cfg.measure_seed,
        )
        for r in readings:
            log.add(
                "sharpness", step=step, phase=tag, kind=r.kind, value=r.value,
                rho=r.rho, ascent_steps=r.ascent_steps,
            )
            summary.sharpness.append(
                {"phase": tag, "kind": r.kind, "value": r.value, "rho": r.rho,
                 "ascent_steps": r.ascent_steps, "valid": r.valid}
            )

    def checkpoint(name: str, step: int, phase: str) -> None:
        if out is not None:
            save_model(out / name, model, meta={"step": step, "phase": phase})

    step = 0
    epoch = 0
    pruning_phase_step = 0
    events_done = 0
    diverged = False
    pre_prune_done = False
    for phase, n_epochs in phases:
        if n_epochs <= 0:
            continue
        if phase == "pruning" and prune_sched is not None and not pre_prune_done:
            # zero-warmup runs: the pre-prune boundary is the start of pruning
            measure_boundary("pre_prune", step)
            pre_prune_done = True
        log.add("phase", step=step, epoch=epoch, phase=phase)
        pcfg = _phase_perturbation(cfg, phase)
        for _ in range(n_epochs):
            rng = epoch_rng(cfg.seed, epoch)
            for idx in epoch_batches(cfg.n_train, cfg.batch_size, rng):
                batch = (xt[idx], yt[idx])
                want_grads = (
                    phase == "pruning"
                    and prune_sched is not None
                    and cfg.phi == "taylor"
                    and events_done < prune_sched.total_events
                    and (pruning_phase_step + 1) % cfg.prune_frequency == 0
                )
                report = adasap_step(
                    model, batch, pcfg, opt, step=step, score_state=score_state,
                    keep_grads_at_w=want_grads,
                )
                step += 1
                log.add(
                    "step", step=step, epoch=epoch, phase=phase, loss=report.loss,
                    perturbed_loss=report.perturbed_loss, mean_rho=report.mean_rho,
                    max_rho=report.max_rho, lr=report.lr,
                )
                if report.diverged:
                    diverged = True
                    break
                if phase == "pruning" and prune_sched is not None:
                    pruning_phase_step += 1
                    if (
                        events_done < prune_sched.total_events
                        and pruning_phase_step % cfg.prune_frequency == 0
                    ):
                        event = prune_step(
                            model, prune_sched, events_done + 1, cfg.phi,
                            grads=report.grads_at_w, opt=opt, step=step,
                        )
                        events_done += 1
                        events.append(event)
                        log.add(
                            "prune", step=step, epoch=epoch, phase=phase,
                            kind=event.criterion,
                            alive_fraction=event.alive_fraction,
                            param_fraction=event.param_fraction,
                        )
                        if out is not None:
                            append_event(out / "prune_events.jsonl", event)
                        if events_done == prune_sched.total_events:
                            summary.post_prune_val_acc = model.accuracy(xv, yv, cfg.batch_size)
                            measure_boundary("post_prune", step)
                            checkpoint("post_prune.ckpt", step, phase)
            if diverged:
                break
            epoch += 1
            if cfg.eval_every > 0 and epoch % cfg.eval_every == 0:
                alive_fraction, param_fraction = sparsity_report(model)
                log.add(
                    "eval", step=step, epoch=epoch, phase=phase,
                    val_acc=model.accuracy(xv, yv, cfg.batch_size),
                    alive_fraction=alive_fraction, param_fraction=param_fraction,
                )
        if diverged:
            break
        if phase == "warmup":
            measure_boundary("pre_prune", step)
            pre_prune_done = True
            checkpoint("warmup_end.ckpt", step, phase)

    summary.steps = step
    summary.diverged = diverged
    summary.prune_events = events_done
    if not diverged:
        measure_boundary("post_finetune", step)
        summary.final_val_acc = model.accuracy(xv, yv, cfg.batch_size)
        report = evaluate(
            model, xv, yv, kinds=cfg.corruption_kinds, severities=cfg.severities,
            seed=cfg.corruption_seed, batch_size=cfg.batch_size,
        )
        summary.robustness = {
            "acc_val": report.acc_val,
            "acc_c": report.acc_c,
            "r_c": report.r_c,
            "flagged": report.flagged,
        }
        if out is not None:
            report.to_csv(out / "robustness.csv")
            report.to_json(out / "robustness.json")
    summary.alive_fraction, summary.param_fraction = sparsity_report(model)
    checkpoint("final.ckpt", step, "final")
    if out is not None:
        log.write(out / "metrics.csv")
        (out / "summary.json").write_text(
            json.dumps(summary.to_json_dict(), indent=2, sort_keys=True), encoding="utf-8"
        )
        from .config import write_config

        write_config(cfg, out / "config.txt")
    summary.metrics = log  # attached for in-process consumers; not serialized
    summary.model = model
    return summary


# ---------------------------------------------------------------------------
# ablations
# ---------------------------------------------------------------------------

ABLATION_AXES = ("optimizer", "phi", "warmup_epochs", "finetune_mode")


def ablation_matrix(base: RunConfig, axes: dict[str, list], out_dir: str | Path | None = None):
    """Cross-product of axis values over a shared base config and seed."""
    for key in axes:
        if key not in ABLATION_AXES:
            raise ValueError(f"unsupported ablation axis {key!r}; known: {ABLATION_AXES}")
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    base_flat = {k: v for k, v in base.to_flat_dict().items()}
    # when the optimizer varies, its preset must control the rho/transform keys
    if "optimizer" in axes:
        for key in PRESET_MANAGED_KEYS:
            base_flat.pop(key, None)
    keys = sorted(axes)
    results = []
    for combo in itertools.product(*(axes[k] for k in keys)):
        assignment = dict(zip(keys, combo))
        raw = dict(base_flat)
        raw.update({k: str(v) for k, v in assignment.items()})
        parsed = {k: _reparse(k, v) for k, v in raw.items()}
        label = "_".join(f"{k}-{assignment[k]}" for k in keys) if keys else "base"
        run_out = out / label if out is not None else None
        try:
            cfg = build_config(parsed)
            summary = run_pipeline(cfg, run_out)
            results.append({"axes": assignment, "summary": summary, "error": None})
        except Exception as exc:  # keep the matrix going on single-run failure
            results.append({"axes": assignment, "summary": None, "error": str(exc)})
    if out is not None:
        _write_ablation_table(results, keys, out)
    return results


def _reparse(key: str, value):
    from .config import _parse_value

    if isinstance(value, str):
        return _parse_value(key, value)
    return value


def _write_ablation_table(results, keys, out: Path) -> None:
    rows = []
    for r in results:
        row = {k: r["axes"].get(k, "") for k in keys}
        s = r["summary"]
        if s is None:
            row.update({"error": r["error"]})
        else:
            row.update(
                {
                    "val_acc": s.final_val_acc,
                    "acc_c": s.robustness.get("acc_c"),
                    "r_c": s.robustness.get("r_c"),
                    "param_fraction": s.param_fraction,
                    "post_prune_val_acc": s.post_prune_val_acc,
                    "error": "",
                }
            )
        rows.append(row)
    cols = list(keys) + ["val_acc", "acc_c", "r_c", "param_fraction", "post_prune_val_acc", "error"]
    with open(out / "ablation.csv", "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(cols)
        for row in rows:
            writer.writerow([_fmt(row.get(c, "")) for c in cols])
    (out / "ablation.json").write_text(
        json.dumps(
            [
                {"axes": r["axes"], "error": r["error"],
                 "summary": r["summary"].to_json_dict() if r["summary"] else None}
                for r in results
            ],
            indent=2, sort_keys=True,
        ),
        encoding="utf-8",
    )


# ---------------------------------------------------------------------------
# physical export
# ---------------------------------------------------------------------------


def export_pruned_model(checkpoint_path, out_path, probe_batches: int = 1,
                        probe_seed: int = 2024, tolerance: float = 1e-10):
    """Write a physically shrunk copy of a masked checkpoint.

    Refused unless the reduced model matches the masked model's logits on
    seeded probe batches to within ``tolerance``; the certified max abs diff
    is recorded in the exported file header.
    """
    model, meta = load_model(checkpoint_path)
    reduced = reduce_model(model)
    rng = np.random.default_rng(probe_seed)
    c, h, w = model.spec.input_shape
    max_diff = 0.0
    with T.no_grad():
        for _ in range(probe_batches):
            probe = rng.uniform(0.0, 1.0, size=(8, c, h, w))
            a = model.forward(probe).data
            b = reduced.forward(probe).data
            max_diff = max(max_diff, float(np.abs(a - b).max()))
    if max_diff > tolerance:
        raise ExportError(
            f"masked/reduced logit mismatch {max_diff:.3e} exceeds {tolerance:.1e}; export refused"
        )
    save_model(
        out_path, reduced,
        meta={
            "exported_from": str(checkpoint_path),
            "certified_max_abs_logit_diff": max_diff,
            "probe_batches": probe_batches,
            "probe_seed": probe_seed,
            "source_meta": {k: v for k, v in meta.items() if k != "model_spec"},
        },
    )
    return reduced, max_diff
