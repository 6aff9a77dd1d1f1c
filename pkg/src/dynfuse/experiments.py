"""Experiment orchestration behind the CLI subcommands.

Every run decomposes into independent (strategy, seed) training tasks that
return plain dict rows, so they can execute in a process pool; aggregation
sorts by task key, making outputs independent of scheduling. All randomness
per task derives from its seed through fixed tags, and corruption seeds
depend only on (seed, noise index), so every strategy sees the same
corrupted test set in a given cell.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__
from .config import ABLATION_ARMS, ExperimentConfig, config_from_dict
from .datagen import corrupt, generate
from .fusion import UncertaintyMeasure
from .metrics import (
    aggregate_covariance,
    avg_worst_accuracy,
    conflict_resolution_rate,
    modality_losses,
)
from .model import FusionModel, ModelConfig, TrainSettings, train_model
from .reporting import write_csv, write_json, write_manifest

TAG_DATA = 1
TAG_MODEL = 2
TAG_NOISE = 3


def derive_seed(*parts) -> int:
    """Stable 32-bit seed from integer parts, independent of platform."""
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def _model_config(cfg: ExperimentConfig, fusion_section: dict) -> ModelConfig:
    return ModelConfig(
        n_classes=cfg.data["n_classes"],
        n_modalities=cfg.data["n_modalities"],
        feature_dims=tuple(cfg.data["feature_dims"]),
        encoder_hidden=tuple(cfg.arch["encoder_hidden"]),
        predictor_hidden=tuple(cfg.arch["predictor_hidden"]),
        strategy=fusion_section["strategy"],
        predictor_target=fusion_section["predictor_target"],
        uncertainty=UncertaintyMeasure(
            fusion_section["uncertainty"], fusion_section["energy_temperature"]
        ),
        detach_weights=fusion_section["detach_weights"],
        dropout=cfg.optim["dropout"],
    )


def _train_settings(cfg: ExperimentConfig) -> TrainSettings:
    o = cfg.optim
    return TrainSettings(
        lr=o["lr"], predictor_lr=o.get("predictor_lr"), beta1=o["beta1"],
        beta2=o["beta2"], weight_decay=o["weight_decay"], epochs=o["epochs"],
        batch_size=o["batch_size"],
    )


def run_task(payload: dict) -> dict:
    """Train one model and evaluate it at every configured noise level.

    Pure function of its payload (canonical config + seed + fusion
    overrides); safe to run in a worker process.
    """
    cfg = config_from_dict(payload["config"])
    seed = payload["seed"]
    fusion_section = dict(cfg.fusion)
    fusion_section.update(payload.get("fusion", {}))
    spec = cfg.generator_spec(derive_seed(seed, TAG_DATA))
    train, val, test = generate(spec)
    rng = np.random.default_rng(derive_seed(seed, TAG_MODEL))
    model = FusionModel(_model_config(cfg, fusion_section), rng)
    records = train_model(model, train, val, _train_settings(cfg), rng)

    evals = []
    specs = cfg.noise_specs(lambda idx: derive_seed(seed, TAG_NOISE, idx))
    for nspec in specs:
        batch = corrupt(test, nspec)
        res = model.forward_full(list(batch.features))
        pred = res.fused_logits.argmax(axis=1)
        losses = modality_losses(res.logits, batch.labels)
        conflict, resolved = conflict_resolution_rate(res.logits, pred, batch.labels)
        evals.append({
            "kind": nspec.kind,
            "degree": nspec.degree,
            "accuracy": float(np.mean(pred == batch.labels)),
            "unimodal_accuracy": [
                float(np.mean(z.argmax(axis=1) == batch.labels)) for z in res.logits
            ],
            "ac": aggregate_covariance(res.breakdown.weight, losses),
            "conflict_fraction": conflict,
            "conflict_resolution": resolved,
        })
    return {
        "train_log": [
            {
                "epoch": r.epoch, "total": r.total, "fused_ce": r.fused_ce,
                "unimodal_ce": list(r.unimodal_ce),
                "predictor_loss": r.predictor_loss,
                "val_accuracy": r.val_accuracy, "delta_omega": r.delta_omega,
            }
            for r in records
        ],
        "evals": evals,
    }


def _run_tasks(tasks: dict, jobs: int) -> dict:
    """tasks: key -> payload. Results keyed identically; order-independent."""
    keys = sorted(tasks)
    if jobs <= 1 or len(keys) <= 1:
        return {k: run_task(tasks[k]) for k in keys}
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        results = list(pool.map(run_task, [tasks[k] for k in keys]))
    return dict(zip(keys, results))


def _train_log_rows(log: list, n_modalities: int):
    header = (
        ["epoch", "total", "fused_ce"]
        + [f"unimodal_ce_{m}" for m in range(n_modalities)]
        + ["predictor_loss", "val_accuracy", "delta_omega"]
    )
    rows = [
        [r["epoch"], r["total"], r["fused_ce"], *r["unimodal_ce"],
         r["predictor_loss"], r["val_accuracy"], r["delta_omega"]]
        for r in log
    ]
    return header, rows


def _noise_label(e: dict):
    return (e["kind"], e["degree"])


def cmd_train(cfg: ExperimentConfig, out_dir: str) -> dict:
    """Train one model with the configured strategy on the first seed."""
    os.makedirs(out_dir, exist_ok=True)
    seed = int(cfg.seeds[0])
    spec = cfg.generator_spec(derive_seed(seed, TAG_DATA))
    train, val, _ = generate(spec)
    rng = np.random.default_rng(derive_seed(seed, TAG_MODEL))
    model = FusionModel(_model_config(cfg, cfg.fusion), rng)
    records = train_model(model, train, val, _train_settings(cfg), rng)
    header, rows = _train_log_rows(
        [
            {
                "epoch": r.epoch, "total": r.total, "fused_ce": r.fused_ce,
                "unimodal_ce": list(r.unimodal_ce),
                "predictor_loss": r.predictor_loss,
                "val_accuracy": r.val_accuracy, "delta_omega": r.delta_omega,
            }
            for r in records
        ],
        cfg.data["n_modalities"],
    )
    write_csv(os.path.join(out_dir, "train_log.csv"), header, rows)
    model.save(os.path.join(out_dir, "model.dfc"))
    write_manifest(out_dir, cfg.canonical(), __version__)
    return {"final_val_accuracy": records[-1].val_accuracy if records else None}


def _strategy_tasks(cfg: ExperimentConfig, strategies, seeds) -> dict:
    canonical = cfg.canonical()
    return {
        (strategy, int(seed)): {
            "config": canonical,
            "seed": int(seed),
            "fusion": {"strategy": strategy},
        }
        for strategy in strategies
        for seed in seeds
    }


def _accuracy_rows(results: dict, baseline_strategy: str | None):
    """Per-seed accuracy rows plus unimodal baselines from one model."""
    rows = []
    for (strategy, seed), res in sorted(results.items()):
        for e in res["evals"]:
            rows.append([strategy, e["kind"], e["degree"], seed, e["accuracy"]])
            if strategy == baseline_strategy:
                for m, acc in enumerate(e["unimodal_accuracy"]):
                    rows.append([f"unimodal_m{m}", e["kind"], e["degree"], seed, acc])
    rows.sort(key=lambda r: (r[0], r[1], r[2], r[3]))
    return rows


def _summary_rows(rows):
    cells = {}
    for strategy, kind, degree, _seed, acc in rows:
        cells.setdefault((strategy, kind, degree), []).append(acc)
    out = []
    for key in sorted(cells):
        avg, worst, std = avg_worst_accuracy(cells[key])
        out.append([*key, avg, worst, std])
    return out


def cmd_sweep(cfg: ExperimentConfig, out_dir: str) -> dict:
    """Accuracy table over (strategy, noise, seed) with unimodal baselines."""
    os.makedirs(out_dir, exist_ok=True)
    strategies = list(dict.fromkeys(cfg.sweep_strategies))
    tasks = _strategy_tasks(cfg, strategies, cfg.seeds)
    results = _run_tasks(tasks, cfg.jobs)
    baseline = "equal_weight" if "equal_weight" in strategies else strategies[0]
    rows = _accuracy_rows(results, baseline)
    write_csv(
        os.path.join(out_dir, "sweep.csv"),
        ["strategy", "noise_kind", "degree", "seed", "accuracy"],
        rows,
    )
    write_csv(
        os.path.join(out_dir, "sweep_summary.csv"),
        ["strategy", "noise_kind", "degree", "avg_accuracy", "worst_accuracy", "std_accuracy"],
        _summary_rows(rows),
    )
    cells = {}
    for (strategy, seed), res in sorted(results.items()):
        for e in res["evals"]:
            cell = cells.setdefault(
                (strategy, *_noise_label(e)),
                {"accuracy": [], "ac": [], "conflict_fraction": [], "conflict_resolution": []},
            )
            cell["accuracy"].append(e["accuracy"])
            cell["ac"].append(e["ac"])
            cell["conflict_fraction"].append(e["conflict_fraction"])
            if e["conflict_resolution"] is not None:
                cell["conflict_resolution"].append(e["conflict_resolution"])
    metrics = []
    for (strategy, kind, degree), cell in sorted(cells.items()):
        avg, worst, std = avg_worst_accuracy(cell["accuracy"])
        metrics.append({
            "strategy": strategy,
            "noise_kind": kind,
            "degree": degree,
            "avg_accuracy": avg,
            "worst_accuracy": worst,
            "std_accuracy": std,
            "mean_ac": float(np.mean(cell["ac"])),
            "mean_conflict_fraction": float(np.mean(cell["conflict_fraction"])),
            "mean_conflict_resolution": (
                float(np.mean(cell["conflict_resolution"]))
                if cell["conflict_resolution"] else None
            ),
        })
    write_json(os.path.join(out_dir, "metrics.json"), {"cells": metrics})
    for (strategy, seed), res in sorted(results.items()):
        header, log_rows = _train_log_rows(res["train_log"], cfg.data["n_modalities"])
        write_csv(
            os.path.join(out_dir, f"train_log_{strategy}_seed{seed}.csv"),
            header, log_rows,
        )
    write_manifest(out_dir, cfg.canonical(), __version__)
    return {"rows": len(rows)}


def cmd_gdp(cfg: ExperimentConfig, out_dir: str) -> dict:
    """Aggregate-covariance ensemble study; one model per (strategy, seed)."""
    os.makedirs(out_dir, exist_ok=True)
    strategies = list(dict.fromkeys(cfg.gdp_strategies))
    seeds = list(range(cfg.gdp_models))
    tasks = _strategy_tasks(cfg, strategies, seeds)
    results = _run_tasks(tasks, cfg.jobs)
    ac_rows = []
    cells = {}
    for (strategy, seed), res in sorted(results.items()):
        for e in res["evals"]:
            ac_rows.append([strategy, e["kind"], e["degree"], seed, e["ac"]])
            cells.setdefault((strategy, *_noise_label(e)), []).append(e["ac"])
    ac_rows.sort(key=lambda r: (r[0], r[1], r[2], r[3]))
    write_csv(
        os.path.join(out_dir, "ac_distribution.csv"),
        ["strategy", "noise_kind", "degree", "seed", "ac"],
        ac_rows,
    )
    report = {
        "n_models": cfg.gdp_models,
        "cells": [
            {
                "strategy": strategy,
                "noise_kind": kind,
                "degree": degree,
                "n_models": len(acs),
                "gdp": float(np.mean(np.asarray(acs) < 0.0)),
                "ac_values": [float(a) for a in acs],
            }
            for (strategy, kind, degree), acs in sorted(cells.items())
        ],
    }
    write_json(os.path.join(out_dir, "gdp.json"), report)
    write_manifest(out_dir, cfg.canonical(), __version__)
    return {"cells": len(report["cells"])}


def cmd_ablate(cfg: ExperimentConfig, out_dir: str) -> dict:
    """One sweep per weight-pipeline component subset, on shared seeds.

    Every arm's block repeats the unimodal baseline rows from a shared
    equal-weight model, so those rows are identical across arms.
    """
    os.makedirs(out_dir, exist_ok=True)
    arms = list(ABLATION_ARMS)
    tasks = _strategy_tasks(cfg, arms + ["equal_weight"], cfg.seeds)
    results = _run_tasks(tasks, cfg.jobs)
    rows = []
    for arm in arms:
        for seed in cfg.seeds:
            res = results[(arm, int(seed))]
            base = results[("equal_weight", int(seed))]
            for e, eb in zip(res["evals"], base["evals"]):
                rows.append([arm, arm, e["kind"], e["degree"], int(seed), e["accuracy"]])
                for m, acc in enumerate(eb["unimodal_accuracy"]):
                    rows.append(
                        [arm, f"unimodal_m{m}", eb["kind"], eb["degree"], int(seed), acc]
                    )
    rows.sort(key=lambda r: (r[0], r[1], r[2], r[3], r[4]))
    write_csv(
        os.path.join(out_dir, "ablate.csv"),
        ["arm", "row", "noise_kind", "degree", "seed", "accuracy"],
        rows,
    )
    cells = {}
    for arm, row_label, kind, degree, _seed, acc in rows:
        cells.setdefault((arm, row_label, kind, degree), []).append(acc)
    summary = []
    for key in sorted(cells):
        avg, worst, std = avg_worst_accuracy(cells[key])
        summary.append([*key, avg, worst, std])
    write_csv(
        os.path.join(out_dir, "ablate_summary.csv"),
        ["arm", "row", "noise_kind", "degree", "avg_accuracy", "worst_accuracy", "std_accuracy"],
        summary,
    )
    write_manifest(out_dir, cfg.canonical(), __version__)
    return {"rows": len(rows)}


COMPARE_AXES = {
    "predictor_target": ("predictor_target", ["p_true", "loss"]),
    "uncertainty": ("uncertainty", ["du", "entropy", "mcp", "energy"]),
}


def cmd_compare(cfg: ExperimentConfig, out_dir: str, axis: str) -> dict:
    """Sweep one fusion knob (prediction target or uncertainty measure)."""
    if axis not in COMPARE_AXES:
        raise ValueError(f"unknown comparison axis {axis!r}")
    os.makedirs(out_dir, exist_ok=True)
    field_name, arms = COMPARE_AXES[axis]
    canonical = cfg.canonical()
    tasks = {
        (arm, int(seed)): {
            "config": canonical,
            "seed": int(seed),
            "fusion": {field_name: arm},
        }
        for arm in arms
        for seed in cfg.seeds
    }
    results = _run_tasks(tasks, cfg.jobs)
    rows = []
    for (arm, seed), res in sorted(results.items()):
        for e in res["evals"]:
            rows.append([axis, arm, e["kind"], e["degree"], seed, e["accuracy"]])
    rows.sort(key=lambda r: (r[1], r[2], r[3], r[4]))
    write_csv(
        os.path.join(out_dir, "compare.csv"),
        ["axis", "arm", "noise_kind", "degree", "seed", "accuracy"],
        rows,
    )
    cells = {}
    for _axis, arm, kind, degree, _seed, acc in rows:
        cells.setdefault((arm, kind, degree), []).append(acc)
    summary = []
    for key in sorted(cells):
        avg, worst, std = avg_worst_accuracy(cells[key])
        summary.append([axis, *key, avg, worst, std])
    write_csv(
        os.path.join(out_dir, "compare_summary.csv"),
        ["axis", "arm", "noise_kind", "degree", "avg_accuracy", "worst_accuracy", "std_accuracy"],
        summary,
    )
    write_manifest(out_dir, cfg.canonical(), __version__)
    return {"rows": len(rows)}
