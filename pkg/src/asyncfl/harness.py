"""Experiment-matrix execution: run the policy grid, persist CSVs, summarize."""

from __future__ import annotations

import csv
import itertools
import json
import os
from concurrent.futures import ProcessPoolExecutor

from .config import ExperimentConfig, resolve_data_path
from .data import Dataset, gen_synthetic, load_idx, partition_iid, partition_shards
from .engine import SimConfig, run_simulation

CSV_COLUMNS = ("t", "wall_clock", "test_accuracy", "train_loss",
               "ready_count", "scheduled_count", "mean_alu_scheduled")


def load_datasets(cfg: ExperimentConfig):
    """Materialize the (train, test) datasets named by the config."""
    if cfg.source == "idx":
        train = load_idx(resolve_data_path(cfg.train_images),
                         resolve_data_path(cfg.train_labels))
        test = load_idx(resolve_data_path(cfg.test_images),
                        resolve_data_path(cfg.test_labels))
        return train, test
    train = gen_synthetic(cfg.num_samples, cfg.num_classes, cfg.num_features,
                          cfg.cluster_spread, cfg.data_seed)
    test = gen_synthetic(cfg.num_test_samples, cfg.num_classes, cfg.num_features,
                         cfg.cluster_spread, cfg.data_seed + 1)
    return train, test


def make_partition(cfg: ExperimentConfig, dataset: Dataset, seed: int):
    if cfg.partition == "shards":
        return partition_shards(dataset, cfg.num_devices,
                                cfg.shards_per_device, seed)
    return partition_iid(dataset, cfg.num_devices, seed)


def cell_name(protocol: str, scheduler: str, weighting: str, seed: int) -> str:
    return f"{protocol}_{scheduler}_{weighting}_seed{seed}"


def _csv_value(value) -> str:
    return repr(value) if isinstance(value, float) else str(value)


def write_trace_csv(trace, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(CSV_COLUMNS)
        for rec in trace.records:
            writer.writerow([_csv_value(getattr(rec, col)) for col in CSV_COLUMNS])


def run_cell(cfg: ExperimentConfig, protocol: str, scheduler: str,
             weighting: str, seed: int):
    """Run one grid cell and return its metrics trace."""
    train, test = load_datasets(cfg)
    partition = make_partition(cfg, train, seed)
    sim = SimConfig(
        num_devices=cfg.num_devices,
        t_max=cfg.t_max,
        aggregation_period=cfg.aggregation_period,
        num_iterations=cfg.num_iterations,
        policy=cfg.policy(scheduler, weighting),
        hyper=cfg.hyper(),
        seed=seed,
        protocol=protocol,
        compute_mode=cfg.compute_mode,
        init=cfg.init,
        fedavg_literal=cfg.fedavg_literal,
    )
    return run_simulation(train, partition, test, sim)


def _run_cell_to_csv(args):
    cfg, protocol, scheduler, weighting, seed, out_dir = args
    trace = run_cell(cfg, protocol, scheduler, weighting, seed)
    path = os.path.join(out_dir, cell_name(protocol, scheduler, weighting, seed) + ".csv")
    write_trace_csv(trace, path)
    return path


def run_experiment(cfg: ExperimentConfig, out_dir=None, seeds=None,
                   parallel: int = 1) -> list:
    """Execute the full (protocol x scheduler x weighting x seed) grid.

    Writes one CSV per cell plus a manifest.json; returns the CSV paths.
    """
    out_dir = out_dir or cfg.output_dir
    seeds = tuple(seeds) if seeds else cfg.seeds
    os.makedirs(out_dir, exist_ok=True)
    if not os.access(out_dir, os.W_OK):
        raise OSError(f"output directory not writable: {out_dir}")

    cells = list(itertools.product(cfg.protocols, cfg.schedulers,
                                   cfg.weightings, seeds))
    jobs = [(cfg, p, s, w, seed, out_dir) for p, s, w, seed in cells]
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            paths = list(pool.map(_run_cell_to_csv, jobs))
    else:
        paths = [_run_cell_to_csv(job) for job in jobs]

    manifest = {
        "seeds": list(seeds),
        "columns": list(CSV_COLUMNS),
        "cells": [
            {"protocol": p, "scheduler": s, "weighting": w, "seed": seed,
             "csv": os.path.basename(path)}
            for (p, s, w, seed), path in zip(cells, paths)
        ],
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2)
    return paths


def read_trace_csv(path) -> list:
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
            missing = set(CSV_COLUMNS) - set(reader.fieldnames or ())
            raise ValueError(
                f"{path}: CSV schema mismatch, missing columns {sorted(missing)}")
        return list(reader)


def summarize(csv_paths) -> list:
    """Per-cell final-iteration accuracy, aggregated as mean +/- half-range."""
    csv_paths = list(csv_paths)
    if not csv_paths:
        raise ValueError("no CSV files to summarize")
    by_cell = {}
    for path in sorted(csv_paths):
        rows = read_trace_csv(path)
        base = os.path.basename(path).rsplit(".", 1)[0]
        cell = base.rsplit("_seed", 1)[0]
        final_acc = float(rows[-1]["test_accuracy"]) if rows else float("nan")
        by_cell.setdefault(cell, []).append(final_acc)
    summary = []
    for cell in sorted(by_cell):
        accs = by_cell[cell]
        mean = sum(accs) / len(accs)
        spread = (max(accs) - min(accs)) / 2.0
        summary.append({"cell": cell, "final_accuracy_mean": mean,
                        "final_accuracy_halfrange": spread, "num_seeds": len(accs)})
    return summary


def format_summary(summary) -> str:
    width = max(len(row["cell"]) for row in summary)
    lines = [f"{'cell'.ljust(width)}  final_acc (mean +/- range/2)  seeds"]
    for row in summary:
        lines.append(
            f"{row['cell'].ljust(width)}  "
            f"{row['final_accuracy_mean']:.4f} +/- "
            f"{row['final_accuracy_halfrange']:.4f}           "
            f"{row['num_seeds']}")
    return "\n".join(lines)
