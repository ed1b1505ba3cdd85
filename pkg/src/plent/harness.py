"""Experiment orchestration: execute runs, expand sweep grids, emit plot data.

Each run writes into ``<out>/<run_id>/``: the canonical config, a JSON
train report, and the telemetry CSV. Re-running the same config overwrites
the directory with identical bytes. Sweeps expand a base config against
named axis lists and append one summary row per cell, continuing past
per-cell failures.
"""

from __future__ import annotations

import copy
import csv
import itertools
import json
import math
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from . import config as config_mod
from . import data as data_mod
from . import entropic, telemetry, trainer
from . import net as net_mod

DATA_ROOT_ENV = "PLENT_DATA_ROOT"

IDX_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def resolve_data_root(explicit=None):
    root = explicit or os.environ.get(DATA_ROOT_ENV)
    return Path(root) if root else None


def dataset_available(name, data_root=None) -> bool:
    root = resolve_data_root(data_root)
    if name == "synthetic28":
        return True
    if root is None:
        return False
    if name in ("mnist", "fashion-mnist"):
        base = root / name
        return all((base / f).exists() for pair in IDX_FILES.values() for f in pair)
    if name == "cifar10":
        base = root / "cifar10"
        return (base / "test_batch.bin").exists() and (base / "data_batch_1.bin").exists()
    return False


def load_datasets(ds_cfg, data_root=None):
    """Load the (train, test) pair a config asks for, subset + resize applied."""
    name = ds_cfg["name"]
    root = resolve_data_root(ds_cfg.get("root") or data_root)
    if name == "synthetic28":
        train, test = data_mod.synthetic28(
            ds_cfg["train_subset"] or 10000,
            ds_cfg["test_subset"] or 2000,
            seed=ds_cfg["subset_seed"],
        )
    elif name in ("mnist", "fashion-mnist"):
        if root is None:
            raise FileNotFoundError(
                f"dataset {name!r} needs a data root (--data-root or ${DATA_ROOT_ENV})"
            )
        base = root / name
        train = data_mod.load_idx(*(base / f for f in IDX_FILES["train"]), name=name)
        test = data_mod.load_idx(*(base / f for f in IDX_FILES["test"]), name=name)
    elif name == "cifar10":
        if root is None:
            raise FileNotFoundError(
                f"dataset 'cifar10' needs a data root (--data-root or ${DATA_ROOT_ENV})"
            )
        base = root / "cifar10"
        train = data_mod.load_cifar10(
            sorted(base.glob("data_batch_*.bin")) or [base / "data_batch_1.bin"]
        )
        test = data_mod.load_cifar10([base / "test_batch.bin"])
    else:
        raise ValueError(f"unknown dataset {name!r}")

    if name != "synthetic28":
        if ds_cfg["train_subset"]:
            train = data_mod.subset(train, ds_cfg["train_subset"], ds_cfg["subset_seed"])
        if ds_cfg["test_subset"]:
            test = data_mod.subset(test, ds_cfg["test_subset"], ds_cfg["subset_seed"] + 1)
    if ds_cfg["image_size"]:
        h, w = ds_cfg["image_size"]
        train = data_mod.resize_dataset(train, h, w)
        test = data_mod.resize_dataset(test, h, w)
    return train, test


def execute_run(cfg: config_mod.RunConfig, out_dir, data_root=None, train_set=None, test_set=None):
    """Train one config and persist its artifacts; returns the TrainReport.

    Preloaded datasets may be passed to amortize loading across sweep cells.
    """
    rid = config_mod.run_id(cfg)
    run_dir = Path(out_dir) / rid
    run_dir.mkdir(parents=True, exist_ok=True)

    if train_set is None or test_set is None:
        train_set, test_set = load_datasets(cfg.dataset, data_root)

    net = cfg.build_network()
    init_rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(1)[0])
    net_mod.kaiming_init(net, init_rng)

    mask = cfg.mask_for(net)
    spec = cfg.smoothing_spec()
    loss_fn = entropic.make_loss_fn(cfg.loss["kind"], mask, spec)
    state = trainer.OptimizerState.for_network(
        net,
        lr=cfg.optimizer["lr"],
        momentum=cfg.optimizer["momentum"],
        weight_decay=cfg.optimizer["weight_decay"],
    )
    recorder = telemetry.SignalRecorder(net, window=cfg.telemetry["window"])

    augment_fn = None
    aug = cfg.dataset["augment"]
    if aug["enabled"]:
        aug_spec = config_mod._augment_spec(aug)
        augment_fn = lambda images, rng: data_mod.augment_batch(images, aug_spec, rng)

    report = trainer.train(
        net,
        train_set,
        test_set,
        loss_fn,
        state,
        cfg.schedule,
        seed=cfg.seed,
        recorder=recorder,
        augment_fn=augment_fn,
    )
    report.run_id = rid
    report.config = cfg.canonical

    (run_dir / "config.yaml").write_text(config_mod.canonical_text(cfg), encoding="utf-8")
    report.save_json(run_dir / "report.json")
    recorder.export_csv(run_dir / "telemetry.csv")
    return report


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

SWEEP_AXES = {
    "radius": ("loss", "radius"),
    "mask_layers": ("loss", "mask_layers"),
    "samples": ("loss", "samples"),
    "seed": ("seed",),
    "weight_decay": ("optimizer", "weight_decay"),
}


def _set_path(cfg_dict, path, value):
    node = cfg_dict
    for key in path[:-1]:
        node = node.setdefault(key, {})
    node[path[-1]] = value


def expand_grid(grid_raw):
    """Expand a sweep grid into an ordered list of raw config mappings.

    ``sweeps.mask_layers`` may be the string ``all-nonempty``, which
    enumerates every nonempty subset of the base model's parameterized
    layers (ordered by size, then lexicographically).
    """
    if not isinstance(grid_raw, dict) or "base" not in grid_raw:
        raise config_mod.ConfigError(["grid: must be a mapping with a 'base' config"])
    base = grid_raw["base"]
    sweeps = grid_raw.get("sweeps", {}) or {}
    unknown = set(sweeps) - set(SWEEP_AXES)
    if unknown:
        raise config_mod.ConfigError(
            [f"sweeps.{k}: unknown axis (have {sorted(SWEEP_AXES)})" for k in sorted(unknown)]
        )

    axes = []
    for key in sorted(sweeps):
        values = sweeps[key]
        if key == "mask_layers" and values == "all-nonempty":
            base_cfg = config_mod.parse_config(copy.deepcopy(base))
            net = base_cfg.build_network()
            ordinals = sorted(net.weight_index)
            values = [
                list(combo)
                for size in range(1, len(ordinals) + 1)
                for combo in itertools.combinations(ordinals, size)
            ]
        if not isinstance(values, list) or not values:
            raise config_mod.ConfigError([f"sweeps.{key}: must be a nonempty list"])
        axes.append((key, values))

    cells = []
    for combo in itertools.product(*(values for _, values in axes)):
        raw = copy.deepcopy(base)
        for (key, _), value in zip(axes, combo):
            _set_path(raw, SWEEP_AXES[key], copy.deepcopy(value))
        cells.append(raw)
    return cells


SUMMARY_COLUMNS = (
    "run_id",
    "status",
    "loss_kind",
    "mask_layers",
    "radius",
    "samples",
    "weight_decay",
    "seed",
    "best_acc",
    "best_epoch",
    "final_acc",
    "error",
)


def run_sweep(grid_raw, out_dir, data_root=None, log=print):
    """Execute every grid cell; write one summary row per cell."""
    cells = expand_grid(grid_raw)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    dataset_cache = {}
    for i, raw in enumerate(cells):
        row = dict.fromkeys(SUMMARY_COLUMNS, "")
        try:
            cfg = config_mod.parse_config(raw)
            row["loss_kind"] = cfg.loss["kind"]
            row["mask_layers"] = "+".join(map(str, cfg.loss["mask_layers"] or []))
            row["radius"] = cfg.loss["radius"] if cfg.loss["radius"] is not None else ""
            row["samples"] = cfg.loss["samples"] if cfg.loss["samples"] is not None else ""
            row["weight_decay"] = cfg.optimizer["weight_decay"]
            row["seed"] = cfg.seed
            ds_key = yaml.safe_dump(cfg.canonical["dataset"], sort_keys=True)
            if ds_key not in dataset_cache:
                dataset_cache[ds_key] = load_datasets(cfg.dataset, data_root)
            train_set, test_set = dataset_cache[ds_key]
            report = execute_run(cfg, out_dir, data_root, train_set, test_set)
            row.update(
                run_id=report.run_id,
                status="ok",
                best_acc=report.best_acc,
                best_epoch=report.best_epoch,
                final_acc=report.final_acc,
            )
            log(f"[{i + 1}/{len(cells)}] {report.run_id} best={report.best_acc:.4f}")
        except Exception as e:  # record the failure, keep sweeping
            row.update(status="failed", error=str(e).replace("\n", " | "))
            log(f"[{i + 1}/{len(cells)}] FAILED: {e}")
        rows.append(row)

    summary_path = out_dir / "summary.csv"
    with open(summary_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=SUMMARY_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
    return rows


# ---------------------------------------------------------------------------
# Plot-data emission
# ---------------------------------------------------------------------------


def _load_report(run_dir):
    with open(Path(run_dir) / "report.json", encoding="utf-8") as f:
        return json.load(f)


def emit_plot_data(run_dirs, out_dir, log=print):
    """Write tidy CSVs for the three standard figures from finished runs.

    * ``accuracy_vs_radius.csv`` -- best/final accuracy per (mask, radius)
    * ``layer_signals.csv``      -- natural-log signal/noise per layer/step
    * ``training_curves.csv``    -- loss/accuracy per epoch

    Returns the number of runs included; raises ValueError when none are
    usable.
    """
    out_dir = Path(out_dir)
    usable = []
    for run_dir in run_dirs:
        try:
            report = _load_report(run_dir)
            usable.append((Path(run_dir), report))
        except (OSError, json.JSONDecodeError) as e:
            log(f"skipping {run_dir}: {e}")
    if not usable:
        raise ValueError("no readable run reports; nothing to emit")

    out_dir.mkdir(parents=True, exist_ok=True)

    with open(out_dir / "accuracy_vs_radius.csv", "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["run_id", "loss_kind", "mask_layers", "radius", "seed", "best_acc", "final_acc"])
        for _, report in usable:
            cfg = report["config"]
            writer.writerow(
                [
                    report["run_id"],
                    cfg["loss"]["kind"],
                    "+".join(map(str, cfg["loss"]["mask_layers"] or [])),
                    cfg["loss"]["radius"] if cfg["loss"]["radius"] is not None else "",
                    cfg["seed"],
                    report["best_acc"],
                    report["final_acc"],
                ]
            )

    with open(out_dir / "layer_signals.csv", "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["run_id", "step", "layer", "log_signal", "log_noise", "window"])
        for run_dir, report in usable:
            csv_path = run_dir / "telemetry.csv"
            if not csv_path.exists():
                continue
            for r in telemetry.read_signal_csv(csv_path):
                if r.signal <= 0:
                    continue
                log_noise = math.log(r.noise) if r.noise > 0 else ""
                writer.writerow(
                    [report["run_id"], r.step, r.layer, math.log(r.signal), log_noise, r.window]
                )

    with open(out_dir / "training_curves.csv", "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["run_id", "epoch", "train_loss", "test_loss", "test_acc"])
        for _, report in usable:
            for i, epoch in enumerate(report["eval_epochs"]):
                writer.writerow(
                    [
                        report["run_id"],
                        epoch,
                        report["train_loss"][i],
                        report["test_loss"][i],
                        report["test_acc"][i],
                    ]
                )
    return len(usable)


def write_kernel_curves(path, radius=1.0, sharpness_values=(4, 8, 16, 32), span=2.0, points=801):
    """1-D distance/kernel sections at several sharpness values, as tidy CSV."""
    deltas = np.linspace(-span * radius, span * radius, points)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["sharpness", "delta", "distance", "kernel"])
        for k in sharpness_values:
            d, kv = entropic.kernel_curve(radius, k, deltas)
            for x, dist, kern in zip(deltas, d, kv):
                writer.writerow([k, repr(float(x)), repr(float(dist)), repr(float(kern))])
