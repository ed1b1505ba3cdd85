"""Declarative run configuration: YAML parsing, validation, canonical form.

A run config is a single YAML mapping with sections ``model``, ``dataset``,
``loss``, ``optimizer``, ``schedule``, ``telemetry`` plus a top-level
``seed``. ``canonical_dict`` resolves every default so that two configs
meaning the same run serialize to identical text; the run id is the
content hash of that text, making ids pure functions of config content.
"""

from __future__ import annotations

import copy
import hashlib
import math
from dataclasses import dataclass, field

import yaml

from . import models
from .entropic import LOSS_KINDS, SmoothingSpec, WeightMask
from .trainer import EarlyStop, Schedule

DATASET_NAMES = ("mnist", "fashion-mnist", "cifar10", "synthetic28")

_DEF_AUGMENT = {
    "enabled": False,
    "crop_scale": [0.6, 1.0],
    "aspect": [0.75, 4.0 / 3.0],
    "hflip_prob": 0.5,
}

DEFAULTS = {
    "model": None,
    "input_shape": None,
    "dataset": {
        "name": "synthetic28",
        "root": None,
        "train_subset": 10000,
        "test_subset": 2000,
        "subset_seed": 0,
        "image_size": None,
        "augment": _DEF_AUGMENT,
    },
    "loss": {
        "kind": "ce",
        "radius": None,
        "sharpness": None,
        "samples": None,
        "mask_layers": None,
    },
    "optimizer": {"lr": 0.0001, "momentum": 0.9, "weight_decay": 0.0},
    "schedule": {
        "epochs": 10,
        "batch_size": 256,
        "shuffle_seed": None,
        "eval_every": 1,
        "early_stop": None,
    },
    "telemetry": {"window": 50},
    "seed": 0,
}


class ConfigError(ValueError):
    """Validation failure; ``errors`` lists field-level diagnostics."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid config:\n" + "\n".join(f"  {e}" for e in self.errors))


@dataclass
class RunConfig:
    """Validated run description plus its canonical dict form."""

    model: object
    input_shape: tuple | None
    dataset: dict
    loss: dict
    optimizer: dict
    schedule: Schedule
    telemetry: dict
    seed: int
    canonical: dict = field(repr=False, default=None)

    def smoothing_spec(self):
        if self.loss["kind"] == "ce":
            return None
        if self.loss["kind"] == "plea-soft":
            return SmoothingSpec.soft(
                self.loss["radius"], self.loss["sharpness"], self.loss["samples"]
            )
        return SmoothingSpec.sharp(self.loss["radius"], self.loss["samples"])

    def build_network(self, dtype=None):
        from .net import DEFAULT_DTYPE

        return models.build_model(
            self.model, input_shape=self.input_shape, dtype=dtype or DEFAULT_DTYPE
        )

    def mask_for(self, net):
        if self.loss["kind"] == "ce":
            return None
        return WeightMask.from_layers(net, self.loss["mask_layers"])


def _merge_defaults(raw, defaults):
    out = copy.deepcopy(defaults)
    for key, value in raw.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge_defaults(value, out[key])
        else:
            out[key] = value
    return out


def _is_num(x):
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def parse_config(raw) -> RunConfig:
    """Validate a config mapping; raises ConfigError with field paths."""
    if not isinstance(raw, dict):
        raise ConfigError(["config must be a mapping"])
    errors = []
    unknown = set(raw) - set(DEFAULTS)
    for key in sorted(unknown):
        errors.append(f"{key}: unknown section")
    cfg = _merge_defaults({k: v for k, v in raw.items() if k in DEFAULTS}, DEFAULTS)

    # model
    model = cfg["model"]
    input_shape = cfg["input_shape"]
    net = None
    if model is None:
        errors.append("model: required (architecture id or inline layer list)")
    else:
        try:
            if input_shape is not None:
                input_shape = tuple(int(d) for d in input_shape)
            net = models.build_model(model, input_shape=input_shape)
        except Exception as e:
            errors.append(f"model: {e}")

    # dataset
    ds = cfg["dataset"]
    if ds["name"] not in DATASET_NAMES:
        errors.append(f"dataset.name: unknown dataset {ds['name']!r} (have {DATASET_NAMES})")
    for fld in ("train_subset", "test_subset"):
        v = ds[fld]
        if v is not None and (not isinstance(v, int) or v < 1):
            errors.append(f"dataset.{fld}: must be a positive integer or null")
    if ds["image_size"] is not None:
        size = ds["image_size"]
        if not (isinstance(size, (list, tuple)) and len(size) == 2):
            errors.append("dataset.image_size: must be [H, W] or null")
    try:
        _augment_spec(ds["augment"])
    except Exception as e:
        errors.append(f"dataset.augment: {e}")

    # loss
    loss = cfg["loss"]
    kind = loss["kind"]
    if kind not in LOSS_KINDS:
        errors.append(f"loss.kind: unknown kind {kind!r} (have {LOSS_KINDS})")
    elif kind == "ce":
        for fld in ("radius", "sharpness", "samples", "mask_layers"):
            if loss[fld] is not None:
                errors.append(f"loss.{fld}: not allowed when loss.kind is 'ce'")
    else:
        if not _is_num(loss["radius"]) or not loss["radius"] > 0:
            errors.append("loss.radius: smoothed losses require radius > 0")
        if loss["samples"] is None:
            loss["samples"] = 4
        if not isinstance(loss["samples"], int) or loss["samples"] < 0:
            errors.append("loss.samples: must be an integer >= 0")
        if kind == "plea-soft":
            sharp = loss["sharpness"]
            if not _is_num(sharp) or not sharp > 0 or math.isinf(sharp):
                errors.append("loss.sharpness: plea-soft requires finite sharpness > 0")
        elif loss["sharpness"] is not None:
            errors.append(f"loss.sharpness: not allowed for {kind!r} (sharp kernel)")
        mask_layers = loss["mask_layers"]
        if not isinstance(mask_layers, list) or not mask_layers:
            errors.append("loss.mask_layers: smoothed losses require a nonempty layer list")
        elif net is not None:
            for ordinal in mask_layers:
                if ordinal not in net.weight_index:
                    errors.append(
                        f"loss.mask_layers: layer {ordinal} has no smoothable weights "
                        f"(parameterized layer ordinals are {sorted(net.weight_index)})"
                    )
            loss["mask_layers"] = sorted(set(mask_layers))

    # optimizer
    opt = cfg["optimizer"]
    if not _is_num(opt["lr"]) or not opt["lr"] > 0:
        errors.append("optimizer.lr: must be > 0")
    if not _is_num(opt["momentum"]) or not 0 <= opt["momentum"] < 1:
        errors.append("optimizer.momentum: must lie in [0, 1)")
    if not _is_num(opt["weight_decay"]) or opt["weight_decay"] < 0:
        errors.append("optimizer.weight_decay: must be >= 0")

    # schedule
    sch = cfg["schedule"]
    schedule = None
    try:
        early = sch["early_stop"]
        early_stop = None if early is None else EarlyStop(**early)
        schedule = Schedule(
            epochs=sch["epochs"],
            batch_size=sch["batch_size"],
            shuffle_seed=sch["shuffle_seed"],
            eval_every=sch["eval_every"],
            early_stop=early_stop,
        )
    except (TypeError, ValueError) as e:
        errors.append(f"schedule: {e}")

    # telemetry
    tel = cfg["telemetry"]
    if not isinstance(tel["window"], int) or tel["window"] < 1:
        errors.append("telemetry.window: must be an integer >= 1")

    if not isinstance(cfg["seed"], int):
        errors.append("seed: must be an integer")

    if errors:
        raise ConfigError(errors)

    canonical = copy.deepcopy(cfg)
    canonical["input_shape"] = list(input_shape) if input_shape else None
    if isinstance(model, str):
        canonical["model"] = model
    else:
        canonical["model"] = [str(t) for t in model]
    return RunConfig(
        model=canonical["model"],
        input_shape=input_shape,
        dataset=cfg["dataset"],
        loss=cfg["loss"],
        optimizer=cfg["optimizer"],
        schedule=schedule,
        telemetry=cfg["telemetry"],
        seed=cfg["seed"],
        canonical=canonical,
    )


def _augment_spec(aug):
    from .data import AugmentSpec

    return AugmentSpec(
        crop_scale=tuple(aug["crop_scale"]),
        aspect=tuple(aug["aspect"]),
        hflip_prob=aug["hflip_prob"],
        enabled=bool(aug["enabled"]),
    )


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as f:
        raw = yaml.safe_load(f)
    return parse_config(raw)


def canonical_text(config: RunConfig) -> str:
    return yaml.safe_dump(config.canonical, sort_keys=True, default_flow_style=False)


def run_id(config: RunConfig) -> str:
    """Content hash of the canonical config; identical configs collide."""
    return hashlib.sha256(canonical_text(config).encode("utf-8")).hexdigest()[:12]
