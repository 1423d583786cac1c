"""Layered run configuration: built-in defaults, then a YAML file, then
ISGGEN_* environment variables, then explicit overrides. The fully resolved
document is content-hashed and the hash travels into every output."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path

import yaml

from .crn import CrnConfig
from .dataio import DatasetSpec
from .errors import ConfigError, ValidationError
from .gcn import GcnConfig
from .losses import LossWeights
from .trainer import TrainConfig

ENV_PREFIX = "ISGGEN"

DEFAULTS: dict = {
    "dataset": {
        "min_object_area_fraction": 0.02,
        "min_objects": 3,
        "max_objects": 8,
        "image_size": 64,
        "split": "train",
        "mask_size": 16,
        "edge_density": 1.0,
    },
    "gcn": {"embed_dim": 128, "num_layers": 5, "hidden_dim": 512},
    "crn": {
        "start_resolution": 4,
        "output_resolution": 64,
        "channels": [128, 64, 32, 16],
        "noise_channels": 8,
    },
    "adversary": {"crop_size": 32},
    "train": {
        "iterations": 200,
        "batch_size": 8,
        "steps_per_sequence": 3,
        "lr_generator": 1e-4,
        "lr_discriminator": 1e-4,
        "beta1": 0.5,
        "beta2": 0.999,
        "seed": 0,
        "checkpoint_every": 100,
    },
    "loss_weights": {
        "gan": 0.01,
        "box": 10.0,
        "mask": 0.1,
        "pixel": 1.0,
        "pixel_step": 0.5,
        "perceptual": 1.0,
    },
}


@dataclass(frozen=True)
class RunConfig:
    dataset: DatasetSpec
    edge_density: float
    gcn: GcnConfig
    crn: CrnConfig
    crop_size: int
    train: TrainConfig
    weights: LossWeights
    raw: dict
    config_hash: str


def _merge_file(merged: dict, path) -> None:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        loaded = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file is not valid YAML: {exc}") from exc
    if loaded is None:
        return
    if not isinstance(loaded, dict):
        raise ConfigError("config file must hold a mapping of sections")
    for section, values in loaded.items():
        if section not in merged:
            raise ConfigError(f"unknown config section {section!r}")
        if not isinstance(values, dict):
            raise ConfigError(f"config section {section!r} must be a mapping")
        for key, value in values.items():
            if key not in merged[section]:
                raise ConfigError(f"unknown config key {section}.{key}")
            merged[section][key] = value


def _merge_env(merged: dict, env) -> None:
    for section, values in merged.items():
        for key in values:
            name = f"{ENV_PREFIX}_{section}_{key}".upper()
            if name in env:
                merged[section][key] = _parse_scalar(env[name], values[key], name)


def _parse_scalar(text: str, default, name: str):
    if isinstance(default, bool):
        if text.lower() in ("1", "true", "yes"):
            return True
        if text.lower() in ("0", "false", "no"):
            return False
        raise ConfigError(f"{name}: expected a boolean, got {text!r}")
    try:
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, list):
            return [int(v) for v in text.split(",")]
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {text!r}") from None
    return text


def _merge_overrides(merged: dict, overrides: dict) -> None:
    for dotted, value in overrides.items():
        parts = dotted.split(".")
        if len(parts) != 2 or parts[0] not in merged or parts[1] not in merged[parts[0]]:
            raise ConfigError(f"unknown config key {dotted!r}")
        section, key = parts
        current = merged[section][key]
        if isinstance(value, str):
            value = _parse_scalar(value, current, dotted)
        merged[section][key] = value


def canonical_json(doc) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def resolve(path=None, overrides: dict | None = None, env=None) -> RunConfig:
    """Produce the typed, hashed configuration for one run."""
    merged = json.loads(json.dumps(DEFAULTS))
    if path is not None:
        _merge_file(merged, path)
    _merge_env(merged, os.environ if env is None else env)
    _merge_overrides(merged, overrides or {})

    try:
        ds = merged["dataset"]
        dataset = DatasetSpec(
            min_object_area_fraction=float(ds["min_object_area_fraction"]),
            min_objects=int(ds["min_objects"]),
            max_objects=int(ds["max_objects"]),
            image_size=int(ds["image_size"]),
            split=str(ds["split"]),
            mask_size=int(ds["mask_size"]),
        )
        edge_density = float(ds["edge_density"])
        gcn = GcnConfig(
            embed_dim=int(merged["gcn"]["embed_dim"]),
            num_layers=int(merged["gcn"]["num_layers"]),
            hidden_dim=int(merged["gcn"]["hidden_dim"]),
        )
        crn = CrnConfig(
            start_resolution=int(merged["crn"]["start_resolution"]),
            output_resolution=int(merged["crn"]["output_resolution"]),
            channels=tuple(int(c) for c in merged["crn"]["channels"]),
            noise_channels=int(merged["crn"]["noise_channels"]),
        )
        weights = LossWeights(**{k: float(v) for k, v in merged["loss_weights"].items()})
        tr = merged["train"]
        train = TrainConfig(
            iterations=int(tr["iterations"]),
            batch_size=int(tr["batch_size"]),
            steps_per_sequence=int(tr["steps_per_sequence"]),
            lr_generator=float(tr["lr_generator"]),
            lr_discriminator=float(tr["lr_discriminator"]),
            beta1=float(tr["beta1"]),
            beta2=float(tr["beta2"]),
            seed=int(tr["seed"]),
            checkpoint_every=int(tr["checkpoint_every"]),
            weights=weights,
        )
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed configuration: {exc}") from exc

    if not (0.0 < edge_density <= 1.0):
        raise ConfigError(f"dataset.edge_density must be in (0, 1], got {edge_density}")

    config_hash = hashlib.sha256(canonical_json(merged).encode()).hexdigest()
    return RunConfig(
        dataset=dataset,
        edge_density=edge_density,
        gcn=gcn,
        crn=crn,
        crop_size=int(merged["adversary"]["crop_size"]),
        train=train,
        weights=weights,
        raw=merged,
        config_hash=config_hash,
    )


def check_model_shapes(cfg: RunConfig) -> None:
    """Cross-field constraints that only matter once networks are built."""
    if cfg.crn.output_resolution != cfg.dataset.image_size:
        raise ConfigError(
            f"crn.output_resolution ({cfg.crn.output_resolution}) must equal "
            f"dataset.image_size ({cfg.dataset.image_size})"
        )
