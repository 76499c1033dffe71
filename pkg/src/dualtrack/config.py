"""YAML configuration: dataset, model, and training sections plus presets.

A config file mirrors the three dataclasses field for field:

.. code-block:: yaml

    dataset:
      n_train: 200
      num_frames: 64
    model:
      variant: dual
      local:
        channels: [8, 16, 32, 64]
    training:
      lr: 1.0e-4

Unknown keys fail loudly; omitted keys keep preset defaults. The ``desk``
preset is sized for CPU runs on the synthetic benchmark, the ``paper``
preset reproduces the full-scale architecture (use it for instantiation
and inspection, not for CPU training).
"""

from __future__ import annotations

import dataclasses
from pathlib import Path

import yaml

from .networks import (
    FusionConfig,
    GlobalEncoderConfig,
    LocalEncoderConfig,
    ModelConfig,
    desk_model_config,
    paper_model_config,
)
from .phantom import DatasetConfig
from .training import TrainingConfig

PRESETS = ("desk", "paper")


class ConfigError(ValueError):
    """Malformed configuration file or unknown keys."""


@dataclasses.dataclass(frozen=True)
class AppConfig:
    dataset: DatasetConfig
    model: ModelConfig
    training: TrainingConfig


def desk_config(variant: str = "dual") -> AppConfig:
    return AppConfig(dataset=DatasetConfig(), model=desk_model_config(variant),
                     training=TrainingConfig())


def paper_config(variant: str = "dual") -> AppConfig:
    """Full-scale shapes and the long published-style schedule."""
    return AppConfig(
        dataset=DatasetConfig(),
        model=paper_model_config(variant),
        training=TrainingConfig(
            epochs_local_cnn=4000, epochs_local_pool=500,
            epochs_global=800, epochs_fusion=500,
            global_resolution=(224, 224),
        ),
    )


def preset(name: str, variant: str = "dual") -> AppConfig:
    if name == "desk":
        return desk_config(variant)
    if name == "paper":
        return paper_config(variant)
    raise ConfigError(f"unknown preset {name!r}; expected one of {PRESETS}")


def _kwargs_for(cls, section: dict, path: str) -> dict:
    if not isinstance(section, dict):
        raise ConfigError(f"section {path!r} must be a mapping")
    valid = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(section) - valid)
    if unknown:
        raise ConfigError(f"unknown keys under {path!r}: {unknown}")
    out = {}
    for name, value in section.items():
        out[name] = tuple(value) if isinstance(value, list) else value
    return out


def _model_from_dict(section: dict, base: ModelConfig) -> ModelConfig:
    top = _kwargs_for(ModelConfig, section, "model")
    for key, cls in (("local", LocalEncoderConfig),
                     ("global_branch", GlobalEncoderConfig),
                     ("fusion", FusionConfig)):
        if key in top:
            sub = _kwargs_for(cls, section[key], f"model.{key}")
            top[key] = dataclasses.replace(getattr(base, key), **sub)
    try:
        return dataclasses.replace(base, **top)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid model config: {exc}") from exc


def config_from_dict(raw: dict, base: AppConfig | None = None) -> AppConfig:
    base = base or desk_config()
    if raw is None:
        return base
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    unknown = sorted(set(raw) - {"dataset", "model", "training", "preset"})
    if unknown:
        raise ConfigError(f"unknown top-level keys: {unknown}")
    if "preset" in raw:
        base = preset(raw["preset"])
    dataset, model, training = base.dataset, base.model, base.training
    try:
        if "dataset" in raw:
            dataset = dataclasses.replace(
                dataset, **_kwargs_for(DatasetConfig, raw["dataset"], "dataset"))
        if "model" in raw:
            model = _model_from_dict(raw["model"], model)
        if "training" in raw:
            training = dataclasses.replace(
                training, **_kwargs_for(TrainingConfig, raw["training"], "training"))
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config value: {exc}") from exc
    return AppConfig(dataset=dataset, model=model, training=training)


def load_config(path, base: AppConfig | None = None) -> AppConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return config_from_dict(raw, base=base)


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def config_to_dict(cfg: AppConfig) -> dict:
    return _plain({
        "dataset": dataclasses.asdict(cfg.dataset),
        "model": dataclasses.asdict(cfg.model),
        "training": dataclasses.asdict(cfg.training),
    })


def save_config(cfg: AppConfig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(config_to_dict(cfg), sort_keys=False))
    return path
