"""Plain-text configuration files: one ``key=value`` per line, ``#`` comments.

Dotted keys address nested config blocks, e.g. ``optimizer.lr=2e-3`` or
``model.me.d=8``. Top-level keys map onto the training config; ``generator.*``
keys build the dataset generator config. Values are parsed according to the
annotated field types of the target dataclasses.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path
from typing import Any

from .data import AttributeType, GeneratorConfig, ObjectType, RelationType
from .encoding import MEConfig
from .harness import TrainConfig
from .model import ModelConfig
from .optim import OptimizerConfig

__all__ = [
    "parse_kv_file",
    "parse_kv_text",
    "train_config_from",
    "generator_config_from",
    "load_train_config",
    "load_generator_config",
]

_ENUMS = {
    "allowed_objects": ObjectType,
    "allowed_attributes": AttributeType,
    "allowed_relations": RelationType,
}


def parse_kv_text(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def parse_kv_file(path) -> dict[str, str]:
    return parse_kv_text(Path(path).read_text())


def _parse_bool(text: str) -> bool:
    lowered = text.lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_value(text: str, field: dataclasses.Field) -> Any:
    annotation = str(field.type)
    if text.lower() == "none" and ("None" in annotation or "Optional" in annotation):
        return None
    if field.name in _ENUMS:
        enum_cls = _ENUMS[field.name]
        return tuple(enum_cls[part.strip().upper()] for part in text.split(","))
    if "tuple[int" in annotation:
        return tuple(int(part) for part in text.split(","))
    if "bool" in annotation:
        return _parse_bool(text)
    if "int" in annotation:
        return int(text)
    if "float" in annotation:
        return float(text)
    return text


def _build_dataclass(cls, kv: dict[str, str], context: str):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs: dict[str, Any] = {}
    for key, value in kv.items():
        if key not in fields:
            raise ValueError(f"unknown {context} key '{key}'; valid keys: {sorted(fields)}")
        kwargs[key] = _parse_value(value, fields[key])
    return cls(**kwargs)


def _split_prefix(kv: dict[str, str], prefix: str) -> dict[str, str]:
    return {k[len(prefix) :]: v for k, v in kv.items() if k.startswith(prefix)}


def _model_config_from(kv: dict[str, str]) -> ModelConfig:
    me_kv = _split_prefix(kv, "me.")
    rest = {k: v for k, v in kv.items() if not k.startswith("me.")}
    model = _build_dataclass(ModelConfig, rest, "model")
    if me_kv:
        model.me = _build_dataclass(MEConfig, me_kv, "model.me")
    return model


def train_config_from(kv: dict[str, str], **overrides) -> TrainConfig:
    """Build a training config from parsed keys; ``overrides`` win over keys."""
    model = _model_config_from(_split_prefix(kv, "model."))
    optimizer = _build_dataclass(OptimizerConfig, _split_prefix(kv, "optimizer."), "optimizer")
    top = {
        k: v
        for k, v in kv.items()
        if not (k.startswith("model.") or k.startswith("optimizer.") or k.startswith("generator."))
    }
    fields = {f.name: f for f in dataclasses.fields(TrainConfig) if f.name not in ("model", "optimizer")}
    kwargs: dict[str, Any] = {}
    for key, value in top.items():
        if key not in fields:
            raise ValueError(f"unknown training key '{key}'; valid keys: {sorted(fields)}")
        kwargs[key] = _parse_value(value, fields[key])
    kwargs.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig(model=model, optimizer=optimizer, **kwargs)


def generator_config_from(kv: dict[str, str], **overrides) -> GeneratorConfig:
    cfg = _build_dataclass(GeneratorConfig, _split_prefix(kv, "generator."), "generator")
    for key, value in overrides.items():
        if value is not None:
            setattr(cfg, key, value)
    return cfg


def load_train_config(path, **overrides) -> TrainConfig:
    return train_config_from(parse_kv_file(path), **overrides)


def load_generator_config(path, **overrides) -> GeneratorConfig:
    return generator_config_from(parse_kv_file(path), **overrides)
