"""INI run configuration: schema, presets, dotted overrides and the resolved-config echo.

Sections::

    [task]      name (upos|dep|nli), topology (ST|FSN|PSN|LWS)
    [training]  lam, learning_rate, batch_size, epochs, dropout, ...
    [model]     embed_dim, hidden_dim, layers, shared_dim, ...
    [data]      train, aux_train, dev, test, tagset, pretrain_checkpoint

Path values may start with ``fixtures:``; they resolve against the directory
named by ``$SEMMTL_FIXTURES`` (default: the fixtures shipped with the package).
"""
from __future__ import annotations

import configparser
import dataclasses
import io
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .layers import ConfigError
from .tasks.base import ModelConfig
from .training import RunConfig

RESOURCES = Path(__file__).parent / "resources"
PRESET_DIR = RESOURCES / "presets"
FIXTURE_ENV = "SEMMTL_FIXTURES"

OPT_INT, OPT_FLOAT, OPT_STR = "int?", "float?", "str?"

SCHEMA: dict[str, dict[str, Any]] = {
    "task": {"name": str, "topology": str},
    "training": {"lam": float, "learning_rate": float, "batch_size": int, "epochs": int, "dropout": float,
                 "recurrent_dropout": float, "seed": int, "data_regime": str, "runs": int,
                 "clip_norm": OPT_FLOAT, "pretrain_epochs": int, "eval_train": bool},
    "model": {"embed_dim": int, "hidden_dim": int, "layers": int, "n_joint": OPT_INT, "aux_depth": OPT_INT,
              "shared_dim": OPT_INT, "embed_dropout": float, "mlp_dim": int, "label_dim": int,
              "gate_init": str},
    "data": {"train": OPT_STR, "aux_train": OPT_STR, "dev": OPT_STR, "test": OPT_STR, "tagset": OPT_STR,
             "pretrain_checkpoint": OPT_STR},
}
PATH_KEYS = ("train", "aux_train", "dev", "test", "tagset", "pretrain_checkpoint")


@dataclass
class DataPaths:
    train: str | None = None
    aux_train: str | None = None
    dev: str | None = None
    test: str | None = None
    tagset: str | None = None
    pretrain_checkpoint: str | None = None

    def resolved(self) -> dict[str, Path | None]:
        return {k: resolve_path(getattr(self, k)) for k in PATH_KEYS}


@dataclass
class ResolvedConfig:
    run: RunConfig
    data: DataPaths = field(default_factory=DataPaths)
    source: str = "<defaults>"

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        for section, values in as_sections(self).items():
            cp[section] = {k: _format(v) for k, v in values.items()}
        buf = io.StringIO()
        buf.write(f"# resolved from {self.source}\n")
        cp.write(buf)
        return buf.getvalue()


def fixtures_dir() -> Path:
    env = os.environ.get(FIXTURE_ENV)
    return Path(env) if env else RESOURCES / "fixtures"


def resolve_path(value: str | None) -> Path | None:
    if value is None:
        return None
    if value.startswith("fixtures:"):
        return fixtures_dir() / value[len("fixtures:"):]
    return Path(value)


def _format(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def _coerce(section: str, key: str, raw: str):
    if section not in SCHEMA:
        raise ConfigError(f"unknown config section [{section}]; known: {sorted(SCHEMA)}")
    kinds = SCHEMA[section]
    if key not in kinds:
        raise ConfigError(f"unknown key {section}.{key}; known keys in [{section}]: {sorted(kinds)}")
    kind = kinds[key]
    text = raw.strip()
    if isinstance(kind, str):  # optional
        if text.lower() in ("none", ""):
            return None
        kind = {OPT_INT: int, OPT_FLOAT: float, OPT_STR: str}[kind]
    try:
        if kind is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        return kind(text)
    except ValueError:
        raise ConfigError(f"{section}.{key}: expected {kind.__name__}, got {raw!r}") from None


def as_sections(cfg: ResolvedConfig) -> dict[str, dict[str, Any]]:
    r, m = cfg.run, cfg.run.model
    return {
        "task": {"name": r.task, "topology": r.topology},
        "training": {k: getattr(r, k) for k in SCHEMA["training"]},
        "model": {k: getattr(m, k) for k in SCHEMA["model"]},
        "data": {k: getattr(cfg.data, k) for k in SCHEMA["data"]},
    }


def find_preset(ref: str | Path) -> Path:
    """A config file path, or a preset name such as ``upos-fsn`` / ``presets/upos-fsn``."""
    p = Path(ref)
    if p.is_file():
        return p
    name = p.name[:-4] if p.name.endswith(".ini") else p.name
    candidate = PRESET_DIR / f"{name}.ini"
    if candidate.is_file():
        return candidate
    raise ConfigError(f"config {str(ref)!r} not found (no such file, and no preset named {name!r})")


def parse_override(text: str) -> tuple[str, str, str]:
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like section.key=value")
    lhs, value = text.split("=", 1)
    if "." not in lhs:
        raise ConfigError(f"override {text!r} must look like section.key=value")
    section, key = lhs.strip().split(".", 1)
    return section, key, value


def load_config(ref: str | Path | None = None, overrides: list[str] | tuple[str, ...] = ()) -> ResolvedConfig:
    """Defaults, then the config file, then ``section.key=value`` overrides."""
    values: dict[str, dict[str, Any]] = {s: {} for s in SCHEMA}
    source = "<defaults>"
    if ref is not None:
        path = find_preset(ref)
        source = str(path)
        cp = configparser.ConfigParser()
        try:
            cp.read(path, encoding="utf-8")
        except configparser.Error as err:
            raise ConfigError(f"{path}: {err}") from None
        for section in cp.sections():
            for key, raw in cp[section].items():
                values.setdefault(section, {})[key] = _coerce(section, key, raw)
    for text in overrides:
        section, key, raw = parse_override(text)
        values[section][key] = _coerce(section, key, raw)
    return build(values, source)


def build(values: dict[str, dict[str, Any]], source: str = "<dict>") -> ResolvedConfig:
    for section, kv in values.items():
        for key in kv:
            if section not in SCHEMA or key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {section}.{key}")
    task = values.get("task", {})
    model = dataclasses.replace(ModelConfig(), **values.get("model", {}))
    kw = dict(values.get("training", {}))
    if "name" in task:
        kw["task"] = task["name"]
    if "topology" in task:
        kw["topology"] = task["topology"].upper()
    try:
        run = RunConfig(model=model, **kw)
    except ConfigError as err:
        raise ConfigError(f"{source}: {err}") from None
    data = DataPaths(**values.get("data", {}))
    return ResolvedConfig(run, data, source)


def list_presets() -> list[str]:
    return sorted(p.stem for p in PRESET_DIR.glob("*.ini"))


__all__ = ["ResolvedConfig", "DataPaths", "load_config", "find_preset", "resolve_path", "fixtures_dir",
           "list_presets", "SCHEMA", "FIXTURE_ENV", "parse_override"]
