"""Run configuration: sectioned ``key = value`` files, JSON manifests, flag overrides."""

from __future__ import annotations

import configparser
import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from .batch import MODELS

MODEL_NAMES = ("predation", "traffic", "finance", "toy")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    model: str = "predation"
    steps: int = 100
    replicas: int = 1
    master_seed: int = 0
    threads: int | str | None = None
    out_path: str | None = None
    params: dict[str, Any] = field(default_factory=dict)

    def validate(self) -> None:
        if self.model not in MODEL_NAMES:
            raise ConfigError(f"unknown model {self.model!r}; choose from {', '.join(MODEL_NAMES)}")
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if self.replicas < 1:
            raise ConfigError("replicas must be >= 1")
        if self.model in MODELS:
            model_config(self)

    def to_dict(self) -> dict[str, Any]:
        return {
            "run": {
                "model": self.model, "steps": self.steps, "replicas": self.replicas,
                "master_seed": self.master_seed, "threads": self.threads, "out": self.out_path,
            },
            self.model: dict(self.params),
        }


def _coerce(raw: Any, like: Any, key: str) -> Any:
    if not isinstance(raw, str):
        return raw
    try:
        if isinstance(like, bool):
            low = raw.strip().lower()
            if low not in {"1", "0", "true", "false", "yes", "no", "on", "off"}:
                raise ValueError(raw)
            return low in {"1", "true", "yes", "on"}
        if isinstance(like, int):
            return int(raw)
        if isinstance(like, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot read {raw!r} as {type(like).__name__}") from None
    return raw.strip()


def model_config(cfg: RunConfig) -> Any:
    """Typed model configuration from the ``params`` section."""
    spec = MODELS[cfg.model]
    defaults = spec.config_type()
    known = {f.name: getattr(defaults, f.name) for f in dataclasses.fields(spec.config_type)}
    values = {}
    for key, raw in cfg.params.items():
        if key not in known:
            raise ConfigError(f"[{cfg.model}] has no key {key!r}; known: {', '.join(sorted(known))}")
        values[key] = _coerce(raw, known[key], f"{cfg.model}.{key}")
    try:
        return dataclasses.replace(defaults, **values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{cfg.model}] {exc}") from None


_RUN_KEYS = {"model": str, "steps": int, "replicas": int, "master_seed": int, "threads": str, "out": str}


def _apply_run_section(cfg: RunConfig, section: Mapping[str, Any]) -> None:
    for key, raw in section.items():
        key = key.replace("-", "_")
        if key not in _RUN_KEYS:
            raise ConfigError(f"[run] has no key {key!r}")
        if raw is None:
            continue
        if key == "out":
            cfg.out_path = str(raw)
        elif key == "threads":
            cfg.threads = raw if str(raw) == "auto" else _coerce(str(raw), 0, "run.threads")
        elif _RUN_KEYS[key] is int:
            setattr(cfg, key, _coerce(str(raw), 0, f"run.{key}"))
        else:
            setattr(cfg, key, str(raw).strip())


def load_config(path: str | Path) -> RunConfig:
    """Read a ``.ini``-style config or a JSON run manifest."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    if path.suffix == ".json":
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        sections = data.get("config", data)
    else:
        parser = configparser.ConfigParser(interpolation=None)
        try:
            parser.read(path)
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        sections = {name: dict(parser[name]) for name in parser.sections()}
    unknown = set(sections) - {"run", *MODEL_NAMES}
    if unknown:
        raise ConfigError(f"unknown sections {sorted(unknown)}")
    cfg = RunConfig()
    _apply_run_section(cfg, sections.get("run", {}))
    cfg.params = dict(sections.get(cfg.model, {}) or {})
    return cfg
