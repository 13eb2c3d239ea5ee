from __future__ import annotations

import json
import os
from collections.abc import Iterable, Mapping
from functools import lru_cache
from pathlib import Path
from typing import Any

from pydantic import Field, ValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict

from replaylab.core.errors import ConfigError
from replaylab.schemas.study import StudyConfig

RESOLVED_CONFIG_NAME = "config.resolved"


class AppConfig(BaseSettings):
    model_config = SettingsConfigDict(env_file=".env", env_file_encoding="utf-8", extra="ignore")

    workers: int = Field(default_factory=lambda: os.cpu_count() or 1, alias="REPLAYLAB_WORKERS", gt=0)
    output_dir: Path = Field(default=Path("results"), alias="REPLAYLAB_OUTPUT_DIR")
    log_level: str = Field(default="INFO", alias="LOG_LEVEL")


@lru_cache
def get_settings() -> AppConfig:
    try:
        return AppConfig()
    except ValidationError as exc:
        error = exc.errors()[0]
        raise ConfigError(error["msg"], key=".".join(str(part) for part in error["loc"])) from exc


def parse_value(raw: str) -> Any:
    """JSON literal, or the raw text as a bare-word string."""
    text = raw.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _assign(tree: dict[str, Any], key: str, value: Any) -> None:
    parts = key.strip().split(".")
    if len(parts) != 2 or not all(parts):
        raise ConfigError("expected a 'section.field' key", key=key.strip())
    section, field = parts
    node = tree.setdefault(section, {})
    if not isinstance(node, dict):
        raise ConfigError("section cannot hold a value", key=section)
    node[field] = value


def parse_dotted(lines: Iterable[str], *, source: str = "<config>") -> dict[str, Any]:
    tree: dict[str, Any] = {}
    for number, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        key, sep, raw = stripped.partition("=")
        if not sep:
            raise ConfigError(f"{source}:{number}: expected 'key = value'", key=key.strip() or None)
        _assign(tree, key, parse_value(raw))
    return tree


def parse_overrides(overrides: Iterable[str]) -> dict[str, Any]:
    return parse_dotted(overrides, source="--set")


def _merge(base: dict[str, Any], update: Mapping[str, Any]) -> dict[str, Any]:
    merged = {section: dict(values) for section, values in base.items()}
    for section, values in update.items():
        merged.setdefault(section, {}).update(values)
    return merged


def build_study_config(tree: Mapping[str, Any]) -> StudyConfig:
    try:
        return StudyConfig.model_validate(tree)
    except ValidationError as exc:
        error = exc.errors()[0]
        key = ".".join(str(part) for part in error["loc"])
        raise ConfigError(error["msg"], key=key) from exc


def load_study_config(
    path: Path | None = None,
    overrides: Iterable[str] = (),
    *,
    defaults: Mapping[str, Any] | None = None,
) -> StudyConfig:
    """Defaults, then the config file, then `--set` overrides, validated as one tree."""
    tree: dict[str, Any] = _merge({}, defaults or {})
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from exc
        tree = _merge(tree, parse_dotted(text.splitlines(), source=str(path)))
    tree = _merge(tree, parse_overrides(overrides))
    return build_study_config(tree)


def dump_study_config(config: StudyConfig) -> str:
    lines: list[str] = []
    for section, values in config.model_dump(mode="json").items():
        for field, value in values.items():
            lines.append(f"{section}.{field} = {json.dumps(value)}")
    return "\n".join(lines) + "\n"


def write_resolved_config(config: StudyConfig, out_dir: Path) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    target = out_dir / RESOLVED_CONFIG_NAME
    target.write_text(dump_study_config(config), encoding="utf-8")
    return target
