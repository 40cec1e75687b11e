"""Flat key=value run configs with strict schemas.

One key per line, `#` starts a comment, unknown keys are rejected. Every run
directory receives an echo of the resolved config that can itself be passed
back via --config to reproduce the run.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable


class ConfigError(ValueError):
    pass


def _parse_bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ConfigError(f"not a boolean: {s!r}")


def _parse_list(item_parser: Callable[[str], Any]) -> Callable[[str], list]:
    def parse(s: str) -> list:
        items = [part.strip() for part in s.split(",") if part.strip()]
        if not items:
            raise ConfigError("empty list")
        return [item_parser(it) for it in items]

    return parse


@dataclass(frozen=True)
class Field:
    name: str
    parser: Callable[[str], Any]
    required: bool = False
    default: Any = None


class Schema:
    def __init__(self, command: str, fields: list[Field]):
        self.command = command
        self.fields = {f.name: f for f in fields}

    def resolve(self, raw: dict[str, str], overrides: dict[str, Any] | None = None) -> dict:
        unknown = set(raw) - set(self.fields)
        if unknown:
            raise ConfigError(
                f"{self.command}: unknown config keys: {', '.join(sorted(unknown))}"
            )
        out = {}
        for name, f in self.fields.items():
            if name in raw:
                try:
                    out[name] = f.parser(raw[name])
                except (ConfigError, ValueError) as exc:
                    raise ConfigError(f"{self.command}: bad value for {name}: {exc}") from exc
            elif f.required:
                raise ConfigError(f"{self.command}: missing required key {name}")
            else:
                out[name] = f.default
        if overrides:
            out.update({k: v for k, v in overrides.items() if v is not None})
        return out


def read_config(path: str | Path) -> dict[str, str]:
    raw = {}
    text = Path(path).read_text()
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = stripped.split("=", 1)
        key = key.strip()
        if key in raw:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key}")
        raw[key] = value.strip()
    return raw


def echo_config(resolved: dict, path: Path):
    lines = []
    for key in sorted(resolved):
        value = resolved[key]
        if value is None:
            continue
        if isinstance(value, (list, tuple)):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key}={value}")
    path.write_text("\n".join(lines) + "\n")


INT = int
FLOAT = float
STR = str
BOOL = _parse_bool
INT_LIST = _parse_list(int)
FLOAT_LIST = _parse_list(float)
STR_LIST = _parse_list(str)
