"""Reading, writing and hashing of the line-oriented run configuration.

The format is a sequence of `[section]` headers followed by `key = value`
lines. `#` starts a comment, blank lines are ignored. Values are coerced to
int, float (including `inf`), bool or string before the pydantic models in
`schns.core.models` validate them.
"""

import hashlib
import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, List, Union

from pydantic import ValidationError

from .exceptions import ConfigurationError
from .models import RunConfig

log = logging.getLogger(__name__)

_TRUE = {"true", "yes", "on"}
_FALSE = {"false", "no", "off"}


def _coerce(raw: str) -> Any:
    text = raw.strip()
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "\"'":
        return text[1:-1]
    lowered = text.lower()
    if lowered in _TRUE:
        return True
    if lowered in _FALSE:
        return False
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def _section_fields(section: str) -> List[str]:
    return list(RunConfig.model_fields[section].annotation.model_fields)  # type: ignore[union-attr]


def parse_config(text: str) -> RunConfig:
    """
    Parses configuration text into a validated RunConfig.

    Raises:
        ConfigurationError: with a line number for syntax errors, unknown
            sections and unknown or repeated keys, and with the dotted key path
            (e.g. `scheme.dt`) for constraint violations.
    """
    sections: Dict[str, Dict[str, Any]] = {}
    current = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if stripped.startswith("["):
            if not stripped.endswith("]"):
                raise ConfigurationError(f"unterminated section header '{stripped}'", line=lineno)
            current = stripped[1:-1].strip()
            if current not in RunConfig.SECTIONS:
                raise ConfigurationError(f"unknown section '{current}'", line=lineno)
            sections.setdefault(current, {})
            continue
        if "=" not in stripped:
            raise ConfigurationError(f"expected 'key = value', got '{stripped}'", line=lineno)
        if current is None:
            raise ConfigurationError("key outside of any [section]", line=lineno)
        key, _, value = stripped.partition("=")
        key = key.strip()
        if key not in _section_fields(current):
            raise ConfigurationError(f"unknown key '{current}.{key}'", line=lineno)
        if key in sections[current]:
            raise ConfigurationError(f"duplicate key '{current}.{key}'", line=lineno)
        sections[current][key] = _coerce(value)

    try:
        config = RunConfig.model_validate(sections)
    except ValidationError as e:
        first = e.errors()[0]
        key_path = ".".join(str(part) for part in first["loc"])
        raise ConfigurationError(first["msg"], key_path=key_path) from e
    log.debug(f"Parsed configuration with sections: {sorted(sections)}")
    return config


def load_config(path: Union[str, Path]) -> RunConfig:
    """Reads and parses a configuration file."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigurationError(f"cannot read config file {path}: {e}") from e
    log.info(f"Loading configuration from: {path}")
    return parse_config(text)


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return repr(value)
    if isinstance(value, (tuple, list)):
        return ", ".join(repr(float(v)) for v in value)
    if isinstance(value, str):
        return f'"{value}"'
    return str(value)


def dump_config(config: RunConfig) -> str:
    """Serializes a RunConfig so that parse_config(dump_config(c)) == c."""
    lines: List[str] = []
    for section in RunConfig.SECTIONS:
        lines.append(f"[{section}]")
        for key, value in getattr(config, section).model_dump().items():
            if value is None:
                continue
            lines.append(f"{key} = {_format_value(value)}")
        lines.append("")
    return "\n".join(lines)


# Sections that change a path; ensemble plumbing and output contribute only the base seed.
HASHED_SECTIONS = ("grid", "scheme", "noise", "potential", "cutoff", "initial")


def config_hash(config: RunConfig) -> bytes:
    """SHA-256 over the canonical JSON of the physics sections and the base seed."""
    payload = config.model_dump(include=set(HASHED_SECTIONS))
    payload["base_seed"] = config.ensemble.base_seed
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).digest()


def apply_overrides(config: RunConfig, seed: Any = None, out: Any = None, steps: Any = None) -> RunConfig:
    """Applies the CLI flags --seed, --out and --steps on top of a parsed config."""
    updates: Dict[str, Dict[str, Any]] = {}
    if seed is not None:
        updates["ensemble"] = {"base_seed": seed}
        log.info(f"Base seed overridden to: {seed}")
    if out is not None:
        updates.setdefault("output", {})["directory"] = str(out)
        log.info(f"Output directory overridden to: {out}")
    if steps is not None:
        updates.setdefault("output", {})["steps"] = steps
        log.info(f"Step count overridden to: {steps}")
    if not updates:
        return config
    data = config.model_dump()
    for section, values in updates.items():
        data[section].update(values)
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        raise ConfigurationError(first["msg"], key_path=".".join(str(p) for p in first["loc"])) from e
