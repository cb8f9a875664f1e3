"""Flat key-value config files.

One ``key = value`` per line, ``#`` comments, keys named after the
AgentConfig fields (``hidden`` is comma-separated). ``env.<name>`` keys pass
through to the environment constructor. Unknown keys are an error that
lists the valid set.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path

from .agents import AgentConfig

__all__ = ["VALID_KEYS", "parse_config_text", "load_config", "apply_overrides", "config_to_text"]

VALID_KEYS = tuple(f.name for f in dataclasses.fields(AgentConfig) if f.name != "env_overrides")


def _coerce(raw: str):
    raw = raw.strip()
    low = raw.lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        pass
    return raw


def _parse_pairs(lines) -> dict:
    values: dict = {}
    env_overrides: dict = {}
    for lineno, line in enumerate(lines, start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ValueError(f"line {lineno}: expected 'key = value', got {text!r}")
        key, raw = (part.strip() for part in text.split("=", 1))
        if key.startswith("env."):
            env_overrides[key[4:]] = _coerce(raw)
            continue
        if key not in VALID_KEYS:
            raise ValueError(f"unknown config key {key!r}; valid keys: {', '.join(VALID_KEYS)}")
        if key == "hidden":
            values[key] = tuple(int(part) for part in raw.replace(",", " ").split())
        elif key in ("batch", "buffer", "warm", "policy_update_interval", "seed",
                     "total_iterations", "eval_interval", "eval_episodes",
                     "steps_per_iteration"):
            values[key] = int(float(raw))
        else:
            values[key] = _coerce(raw)
    if env_overrides:
        values["env_overrides"] = env_overrides
    return values


def parse_config_text(text: str) -> AgentConfig:
    return AgentConfig(**_parse_pairs(text.splitlines()))


def load_config(path) -> AgentConfig:
    return parse_config_text(Path(path).read_text())


def apply_overrides(config: AgentConfig, pairs: list[str]) -> AgentConfig:
    """Apply ``key=value`` strings (CLI --set) on top of an existing config."""
    merged = dataclasses.asdict(config)
    merged["hidden"] = tuple(merged["hidden"])
    overrides = _parse_pairs(pairs)
    env_overrides = dict(merged.pop("env_overrides"))
    env_overrides.update(overrides.pop("env_overrides", {}))
    merged.update(overrides)
    return AgentConfig(**merged, env_overrides=env_overrides)


def config_to_text(config: AgentConfig) -> str:
    """Render a config back to file form (resolved values, stable order)."""
    lines = []
    for name in VALID_KEYS:
        value = getattr(config, name)
        if name == "hidden":
            value = ",".join(str(h) for h in value)
        lines.append(f"{name} = {value}")
    for key in sorted(config.env_overrides):
        lines.append(f"env.{key} = {config.env_overrides[key]}")
    return "\n".join(lines) + "\n"
