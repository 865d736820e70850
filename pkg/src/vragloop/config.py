"""Run configuration: JSON file with ${ENV} interpolation, overridable from the command line."""

from __future__ import annotations

import hashlib
import json
import os
import re
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from .loop import LoopConfig


class ConfigError(ValueError):
    pass


_ENV = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}")

# file key -> LoopConfig field
_LOOP_KEYS = {
    "max_turns": "max_turns",
    "window_size": "window",
    "top_k": "top_k",
    "verification_markers": "verification_markers",
    "invalid_retry_limit": "invalid_retry_limit",
    "displayed_space": "displayed_space",
    "margin_px": "margin_px",
    "crop_output_size": "crop_output_size",
    "evidence_char_cap": "evidence_char_cap",
}


def interpolate(value: Any) -> Any:
    if isinstance(value, str):
        def sub(m: re.Match) -> str:
            name = m.group(1)
            if name not in os.environ:
                raise ConfigError(f"environment variable {name} is not set")
            return os.environ[name]
        return _ENV.sub(sub, value)
    if isinstance(value, list):
        return [interpolate(v) for v in value]
    if isinstance(value, dict):
        return {k: interpolate(v) for k, v in value.items()}
    return value


@dataclass(frozen=True)
class RunConfig:
    loop: LoopConfig = field(default_factory=LoopConfig)
    index_path: Path | None = None
    manifest_path: Path | None = None
    template_dir: Path | None = None
    template_variant: str = "default"
    policy: dict = field(default_factory=dict)
    judge: dict | None = None
    embedder: str = "hash"
    embed_dim: int = 256
    embed_seed: int = 0
    output_dir: Path = Path("out")
    seed: int = 0
    workers: int = 1

    @classmethod
    def from_dict(cls, raw: dict, base_dir: Path | None = None) -> RunConfig:
        raw = interpolate(raw)
        base = base_dir or Path(".")
        loop_kwargs = {}
        rest = {}
        for key, value in raw.items():
            if key in _LOOP_KEYS:
                if key in ("displayed_space", "crop_output_size", "verification_markers") and value is not None:
                    value = tuple(value)
                loop_kwargs[_LOOP_KEYS[key]] = value
            else:
                rest[key] = value
        known = {f.name for f in fields(cls)} - {"loop"}
        unknown = set(rest) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        for key in ("index_path", "manifest_path", "template_dir", "output_dir"):
            if rest.get(key) is not None:
                rest[key] = _resolve(base, rest[key])
        policy = dict(rest.get("policy") or {})
        if policy.get("script"):
            policy["script"] = str(_resolve(base, policy["script"]))
        rest["policy"] = policy
        try:
            loop = LoopConfig(**loop_kwargs)
            return cls(loop=loop, **rest)
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from e

    @classmethod
    def load(cls, path: str | Path) -> RunConfig:
        path = Path(path)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"{path}: {e}") from e
        return cls.from_dict(raw, path.parent)

    def with_overrides(self, **overrides: Any) -> RunConfig:
        loop_over = {_LOOP_KEYS[k]: v for k, v in overrides.items() if k in _LOOP_KEYS and v is not None}
        other = {k: v for k, v in overrides.items() if k not in _LOOP_KEYS and v is not None}
        try:
            return replace(self, loop=replace(self.loop, **loop_over), **other)
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from e


def _resolve(base: Path, p: str | Path) -> Path:
    p = Path(p)
    return p if p.is_absolute() else base / p


def derive_seed(root_seed: int, query_id: str) -> int:
    """Per-trajectory seed from a stable hash, independent of scheduling order."""
    digest = hashlib.sha256(f"{root_seed}:{query_id}".encode()).digest()
    return int.from_bytes(digest[:4], "little")
