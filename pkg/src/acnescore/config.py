"""Key=value config files shared by the CLI and the service.

Format: one ``key = value`` pair per line, ``#`` starts a comment, blank
lines ignored. Unknown keys are rejected with the exact key name so typos
surface immediately.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Mapping

from .errors import ConfigError

_BOOL_VALUES = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


def read_kv_file(path: str | os.PathLike) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def _coerce(name: str, value: str, target: type) -> Any:
    try:
        if target is bool:
            lowered = value.lower()
            if lowered not in _BOOL_VALUES:
                raise ValueError(value)
            return _BOOL_VALUES[lowered]
        if target is int:
            return int(value)
        if target is float:
            return float(value)
        return value
    except ValueError as exc:
        raise ConfigError(f"key {name!r}: cannot parse {value!r} as {target.__name__}") from exc


def _from_mapping(cls, mapping: Mapping[str, str]):
    defaults = cls()
    known = {f.name for f in fields(cls)}
    kwargs: dict[str, Any] = {}
    for key, value in mapping.items():
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        kwargs[key] = _coerce(key, value, type(getattr(defaults, key)))
    return cls(**kwargs)


@dataclass(frozen=True)
class QualityConfig:
    """Thresholds for the image quality filter (0-255 luma scale)."""

    luma_lo: float = 30.0
    luma_hi: float = 225.0
    min_side: int = 256

    def __post_init__(self):
        if not 0 <= self.luma_lo < self.luma_hi <= 255:
            raise ConfigError(f"require 0 <= luma_lo < luma_hi <= 255, got {self.luma_lo}, {self.luma_hi}")
        if self.min_side < 1:
            raise ConfigError(f"min_side must be >= 1, got {self.min_side}")

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, str]) -> "QualityConfig":
        return _from_mapping(cls, mapping)

    @classmethod
    def from_file(cls, path: str | os.PathLike) -> "QualityConfig":
        return cls.from_mapping(read_kv_file(path))


@dataclass(frozen=True)
class ServiceConfig:
    """Scoring-service settings, loadable from the shared key=value format.

    ``embedding_backend`` selects "onnx" (requires ``backbone_path``) or
    "test" (the deterministic seeded-projection backend, no artifact).
    ``landmarks_dir`` points the sidecar detector backends at a directory
    of annotation files; real deployments set ``landmark_model_path`` /
    ``eye_model_path`` instead.
    """

    listen_addr: str = "127.0.0.1:8000"
    backbone_path: str = ""
    head_path: str = ""
    max_body_bytes: int = 10 * 1024 * 1024
    store_path: str = ""
    retain_images: bool = False
    embedding_backend: str = "onnx"
    embed_dim: int = 256
    input_side: int = 224
    landmarks_dir: str = ""
    landmark_model_path: str = ""
    eye_model_path: str = ""
    strict_users: bool = False

    def __post_init__(self):
        if self.max_body_bytes < 1:
            raise ConfigError(f"max_body_bytes must be >= 1, got {self.max_body_bytes}")
        if self.embedding_backend not in ("onnx", "test"):
            raise ConfigError(f"embedding_backend must be 'onnx' or 'test', got {self.embedding_backend!r}")

    @property
    def host_port(self) -> tuple[str, int]:
        host, _, port = self.listen_addr.rpartition(":")
        if not host or not port.isdigit():
            raise ConfigError(f"listen_addr must be host:port, got {self.listen_addr!r}")
        return host, int(port)

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, str]) -> "ServiceConfig":
        return _from_mapping(cls, mapping)

    @classmethod
    def from_file(cls, path: str | os.PathLike) -> "ServiceConfig":
        return cls.from_mapping(read_kv_file(path))
