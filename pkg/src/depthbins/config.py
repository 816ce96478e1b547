"""Run configuration loaded from JSON."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .degrade import DegradeSpec
from .types import HyperParams, ValidationError

PROVIDERS = ("small-encoder", "external-file")


@dataclass(frozen=True)
class RunConfig:
    hyper: HyperParams = field(default_factory=HyperParams)
    degrade: DegradeSpec = field(default_factory=DegradeSpec)
    provider: str = "small-encoder"
    encoder_channels: int = 16
    encoder_seed: int = 0
    smooth_k: int = 3
    weights: str | None = None
    features: str | None = None

    def __post_init__(self):
        if self.provider not in PROVIDERS:
            raise ValidationError(
                f"provider must be one of {PROVIDERS}, got {self.provider!r}", "invalid-config"
            )
        if self.provider == "external-file" and not self.features:
            raise ValidationError("external-file provider needs a 'features' path", "invalid-config")
        for p in (self.weights, self.features):
            if p and not Path(p).exists():
                raise FileNotFoundError(f"config references missing file {p}")

    def to_dict(self) -> dict:
        return asdict(self)


def _build(cls, data: dict):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ValidationError(f"unknown {cls.__name__} keys: {sorted(unknown)}", "invalid-config")
    return cls(**data)


def config_from_dict(data: dict, base_dir: Path | None = None) -> RunConfig:
    data = dict(data)
    if "hyper" in data:
        data["hyper"] = _build(HyperParams, data["hyper"])
    if "degrade" in data:
        data["degrade"] = _build(DegradeSpec, data["degrade"])
    if base_dir is not None:
        for key in ("weights", "features"):
            if data.get(key) and not Path(data[key]).is_absolute():
                data[key] = str(base_dir / data[key])
    return _build(RunConfig, data)


def load_config(path) -> RunConfig:
    """Read a JSON config; relative file paths resolve against the config's directory."""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config {path} is not valid JSON: {exc}", "invalid-config") from None
    return config_from_dict(data, path.parent)
