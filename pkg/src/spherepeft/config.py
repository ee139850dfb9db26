"""Run configuration with strict JSON parsing."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

__all__ = ["ConfigError", "RunConfig", "load_config", "TOY_PRESET", "CLIP_LIKE_PRESET"]

RELATION_VARIANTS = ("linear", "mlp", "none")
ACTIVATIONS = ("relu", "tanh", "identity")


class ConfigError(ValueError):
    """Invalid or unknown configuration entries."""


@dataclass(frozen=True)
class RunConfig:
    d_v: int = 8
    d_e: int = 8
    q: int = 4
    L: int = 2
    m: int = 1
    k: int = 2
    relation_variant: str = "linear"
    activation: str = "relu"
    alpha_init: float = 0.0
    seed: int = 0
    iterations: int = 200
    batch_size: int = 64
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    tau: float = 0.07
    d_s: Optional[int] = None
    noise_scale: float = 0.05

    def __post_init__(self):
        errors = []
        for name in ("d_v", "d_e", "q", "L", "m", "k", "iterations", "batch_size"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int) or value < 1:
                errors.append(f"{name} must be a positive integer (got {value!r})")
        if not errors:
            if self.d_v % self.q:
                errors.append(f"q={self.q} does not divide d_v={self.d_v}")
            if self.d_e % self.q:
                errors.append(f"q={self.q} does not divide d_e={self.d_e}")
            if self.batch_size < 2:
                errors.append("batch_size must be >= 2")
        if self.relation_variant not in RELATION_VARIANTS:
            errors.append(f"relation_variant must be one of {RELATION_VARIANTS}")
        if self.activation not in ACTIVATIONS:
            errors.append(f"activation must be one of {ACTIVATIONS}")
        if not self.tau > 0:
            errors.append("tau must be > 0")
        if self.lr < 0 or self.noise_scale < 0 or self.eps <= 0:
            errors.append("lr and noise_scale must be >= 0, eps > 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            errors.append("beta1 and beta2 must lie in [0, 1)")
        if self.d_s is not None and (not isinstance(self.d_s, int) or self.d_s < 1):
            errors.append("d_s must be a positive integer or null")
        if errors:
            raise ConfigError("; ".join(errors))

    @property
    def b_v(self) -> int:
        return self.d_v // self.q

    @property
    def b_e(self) -> int:
        return self.d_e // self.q

    @property
    def n_slices(self) -> int:
        return self.b_v + self.b_e

    @property
    def embed_dim(self) -> int:
        return self.d_s if self.d_s is not None else max(1, min(self.d_v, self.d_e) // 2)

    @property
    def uses_dcrc(self) -> bool:
        return self.relation_variant != "none"

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def config_hash(self) -> str:
        """Digest of everything except the run length, so checkpoints can be resumed."""
        data = self.to_dict()
        del data["iterations"]
        return hashlib.sha256(json.dumps(data, sort_keys=True).encode()).hexdigest()

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        data = dict(data)
        for name in ("lr", "beta1", "beta2", "eps", "tau", "noise_scale", "alpha_init"):
            if name in data and isinstance(data[name], int) and not isinstance(data[name], bool):
                data[name] = float(data[name])
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


def load_config(path) -> RunConfig:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return RunConfig.from_dict(data)


TOY_PRESET = RunConfig()
CLIP_LIKE_PRESET = RunConfig(d_v=768, d_e=512, q=128, L=12, m=1, d_s=512)
