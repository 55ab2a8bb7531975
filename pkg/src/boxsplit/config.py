"""Run configuration: model/training hyperparameters and config-file parsing.

Defaults follow the reported training setup (6 layers, width 512, 4 heads,
lr 8e-4, batch 2048, 100 epochs, DDIM 50 steps); everything is overridable via
key=value config files and CLI flags. The full config is serialized into every
checkpoint and report for provenance.
"""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass


@dataclass
class RunConfig:
    seed: int = 0
    family: str = "table"
    layers: int = 6
    width: int = 512
    heads: int = 4
    lr: float = 8e-4
    batch_size: int = 2048
    epochs: int = 100
    max_boxes: int = 32
    diffusion_T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    sample_steps: int = 50
    repaint_resample: int = 5
    vocab_size: int = 16384
    vq_depth: int = 2
    vq_latent_dim: int = 64
    vq_hidden_dim: int = 128
    vq_epochs: int = 100
    vq_batch_size: int = 256
    vq_lr: float = 1e-3
    vq_commitment: float = 0.25
    vq_ema_decay: float = 0.99

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @staticmethod
    def from_dict(values: dict) -> "RunConfig":
        cfg = RunConfig()
        for key, value in values.items():
            if not hasattr(cfg, key):
                raise KeyError(f"unknown config key {key!r}")
            field_type = type(getattr(cfg, key))
            setattr(cfg, key, field_type(value))
        return cfg

    def replace(self, **kwargs) -> "RunConfig":
        return dataclasses.replace(self, **kwargs)


def parse_config_file(path: str) -> dict:
    """key=value lines; '#' comments and blank lines ignored."""
    values: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {raw.rstrip()!r}")
            key, value = line.split("=", 1)
            values[key.strip()] = value.strip()
    return values


def resolve_seed(flag_seed: int | None) -> int:
    """CLI flag wins; falls back to the BOXSPLIT_SEED env var, then 0."""
    if flag_seed is not None:
        return flag_seed
    env = os.environ.get("BOXSPLIT_SEED")
    return int(env) if env else 0
