"""Versioned JSON checkpoints.

Floats are written with Python's shortest round-trip repr, so a reloaded
checkpoint reproduces the saved parameters bit for bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import NormStats
from .errors import ContractError
from .model import ModelConfig

FORMAT = "sfcad-checkpoint"
VERSION = 1


@dataclass
class Checkpoint:
    config: ModelConfig
    params: dict
    normalization: dict = field(default_factory=dict)
    seeds: dict = field(default_factory=dict)
    train_config: dict | None = None

    def stats_for(self, name: str) -> NormStats | None:
        d = self.normalization.get(name)
        return None if d is None else NormStats.from_dict(d)

    def to_dict(self) -> dict:
        return {
            "format": FORMAT,
            "version": VERSION,
            "model_config": self.config.to_dict(),
            "params": {k: {"shape": list(v.shape), "values": np.asarray(v).ravel().tolist()}
                       for k, v in self.params.items()},
            "normalization": self.normalization,
            "seeds": self.seeds,
            "train_config": self.train_config,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Checkpoint":
        if d.get("format") != FORMAT:
            raise ContractError("not an sfcad checkpoint")
        if d.get("version") != VERSION:
            raise ContractError(f"unsupported checkpoint version {d.get('version')}")
        params = {k: np.asarray(p["values"], dtype=np.float64).reshape(p["shape"]) for k, p in d["params"].items()}
        return cls(ModelConfig.from_dict(d["model_config"]), params, d.get("normalization", {}),
                   d.get("seeds", {}), d.get("train_config"))

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict()))
        return path

    @classmethod
    def load(cls, path) -> "Checkpoint":
        return cls.from_dict(json.loads(Path(path).read_text()))
