"""Versioned single-file container for parameters, optimizer state and config."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import torch

FORMAT_NAME = "mgnet-checkpoint"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    params: dict[str, torch.Tensor]
    config: dict[str, Any] = field(default_factory=dict)
    optimizer: dict | None = None
    step: int = 0
    version: int = FORMAT_VERSION

    def save(self, path) -> Path:
        return write_container(
            path, params=self.params, config=self.config, optimizer=self.optimizer, step=self.step
        )

    @classmethod
    def load(cls, path) -> "Checkpoint":
        blob = read_container(path)
        return cls(
            params=blob["params"],
            config=blob.get("config") or {},
            optimizer=blob.get("optimizer"),
            step=int(blob.get("step", 0)),
            version=blob["version"],
        )


def write_container(path, params, config=None, optimizer=None, step: int = 0) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "params": {k: v.detach().cpu().clone() for k, v in params.items()},
        "optimizer": optimizer,
        "step": int(step),
        "config": dict(config or {}),
    }
    tmp = path.with_name(path.name + ".tmp")
    torch.save(blob, tmp)
    tmp.replace(path)
    return path


def read_container(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    blob = torch.load(path, map_location="cpu", weights_only=True)
    if not isinstance(blob, dict) or blob.get("format") != FORMAT_NAME:
        raise CheckpointError(f"{path} is not an {FORMAT_NAME} file")
    if blob.get("version") != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: checkpoint version {blob.get('version')} != supported {FORMAT_VERSION}"
        )
    return blob
