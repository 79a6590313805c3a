"""Versioned, self-describing container for trained models."""

import hashlib
from pathlib import Path
from typing import Any

import torch
from loguru import logger

from app.core.errors import ConfigError

FORMAT = "udflow-model"
VERSION = 1


def save_checkpoint(
    path: Path,
    kind: str,
    module: torch.nn.Module,
    hyperparams: dict[str, Any],
    vocabs: dict[str, Any],
    extras: dict[str, Any] | None = None,
) -> Path:
    """Write a module with everything needed to rebuild it.

    Args:
        path: Destination file.
        kind: Model family, checked on load (e.g. ``"tagger"``).
        module: The trained network.
        hyperparams: Constructor arguments.
        vocabs: Serialized vocabularies (``Vocab.to_dict()``).
        extras: Any additional JSON-like payload.

    Returns:
        Path: The written path.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    params = {name: tensor.detach().cpu() for name, tensor in module.state_dict().items()}
    payload = {
        "format": FORMAT,
        "version": VERSION,
        "kind": kind,
        "hyperparams": hyperparams,
        "vocabs": vocabs,
        "extras": extras or {},
        "params": params,
        "shapes": {name: list(tensor.shape) for name, tensor in params.items()},
    }
    torch.save(payload, path)
    logger.info(f"Saved {kind} model to {path}")
    return path


def load_checkpoint(path: Path, kind: str) -> dict[str, Any]:
    """Read and verify a container written by ``save_checkpoint``."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Model file not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("format") != FORMAT:
        raise ConfigError(f"{path} is not a {FORMAT} container")
    if payload.get("version") != VERSION:
        raise ConfigError(
            f"{path} has container version {payload.get('version')}, expected {VERSION}"
        )
    if payload.get("kind") != kind:
        raise ConfigError(f"{path} holds a '{payload.get('kind')}' model, expected '{kind}'")
    for name, tensor in payload["params"].items():
        if list(tensor.shape) != payload["shapes"][name]:
            raise ConfigError(f"{path}: parameter {name} does not match its recorded shape")
    return payload


def file_checksum(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()
