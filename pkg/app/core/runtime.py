"""Run-level utilities: seeding and transactional output directories."""

import random
import shutil
import uuid
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator

import numpy as np
import torch


def seed_everything(seed: int) -> None:
    """Seed python, numpy and torch so that a run is reproducible."""
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)


@contextmanager
def run_directory(path: Path) -> Iterator[Path]:
    """Context manager for writing stage outputs.

    Outputs go to a temporary sibling directory which replaces ``path`` only if the
    block completes; on error it is removed and ``path`` is left untouched.

    Usage:
        with run_directory(model_dir) as workdir:
            save_model(workdir / "tagger.pt", ...)
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    staging = path.parent / f".{path.name}.{uuid.uuid4().hex[:8]}"
    staging.mkdir()
    try:
        yield staging
        if path.exists():
            for item in staging.iterdir():
                target = path / item.name
                if target.is_dir():
                    shutil.rmtree(target)
                elif target.exists():
                    target.unlink()
                shutil.move(str(item), str(target))
            shutil.rmtree(staging)
        else:
            staging.rename(path)
    except Exception:
        shutil.rmtree(staging, ignore_errors=True)
        raise
