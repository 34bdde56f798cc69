"""
Checkpoint directories: one .params file per parameter set plus checkpoint.json
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Union

import numpy as np

from src.core.exceptions import ConfigError
from src.modules.diffcore import ParamLayout, ParamVector

logger = logging.getLogger(__name__)

META_FILE = "checkpoint.json"


@dataclass
class Checkpoint:
    params: Dict[str, ParamVector]
    meta: Dict[str, Any] = field(default_factory=dict)
    rng_state: Optional[Dict[str, Any]] = None

    def __getitem__(self, name: str) -> ParamVector:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def restore_rng(self) -> Optional[np.random.Generator]:
        if self.rng_state is None:
            return None
        rng = np.random.default_rng()
        rng.bit_generator.state = self.rng_state
        return rng


def save_checkpoint(directory: Union[str, Path], params: Mapping[str, ParamVector],
                    meta: Optional[Dict[str, Any]] = None,
                    rng: Optional[np.random.Generator] = None) -> Path:
    """
    Write a checkpoint directory

    Args:
        directory: Target directory, created if missing
        params: Parameter sets by name
        meta: JSON-serializable metadata (architecture, config hash, seed, step)
        rng: Generator whose bit_generator state is stored for resumption

    Returns:
        The directory path
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, vector in params.items():
        vector.save(directory / f"{name}.params")
    payload = {
        "params": sorted(params),
        "meta": meta or {},
        "rng_state": rng.bit_generator.state if rng is not None else None,
    }
    (directory / META_FILE).write_text(json.dumps(payload, indent=2, sort_keys=True))
    logger.info(f"Checkpoint saved to {directory} ({', '.join(sorted(params))})")
    return directory


def load_checkpoint(directory: Union[str, Path],
                    expected: Optional[Mapping[str, ParamLayout]] = None) -> Checkpoint:
    """
    Read a checkpoint directory

    Args:
        directory: Directory written by save_checkpoint
        expected: Required layouts by name; a missing set is an error

    Returns:
        Checkpoint
    """
    directory = Path(directory)
    meta_path = directory / META_FILE
    if not meta_path.is_file():
        raise ConfigError(f"{directory} is not a checkpoint directory (no {META_FILE})")
    payload = json.loads(meta_path.read_text())
    expected = expected or {}
    missing = sorted(set(expected) - set(payload["params"]))
    if missing:
        raise ConfigError(f"checkpoint {directory} lacks parameter sets: {', '.join(missing)}")
    params = {name: ParamVector.load(directory / f"{name}.params", expected.get(name))
              for name in payload["params"]}
    logger.info(f"Checkpoint loaded from {directory}")
    return Checkpoint(params, payload.get("meta", {}), payload.get("rng_state"))
