"""
Flat parameter vectors with a named layout, and their on-disk format
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple, Union

import numpy as np

from src.core.exceptions import LayoutMismatchError
from .tensor import Tensor, reshape, take

logger = logging.getLogger(__name__)

PARAMS_FORMAT = "bandinr-params"
PARAMS_VERSION = 1


@dataclass(frozen=True)
class LayoutEntry:
    """One named block inside a flat vector"""
    name: str
    shape: Tuple[int, ...]
    offset: int

    @property
    def size(self) -> int:
        return int(np.prod(self.shape)) if self.shape else 1

    @property
    def stop(self) -> int:
        return self.offset + self.size


class ParamLayout:
    """Ordered, contiguous (name, shape, offset) table"""

    def __init__(self, arch: str, blocks: Iterable[Tuple[str, Sequence[int]]]):
        self.arch = arch
        entries: List[LayoutEntry] = []
        offset = 0
        for name, shape in blocks:
            entry = LayoutEntry(name, tuple(int(s) for s in shape), offset)
            entries.append(entry)
            offset = entry.stop
        self.entries: Tuple[LayoutEntry, ...] = tuple(entries)
        self.length = offset
        self._index = {e.name: e for e in self.entries}
        if len(self._index) != len(self.entries):
            raise LayoutMismatchError(f"duplicate block names in layout '{arch}'")

    def __getitem__(self, name: str) -> LayoutEntry:
        return self._index[name]

    def __contains__(self, name: str) -> bool:
        return name in self._index

    def __iter__(self):
        return iter(self.entries)

    def __eq__(self, other) -> bool:
        return (isinstance(other, ParamLayout) and self.arch == other.arch
                and self.entries == other.entries)

    def __hash__(self):
        return hash((self.arch, self.entries))

    def __repr__(self) -> str:
        return f"ParamLayout('{self.arch}', blocks={len(self.entries)}, length={self.length})"

    def to_json(self) -> list:
        return [[e.name, list(e.shape), e.offset] for e in self.entries]

    @classmethod
    def from_json(cls, arch: str, table: list) -> "ParamLayout":
        layout = cls(arch, [(name, shape) for name, shape, _ in table])
        for entry, (_, _, offset) in zip(layout.entries, table):
            if entry.offset != offset:
                raise LayoutMismatchError(f"non-contiguous offset for block '{entry.name}'")
        return layout


class ParamVector:
    """
    Flat float64 parameter storage addressed through a ParamLayout.

    Instances are treated as values: optimizers and EMA updates return new
    vectors instead of writing into shared storage.
    """

    def __init__(self, layout: ParamLayout, data: np.ndarray = None):
        self.layout = layout
        if data is None:
            data = np.zeros(layout.length)
        data = np.asarray(data, dtype=np.float64).reshape(-1)
        if data.size != layout.length:
            raise LayoutMismatchError(
                f"'{layout.arch}' expects {layout.length} values, got {data.size}")
        self.data = data

    def __len__(self) -> int:
        return self.layout.length

    def __repr__(self) -> str:
        return f"ParamVector('{self.layout.arch}', n={self.layout.length})"

    def like(self, data: np.ndarray) -> "ParamVector":
        return ParamVector(self.layout, data)

    def copy(self) -> "ParamVector":
        return ParamVector(self.layout, self.data.copy())

    def zeros_like(self) -> "ParamVector":
        return ParamVector(self.layout, np.zeros(self.layout.length))

    def view(self, name: str) -> np.ndarray:
        entry = self.layout[name]
        return self.data[entry.offset:entry.stop].reshape(entry.shape)

    def check_layout(self, other: "ParamVector"):
        if self.layout != other.layout:
            raise LayoutMismatchError(
                f"layout '{self.layout.arch}' ({self.layout.length}) does not match "
                f"'{other.layout.arch}' ({other.layout.length})")

    def save(self, path: Union[str, Path]):
        """Write the JSON header line followed by little-endian float64 values"""
        header = {
            "format": PARAMS_FORMAT,
            "version": PARAMS_VERSION,
            "arch": self.layout.arch,
            "layout": self.layout.to_json(),
            "length": self.layout.length,
        }
        path = Path(path)
        with open(path, "wb") as f:
            f.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
            f.write(self.data.astype("<f8").tobytes())
        logger.debug(f"Saved {self} to {path}")

    @classmethod
    def load(cls, path: Union[str, Path], expected: ParamLayout = None) -> "ParamVector":
        """
        Read a vector written by save()

        Args:
            path: .params file
            expected: Layout the caller requires, if any

        Returns:
            Loaded ParamVector
        """
        with open(path, "rb") as f:
            header = json.loads(f.readline().decode("utf-8"))
            payload = f.read()
        if header.get("format") != PARAMS_FORMAT or header.get("version") != PARAMS_VERSION:
            raise LayoutMismatchError(f"{path}: not a {PARAMS_FORMAT} v{PARAMS_VERSION} file")
        layout = ParamLayout.from_json(header["arch"], header["layout"])
        if layout.length != header["length"]:
            raise LayoutMismatchError(f"{path}: header length disagrees with layout")
        data = np.frombuffer(payload, dtype="<f8").astype(np.float64)
        vector = cls(layout, data)
        if expected is not None and expected != layout:
            raise LayoutMismatchError(
                f"{path}: stored layout '{layout.arch}' does not match '{expected.arch}'")
        return vector


def unpack(flat: Tensor, layout: ParamLayout) -> Dict[str, Tensor]:
    """Split a flat tensor into shaped per-block tensors"""
    if flat.shape != (layout.length,):
        raise LayoutMismatchError(
            f"'{layout.arch}' expects a flat tensor of {layout.length}, got {flat.shape}")
    return {e.name: reshape(take(flat, slice(e.offset, e.stop)), e.shape) for e in layout}
