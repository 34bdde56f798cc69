"""
Dataset Records - one band configuration with its clouds and SDF supervision

File layout (.rec): a JSON header line, then float32 blocks in a fixed order
(partial, complete, on points, on normals, near points, near distances,
off points, off distances, medial axis), then float64 centerline nodes.
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np

from src.config import settings
from src.core.exceptions import DegenerateViewpointError, LayoutMismatchError
from src.modules.pretraining.queries import QueryCounts, SdfBatch, sample_queries
from src.modules.simulation import (BandState, init_band, render_complete, render_partial,
                                    sample_viewpoint)

logger = logging.getLogger(__name__)

RECORD_FORMAT = "bandinr-record"
RECORD_VERSION = 1
MAX_VIEW_ATTEMPTS = 10


@dataclass
class BandRecord:
    """One (partial cloud, complete cloud, supervision) sample"""
    d_id: float
    d_csd: float
    twist: int
    stretch: float
    seed: int
    class_id: str
    record_id: str
    viewpoint: np.ndarray
    partial: np.ndarray
    complete: np.ndarray
    queries: SdfBatch
    nodes: np.ndarray

    @property
    def labels(self) -> dict:
        return {"twist": self.twist, "stretch": self.stretch, "d_id": self.d_id,
                "d_csd": self.d_csd, "class": self.class_id}

    def band_state(self) -> BandState:
        """Rebuild the simulated band; construction is deterministic in the stored seed"""
        return init_band(self.d_id, self.d_csd, self.twist, self.stretch, self.seed,
                         n_nodes=len(self.nodes))

    def _blocks(self) -> List[Tuple[str, np.ndarray]]:
        q = self.queries
        return [("partial", self.partial), ("complete", self.complete),
                ("on_points", q.on_points), ("on_normals", q.on_normals),
                ("near_points", q.near_points), ("near_distances", q.near_distances),
                ("off_points", q.off_points), ("off_distances", q.off_distances),
                ("medial", q.medial)]

    def save(self, path: Union[str, Path]):
        blocks = self._blocks()
        header = {
            "format": RECORD_FORMAT, "version": RECORD_VERSION,
            "d_id": self.d_id, "d_csd": self.d_csd, "twist": self.twist, "stretch": self.stretch,
            "seed": self.seed, "class_id": self.class_id, "record_id": self.record_id,
            "viewpoint": [float(v) for v in self.viewpoint],
            "blocks": [[name, list(array.shape)] for name, array in blocks],
            "nodes": list(self.nodes.shape),
        }
        with open(path, "wb") as f:
            f.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
            for _, array in blocks:
                f.write(np.ascontiguousarray(array, dtype="<f4").tobytes())
            f.write(np.ascontiguousarray(self.nodes, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path: Union[str, Path]) -> "BandRecord":
        with open(path, "rb") as f:
            header = json.loads(f.readline().decode("utf-8"))
            payload = f.read()
        if header.get("format") != RECORD_FORMAT or header.get("version") != RECORD_VERSION:
            raise LayoutMismatchError(f"{path}: not a {RECORD_FORMAT} v{RECORD_VERSION} file")
        arrays = {}
        offset = 0
        for name, shape in header["blocks"]:
            count = int(np.prod(shape))
            arrays[name] = np.frombuffer(payload, dtype="<f4", count=count,
                                         offset=offset).reshape(shape).astype(np.float64)
            offset += 4 * count
        node_shape = header["nodes"]
        nodes = np.frombuffer(payload, dtype="<f8", count=int(np.prod(node_shape)),
                              offset=offset).reshape(node_shape).copy()
        if offset + nodes.nbytes != len(payload):
            raise LayoutMismatchError(f"{path}: payload size disagrees with header")
        queries = SdfBatch(arrays["on_points"], arrays["on_normals"],
                           arrays["near_points"], arrays["near_distances"],
                           arrays["off_points"], arrays["off_distances"],
                           arrays["medial"], header["record_id"])
        return cls(header["d_id"], header["d_csd"], header["twist"], header["stretch"],
                   header["seed"], header["class_id"], header["record_id"],
                   np.asarray(header["viewpoint"]), arrays["partial"], arrays["complete"],
                   queries, nodes)


def make_record(d_id: float, d_csd: float, twist: int, stretch: float, seed: int,
                class_id: str, record_id: str, counts: QueryCounts = QueryCounts(),
                cloud_points: int = settings.CLOUD_POINTS,
                n_nodes: int = settings.BAND_NODES) -> BandRecord:
    """
    Simulate one band configuration and render its supervision

    Viewpoints that leave fewer than `cloud_points` visible samples are redrawn.
    """
    rng = np.random.default_rng(seed)
    state = init_band(d_id, d_csd, twist, stretch, seed, n_nodes=n_nodes)
    for attempt in range(MAX_VIEW_ATTEMPTS):
        viewpoint = sample_viewpoint(state, rng)
        try:
            partial = render_partial(state, viewpoint, rng, n=cloud_points)
            break
        except DegenerateViewpointError as e:
            logger.debug(f"Record {record_id}: view {attempt} rejected ({e})")
    else:
        raise DegenerateViewpointError(
            f"record {record_id}: no usable viewpoint after {MAX_VIEW_ATTEMPTS} attempts")
    complete = render_complete(state, rng, n=cloud_points)
    q = sample_queries(state, counts, rng, record_id=record_id)
    queries = SdfBatch(*(_stored(a) for a in (q.on_points, q.on_normals, q.near_points,
                                              q.near_distances, q.off_points, q.off_distances,
                                              q.medial)), record_id)
    return BandRecord(d_id, d_csd, twist, stretch, seed, class_id, record_id, viewpoint,
                      _stored(partial), _stored(complete), queries, state.nodes.copy())


def _stored(array: np.ndarray) -> np.ndarray:
    """Round to the float32 precision of the file so a reloaded record compares equal"""
    return np.asarray(array, dtype=np.float32).astype(np.float64)
