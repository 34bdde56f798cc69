"""
Reconstruction Evaluation - per-record CD/EMD of decoded surfaces against complete clouds
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from tqdm import tqdm

from src.config import ArchitectureConfig, RunConfig
from src.core.exceptions import ConfigError
from src.modules.data import BandRecord, Dataset
from src.modules.geometry import GridSpec, chamfer, emd_with_solver, surface_cloud
from src.modules.networks import ShapeModel, load_checkpoint
from src.modules.simulation import true_sdf

logger = logging.getLogger(__name__)

RECON_COLUMNS = ["record", "class", "cd", "emd", "emd_solver", "empty_mesh"]

Field = Callable[[np.ndarray], np.ndarray]


def load_shape_model(directory: Union[str, Path],
                     fallback: ArchitectureConfig) -> Tuple[ShapeModel, Dict]:
    """
    Stage I model from a checkpoint holding 'encoder' and 'hypernet'

    Returns:
        (model, checkpoint metadata)

    Raises:
        ConfigError: When either parameter set is missing
    """
    checkpoint = load_checkpoint(directory)
    for name in ("encoder", "hypernet"):
        if name not in checkpoint:
            raise ConfigError(f"checkpoint {directory} holds no '{name}' parameters")
    architecture = fallback
    if "architecture" in checkpoint.meta:
        architecture = RunConfig.from_dict({"architecture": checkpoint.meta["architecture"]}).architecture
    encoder_arch, hyper_arch = ShapeModel.archs_for(architecture)
    for name, arch in (("encoder", encoder_arch), ("hypernet", hyper_arch)):
        if checkpoint[name].layout != arch.layout():
            raise ConfigError(f"checkpoint {directory}: '{name}' layout does not match its architecture")
    model = ShapeModel(encoder_arch, hyper_arch, checkpoint["encoder"], checkpoint["hypernet"])
    return model, checkpoint.meta


def record_grid(record: BandRecord, resolution: int) -> GridSpec:
    """Grid around the complete cloud, padded by one cross-section diameter"""
    lower, upper = record.complete.min(axis=0), record.complete.max(axis=0)
    return GridSpec.around(lower, upper, resolution, margin=record.d_csd)


@dataclass
class ReconstructionScore:
    record: str
    class_id: str
    cd: float
    emd: float
    emd_solver: str
    empty_mesh: bool

    def row(self) -> Dict:
        return {"record": self.record, "class": self.class_id, "cd": self.cd, "emd": self.emd,
                "emd_solver": self.emd_solver, "empty_mesh": int(self.empty_mesh)}


def score_field(field: Field, record: BandRecord, resolution: int,
                rng: np.random.Generator) -> ReconstructionScore:
    """
    Mesh a field around the record and compare surface samples with the complete cloud

    An empty mesh scores NaN and is reported rather than raised.
    """
    cloud = surface_cloud(field, record_grid(record, resolution), len(record.complete), rng)
    if cloud is None:
        logger.warning(f"Empty mesh for {record.record_id}")
        return ReconstructionScore(record.record_id, record.class_id, float("nan"),
                                   float("nan"), "none", True)
    distance, solver = emd_with_solver(cloud, record.complete)
    return ReconstructionScore(record.record_id, record.class_id, chamfer(cloud, record.complete),
                               distance, solver, False)


def oracle_score(record: BandRecord, resolution: int, rng: np.random.Generator) -> ReconstructionScore:
    """Score of the true signed distance field; bounds what the grid itself can resolve"""
    state = record.band_state()
    return score_field(lambda x: true_sdf(state, x), record, resolution, rng)


def _score_entry(model: ShapeModel, dataset: Dataset, entry: Dict, resolution: int,
                 seed: int, index: int) -> Dict:
    record = dataset.load(entry)
    rng = np.random.default_rng([seed, index])
    return score_field(model.field(record.partial), record, resolution, rng).row()


def eval_recon(model: ShapeModel, dataset: Dataset, entries: Sequence[Dict], resolution: int,
               seed: int, workers: int = 1) -> pd.DataFrame:
    """
    Per-record reconstruction metrics

    Args:
        model: Encoder and hypernetwork
        dataset: Opened dataset
        entries: Manifest entries to evaluate
        resolution: Marching-cubes grid resolution
        seed: Surface sampling seed, combined with the entry index
        workers: Process count; rows come back in entry order either way

    Returns:
        DataFrame with RECON_COLUMNS, one row per entry
    """
    rows: List[Dict] = []
    if workers <= 1:
        for index, entry in enumerate(tqdm(entries, desc="eval-recon", unit="record")):
            rows.append(_score_entry(model, dataset, entry, resolution, seed, index))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_score_entry, model, dataset, entry, resolution, seed, index)
                       for index, entry in enumerate(entries)]
            rows = [future.result() for future in tqdm(futures, desc="eval-recon", unit="record")]
    return pd.DataFrame(rows, columns=RECON_COLUMNS)


def class_means(frame: pd.DataFrame) -> pd.DataFrame:
    """Mean CD and EMD per class over non-empty meshes, with record counts"""
    if frame.empty:
        return pd.DataFrame(columns=["class", "cd", "emd", "records", "empty_meshes"])
    grouped = frame.groupby("class", sort=True)
    return pd.DataFrame({
        "cd": grouped["cd"].mean(),
        "emd": grouped["emd"].mean(),
        "records": grouped.size(),
        "empty_meshes": grouped["empty_mesh"].sum(),
    }).reset_index()


def holdout_for(meta: Dict, configured: Optional[str]) -> Optional[str]:
    """Held-out class recorded in a checkpoint, falling back to the configured one"""
    return meta.get("holdout_class") or configured
