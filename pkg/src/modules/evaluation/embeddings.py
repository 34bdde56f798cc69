"""
Embedding Export and Twist Separability
"""

import logging
from dataclasses import dataclass
from typing import Dict, Sequence

import numpy as np
import pandas as pd
from tqdm import tqdm

from src.core.exceptions import ConfigError
from src.modules.data import Dataset
from src.modules.diffcore import ParamVector
from src.modules.networks import EncoderArch, embed

logger = logging.getLogger(__name__)

LABEL_COLUMNS = ["record", "class", "seed", "twist", "stretch", "d_id", "d_csd"]
SEPARABILITY_COLUMNS = ["n_train", "n_test", "train_accuracy", "test_accuracy"]


def z_columns(latent_dim: int):
    return [f"z_{i}" for i in range(latent_dim)]


def export_embeddings(encoder: ParamVector, arch: EncoderArch, dataset: Dataset,
                      entries: Sequence[Dict]) -> pd.DataFrame:
    """
    Mean-mode embeddings of each record's partial cloud with the manifest labels

    Returns:
        One row per entry: z_0..z_{N_z-1} followed by LABEL_COLUMNS
    """
    rows = []
    for entry in tqdm(entries, desc="export-embeddings", unit="record"):
        record = dataset.load(entry)
        z = embed(encoder, record.partial, arch)
        row = dict(zip(z_columns(arch.latent_dim), z.tolist()))
        row.update({"record": entry["record_id"], "class": entry["class_id"],
                    "seed": entry["seed"], "twist": entry["twist"], "stretch": entry["stretch"],
                    "d_id": entry["d_id"], "d_csd": entry["d_csd"]})
        rows.append(row)
    return pd.DataFrame(rows, columns=z_columns(arch.latent_dim) + LABEL_COLUMNS)


@dataclass
class SeparabilityResult:
    n_train: int
    n_test: int
    train_accuracy: float
    test_accuracy: float
    weights: np.ndarray

    def row(self) -> Dict:
        return {"n_train": self.n_train, "n_test": self.n_test,
                "train_accuracy": self.train_accuracy, "test_accuracy": self.test_accuracy}


def _accuracy(features: np.ndarray, labels: np.ndarray, weights: np.ndarray) -> float:
    scores = np.column_stack([features, np.ones(len(features))]) @ weights
    return float(np.mean(np.where(scores >= 0.0, 1.0, -1.0) == labels))


def twist_separability(frame: pd.DataFrame, seed: int = 0,
                       test_fraction: float = 0.3) -> SeparabilityResult:
    """
    Least-squares linear classifier of +1 against -1 twist embeddings

    Records are split by their generation seed, so no configuration appears
    on both sides.

    Args:
        frame: export_embeddings output
        seed: Split seed
        test_fraction: Share of record seeds held out

    Returns:
        SeparabilityResult

    Raises:
        ConfigError: When either twist sign lacks training or test examples
    """
    subset = frame[frame["twist"].isin([1, -1])]
    seeds = np.unique(subset["seed"].to_numpy())
    order = np.random.default_rng(seed).permutation(seeds)
    n_test = max(1, int(round(test_fraction * len(order))))
    test_seeds = set(order[:n_test].tolist())
    is_test = subset["seed"].isin(test_seeds).to_numpy()

    columns = [c for c in frame.columns if c.startswith("z_")]
    features = subset[columns].to_numpy(dtype=np.float64)
    labels = subset["twist"].to_numpy(dtype=np.float64)
    train_x, train_y = features[~is_test], labels[~is_test]
    test_x, test_y = features[is_test], labels[is_test]
    for name, y in (("training", train_y), ("test", test_y)):
        if not (np.any(y > 0) and np.any(y < 0)):
            raise ConfigError(f"separability needs both twist signs in the {name} split")

    design = np.column_stack([train_x, np.ones(len(train_x))])
    weights, *_ = np.linalg.lstsq(design, train_y, rcond=None)
    result = SeparabilityResult(len(train_y), len(test_y), _accuracy(train_x, train_y, weights),
                                _accuracy(test_x, test_y, weights), weights)
    logger.info(f"Twist separability: train={result.train_accuracy:.3f} "
                f"test={result.test_accuracy:.3f} ({result.n_train}/{result.n_test} records)")
    return result
