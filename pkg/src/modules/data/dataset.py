"""
Dataset Generation - class grid of simulated bands, record files and manifest
"""

import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Union

import numpy as np
from tqdm import tqdm

from src.config import DatasetConfig, RunConfig
from src.core.exceptions import ConfigError, LayoutMismatchError
from src.modules.pretraining.queries import QueryCounts
from .records import BandRecord, make_record

logger = logging.getLogger(__name__)

MANIFEST_FILE = "manifest.json"
MANIFEST_FORMAT = "bandinr-dataset"
MANIFEST_VERSION = 1


def class_id_for(d_id: float, d_csd: float) -> str:
    """Directory name of a (d_ID, d_CSD) class, diameters in millimeters"""
    return f"class_{round(d_id * 1000):03d}_{round(d_csd * 1000):02d}"


def file_sha256(path: Union[str, Path]) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


@dataclass(frozen=True)
class RecordTask:
    """Everything a worker needs to write one record"""
    root: str
    class_id: str
    record_index: int
    d_id: float
    d_csd: float
    twist: int
    stretch: float
    seed: int
    counts: QueryCounts
    cloud_points: int
    n_nodes: int

    @property
    def record_id(self) -> str:
        return f"{self.class_id}/rec_{self.record_index:05d}"

    @property
    def relative_path(self) -> str:
        return f"{self.record_id}.rec"


def plan_records(data: DatasetConfig, seed: int, root: Union[str, Path]) -> List[RecordTask]:
    """
    Labels and seeds for every record of the class grid

    Each record draws its twist and stretch from its own seed sequence
    (master seed, class index, record index), so the plan does not depend on
    worker scheduling.
    """
    counts = QueryCounts(data.query_on, data.query_near, data.query_off, data.medial_points)
    tasks = []
    class_index = 0
    for d_id in data.inside_diameters:
        for d_csd in data.cross_section_diameters:
            class_id = class_id_for(d_id, d_csd)
            for record_index in range(data.records_per_class):
                sequence = np.random.SeedSequence([seed, class_index, record_index])
                rng = np.random.default_rng(sequence)
                twist = int(rng.integers(-data.max_twist, data.max_twist + 1))
                stretch = float(rng.uniform(*data.stretch_range))
                record_seed = int(sequence.generate_state(1)[0])
                tasks.append(RecordTask(str(root), class_id, record_index, float(d_id),
                                        float(d_csd), twist, stretch, record_seed, counts,
                                        data.cloud_points, data.n_nodes))
            class_index += 1
    return tasks


def _write_record(task: RecordTask) -> Dict:
    record = make_record(task.d_id, task.d_csd, task.twist, task.stretch, task.seed,
                         task.class_id, task.record_id, task.counts, task.cloud_points,
                         task.n_nodes)
    path = Path(task.root) / task.relative_path
    path.parent.mkdir(parents=True, exist_ok=True)
    record.save(path)
    return {"path": task.relative_path, "sha256": file_sha256(path),
            "record_id": task.record_id, "class_id": task.class_id,
            "seed": task.seed, "twist": task.twist, "stretch": task.stretch,
            "d_id": task.d_id, "d_csd": task.d_csd}


def gen_data(config: RunConfig, out: Optional[Union[str, Path]] = None) -> Path:
    """
    Write the record files of the configured grid and their manifest

    Args:
        config: Run configuration (data section, seed)
        out: Dataset directory, config.dataset when omitted

    Returns:
        The dataset directory
    """
    root = Path(out or config.dataset)
    root.mkdir(parents=True, exist_ok=True)
    tasks = plan_records(config.data, config.seed, root)
    workers = max(1, config.data.workers)
    logger.info(f"Generating {len(tasks)} records into {root} with {workers} worker(s)")

    entries = []
    if workers == 1:
        for task in tqdm(tasks, desc="gen-data", unit="rec"):
            entries.append(_write_record(task))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_write_record, task) for task in tasks]
            for future in tqdm(as_completed(futures), total=len(futures), desc="gen-data",
                               unit="rec"):
                entries.append(future.result())
    entries.sort(key=lambda e: e["record_id"])

    classes = {}
    for entry in entries:
        info = classes.setdefault(entry["class_id"], {"class_id": entry["class_id"],
                                                      "d_id": entry["d_id"],
                                                      "d_csd": entry["d_csd"], "records": 0})
        info["records"] += 1
    manifest = {
        "format": MANIFEST_FORMAT, "version": MANIFEST_VERSION,
        "config_hash": config.config_hash(), "seed": config.seed,
        "header": config.header(stage="gen-data"),
        "classes": [classes[k] for k in sorted(classes)],
        "counts": {"classes": len(classes), "records": len(entries)},
        "records": entries,
    }
    (root / MANIFEST_FILE).write_text(json.dumps(manifest, indent=2, sort_keys=True))
    logger.info(f"Dataset written: {len(classes)} classes, {len(entries)} records")
    return root


class Dataset:
    """Read access to a generated dataset through its manifest"""

    def __init__(self, root: Union[str, Path], manifest: Dict):
        self.root = Path(root)
        self.manifest = manifest
        self.entries: List[Dict] = list(manifest["records"])
        self._by_hash = {e["sha256"]: e for e in self.entries}
        logger.info(f"Dataset opened at {self.root} ({len(self.entries)} records, "
                    f"{len(self.class_ids)} classes)")

    @classmethod
    def open(cls, root: Union[str, Path]) -> "Dataset":
        root = Path(root)
        path = root / MANIFEST_FILE
        if not path.is_file():
            raise ConfigError(f"{root} is not a dataset directory (no {MANIFEST_FILE})")
        manifest = json.loads(path.read_text())
        if manifest.get("format") != MANIFEST_FORMAT:
            raise ConfigError(f"{path} is not a {MANIFEST_FORMAT} manifest")
        return cls(root, manifest)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def class_ids(self) -> List[str]:
        return [c["class_id"] for c in self.manifest["classes"]]

    def select(self, split: str = "all", holdout_class: Optional[str] = None) -> List[Dict]:
        """
        Manifest entries of a split

        'seen' excludes the held-out class, 'unseen' keeps only it, 'all'
        keeps everything.
        """
        if split == "all" or holdout_class is None:
            if split == "unseen":
                raise ConfigError("the unseen split needs a holdout class")
            return list(self.entries)
        if holdout_class not in self.class_ids:
            raise ConfigError(f"holdout class '{holdout_class}' is not in the dataset")
        if split == "seen":
            return [e for e in self.entries if e["class_id"] != holdout_class]
        if split == "unseen":
            return [e for e in self.entries if e["class_id"] == holdout_class]
        raise ConfigError(f"unknown split '{split}'")

    def load(self, entry: Dict, verify: bool = True) -> BandRecord:
        path = self.root / entry["path"]
        if verify and file_sha256(path) != entry["sha256"]:
            raise LayoutMismatchError(f"{path} does not match its manifest hash")
        return BandRecord.load(path)

    def load_all(self, entries: Iterable[Dict], verify: bool = True) -> List[BandRecord]:
        return [self.load(e, verify) for e in entries]

    def audit_holdout(self, trained_on: Sequence[str], holdout_class: Optional[str]):
        """
        Check that no training hash belongs to the held-out class

        Raises:
            ConfigError: When a held-out record or an unknown hash was trained on
        """
        if holdout_class is None:
            return
        unknown = [h for h in trained_on if h not in self._by_hash]
        if unknown:
            raise ConfigError(f"{len(unknown)} trained-on hashes are not in this dataset")
        leaked = [self._by_hash[h]["record_id"] for h in trained_on
                  if self._by_hash[h]["class_id"] == holdout_class]
        if leaked:
            raise ConfigError(f"held-out class {holdout_class} was trained on: "
                              f"{', '.join(leaked[:5])}")
        logger.info(f"Holdout audit passed for {holdout_class} ({len(trained_on)} hashes)")
