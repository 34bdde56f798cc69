"""
Stage I Trainer - joint Adam optimization of the encoder and hypernetwork
"""

import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
from tqdm import tqdm

from src.config import LossWeights, RunConfig, settings
from src.core.exceptions import ConfigError, NonFiniteError, TrainingDivergedError
from src.modules.data import BandRecord, Dataset, write_table
from src.modules.diffcore import Adam, Tape, backward
from src.modules.geometry import GridSpec, chamfer, surface_cloud
from src.modules.networks import ShapeModel, save_checkpoint
from .losses import TERMS, LossTerms, pretrain_objective

logger = logging.getLogger(__name__)

LOSS_COLUMNS = ["step", "total", *TERMS, "z_gap"]
VALIDATION_COLUMNS = ["step", "cd", "empty_meshes"]
MAGNITUDE_SPREAD = 100.0


@dataclass
class PretrainResult:
    model: ShapeModel
    checkpoint: Path
    loss_curve: List[Dict] = field(default_factory=list)
    validation: List[Dict] = field(default_factory=list)
    trained_on: List[str] = field(default_factory=list)


def effective_weights(weights: LossWeights, variant: str) -> LossWeights:
    """The skeleton-free variant drops the medial-axis term"""
    if variant == "no-skel":
        return dataclasses.replace(weights, skel=0.0)
    return weights


def split_entries(entries: List[Dict], validation_records: int,
                  rng: np.random.Generator):
    """
    (train, validation) entries; a pool too small to split validates on the training records
    """
    order = rng.permutation(len(entries))
    shuffled = [entries[i] for i in order]
    if len(shuffled) > 2 * validation_records:
        return shuffled[validation_records:], shuffled[:validation_records]
    return shuffled, shuffled[:max(1, validation_records)]


def reconstruction_cd(model: ShapeModel, record: BandRecord, resolution: int,
                      rng: np.random.Generator) -> Optional[float]:
    """Chamfer distance between the decoded surface and the complete cloud, None for an empty mesh"""
    lower, upper = record.complete.min(axis=0), record.complete.max(axis=0)
    grid = GridSpec.around(lower, upper, resolution, margin=record.d_csd)
    cloud = surface_cloud(model.field(record.partial), grid, len(record.complete), rng)
    if cloud is None:
        return None
    return chamfer(cloud, record.complete)


def log_term_magnitudes(terms: LossTerms, weights: LossWeights):
    """Weighted term sizes against the SDF term"""
    weighted = terms.weighted(weights)
    reference = max(abs(weighted["sdf"]), 1e-12)
    logger.info("Term magnitudes at step 0: " +
                ", ".join(f"{k}={v:.4g}" for k, v in weighted.items()))
    for name, value in weighted.items():
        if value != 0.0 and not (1.0 / MAGNITUDE_SPREAD <= abs(value) / reference <= MAGNITUDE_SPREAD):
            logger.warning(f"Weighted term '{name}' is {abs(value) / reference:.3g}x the SDF term")


class PretrainTrainer:
    """
    Stage I training loop

    One step samples records, evaluates the weighted loss on a fresh tape,
    averages the encoder and hypernetwork gradients and applies Adam.
    """

    def __init__(self, dataset: Dataset, weights: LossWeights, config: RunConfig,
                 out: Path, model: Optional[ShapeModel] = None):
        self.dataset = dataset
        self.config = config
        self.out = Path(out)
        self.variant = config.pretrain.variant
        self.weights = effective_weights(weights, self.variant)
        self.rng = np.random.default_rng(config.seed)

        holdout = config.pretrain.holdout_class
        pool = dataset.select("seen" if holdout else "all", holdout)
        if not pool:
            raise ConfigError("pretraining needs a non-empty dataset")
        self.train_entries, self.validation_entries = split_entries(
            pool, config.pretrain.validation_records, self.rng)
        self.trained_on = sorted(e["sha256"] for e in self.train_entries)
        dataset.audit_holdout(self.trained_on, holdout)

        self.model = model or ShapeModel.create(config.architecture, self.rng)
        self.encoder_opt = Adam(self.model.encoder, lr=config.pretrain.lr)
        self.hypernet_opt = Adam(self.model.hypernet, lr=config.pretrain.lr)
        self.loss_rows: List[Dict] = []
        self.validation_rows: List[Dict] = []
        self.step = 0
        logger.info(f"Stage I trainer initialized (variant={self.variant}, "
                    f"train={len(self.train_entries)}, validation={len(self.validation_entries)}, "
                    f"holdout={holdout})")

    def checkpoint_meta(self) -> Dict:
        return {
            "stage": "pretrain",
            "architecture": dataclasses.asdict(self.config.architecture),
            "config_hash": self.config.config_hash(),
            "seed": self.config.seed,
            "step": self.step,
            "variant": self.variant,
            "holdout_class": self.config.pretrain.holdout_class,
            "trained_on": self.trained_on,
        }

    def save(self, directory: Path) -> Path:
        params = {"encoder": self.model.encoder, "hypernet": self.model.hypernet}
        return save_checkpoint(directory, params, self.checkpoint_meta(), self.rng)

    def train_step(self) -> Dict:
        """One optimizer step over records_per_step sampled records"""
        n = self.config.pretrain.records_per_step
        encoder_grad = np.zeros(len(self.model.encoder))
        hypernet_grad = np.zeros(len(self.model.hypernet))
        rows = []
        for _ in range(n):
            entry = self.train_entries[self.rng.integers(len(self.train_entries))]
            record = self.dataset.load(entry)
            terms = self._evaluate(record)
            if self.step == 0 and not rows:
                log_term_magnitudes(terms, self.weights)
            grads = backward(terms.total.tape, terms.total)
            encoder_grad += grads["encoder"].data
            hypernet_grad += grads["hypernet"].data
            rows.append(terms.values())

        self.model.encoder = self.encoder_opt.step(self.model.encoder.like(encoder_grad / n))
        self.model.hypernet = self.hypernet_opt.step(self.model.hypernet.like(hypernet_grad / n))
        row = {"step": self.step}
        row.update({k: float(np.mean([r[k] for r in rows])) for k in LOSS_COLUMNS[1:]})
        self.loss_rows.append(row)
        self.step += 1
        return row

    def _evaluate(self, record: BandRecord) -> LossTerms:
        tape = Tape()
        last = self.loss_rows[-1] if self.loss_rows else {}
        try:
            terms = pretrain_objective(self.model.encoder, self.model.hypernet, record.partial,
                                       record.complete, record.queries,
                                       self.model.encoder_arch, self.model.hyper_arch,
                                       self.weights, self.rng, tape)
        except NonFiniteError as e:
            raise TrainingDivergedError(
                f"non-finite value at step {self.step} on {record.record_id}: {e}",
                {"step": self.step, "record": record.record_id, "last": last})
        if not terms.is_finite():
            raise TrainingDivergedError(
                f"non-finite loss at step {self.step} on {record.record_id}",
                {"step": self.step, "record": record.record_id, "terms": terms.values(),
                 "last": last})
        return terms

    def validate(self) -> Dict:
        """Mean reconstruction CD over the validation records"""
        rng = np.random.default_rng([self.config.seed, self.step])
        values, empty = [], 0
        for entry in self.validation_entries:
            cd = reconstruction_cd(self.model, self.dataset.load(entry),
                                   settings.VALIDATION_MC_RESOLUTION, rng)
            if cd is None:
                empty += 1
            else:
                values.append(cd)
        row = {"step": self.step, "cd": float(np.mean(values)) if values else float("nan"),
               "empty_meshes": empty}
        self.validation_rows.append(row)
        logger.info(f"Validation at step {self.step}: CD={row['cd']:.5f} ({empty} empty meshes)")
        return row

    def run(self, steps: int) -> PretrainResult:
        cfg = self.config.pretrain
        header = self.config.header(stage="pretrain", variant=self.variant,
                                    holdout=cfg.holdout_class)
        progress = tqdm(range(steps), desc="pretrain", unit="step")
        for _ in progress:
            row = self.train_step()
            progress.set_postfix(total=f"{row['total']:.4f}", z_gap=f"{row['z_gap']:.3f}")
            if cfg.log_interval and self.step % cfg.log_interval == 0:
                logger.info(f"Step {self.step}: total={row['total']:.5f} sdf={row['sdf']:.5f} "
                            f"skel={row['skel']:.4f} kl={row['kl']:.4f} cns={row['cns']:.5f}")
            if cfg.validation_interval and self.step % cfg.validation_interval == 0:
                self.validate()
            if cfg.checkpoint_interval and self.step % cfg.checkpoint_interval == 0:
                self.save(self.out / "checkpoints" / f"step_{self.step:06d}")

        if not self.validation_rows or self.validation_rows[-1]["step"] != self.step:
            self.validate()
        checkpoint = self.save(self.out / "checkpoint")
        write_table(self.loss_rows, self.out / "loss_curve.csv", header, LOSS_COLUMNS)
        write_table(self.validation_rows, self.out / "validation.csv", header, VALIDATION_COLUMNS)
        logger.info(f"Stage I finished after {self.step} steps")
        return PretrainResult(self.model, checkpoint, self.loss_rows, self.validation_rows,
                              self.trained_on)


def pretrain_run(dataset: Dataset, weights: LossWeights, config: RunConfig,
                 out: Optional[Path] = None, steps: Optional[int] = None) -> PretrainResult:
    """
    Train the encoder and hypernetwork

    Args:
        dataset: Opened dataset
        weights: Loss weights (the variant may zero the skeleton weight)
        config: Run configuration
        out: Output directory, config.out when omitted
        steps: Step count, config.budget.pretrain_steps when omitted

    Returns:
        PretrainResult with the final model and curves
    """
    trainer = PretrainTrainer(dataset, weights, config, Path(out or config.out))
    return trainer.run(config.budget.pretrain_steps if steps is None else steps)
