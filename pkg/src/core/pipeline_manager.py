"""
Pipeline Manager
Dispatches a RunConfig to its stage and writes the stage outputs
"""

import logging
from pathlib import Path
from typing import Callable, Dict, Tuple

from src.config import ArchitectureConfig, RunConfig
from src.core.exceptions import ConfigError
from src.modules.data import BandRecord, Dataset, gen_data, write_table
from src.modules.diffcore import ParamVector
from src.modules.evaluation import (RECON_COLUMNS, SEPARABILITY_COLUMNS, SUMMARY_COLUMNS,
                                    TRIAL_COLUMNS, class_means, eval_policy, eval_recon,
                                    export_embeddings, holdout_for, load_shape_model, record_grid,
                                    twist_separability)
from src.modules.finetuning import finetune_run, load_agent
from src.modules.networks import EncoderArch, ShapeModel, load_checkpoint
from src.modules.pretraining.trainer import pretrain_run

logger = logging.getLogger(__name__)


def load_encoder(directory, fallback: ArchitectureConfig) -> Tuple[ParamVector, EncoderArch]:
    """Query encoder of a Stage I or Stage II checkpoint"""
    checkpoint = load_checkpoint(directory)
    if "encoder" not in checkpoint:
        raise ConfigError(f"checkpoint {directory} holds no encoder")
    architecture = fallback
    if "architecture" in checkpoint.meta:
        architecture = RunConfig.from_dict({"architecture": checkpoint.meta["architecture"]}).architecture
    arch, _ = ShapeModel.archs_for(architecture)
    if checkpoint["encoder"].layout != arch.layout():
        raise ConfigError(f"checkpoint {directory}: encoder layout does not match its architecture")
    return checkpoint["encoder"], arch


class PipelineManager:
    """Runs one stage of the pipeline for a validated RunConfig"""

    def __init__(self, config: RunConfig):
        config.validate()
        self.config = config
        self.out = Path(config.out)
        self.stages: Dict[str, Callable[[], Dict[str, Path]]] = {
            "gen-data": self.gen_data,
            "pretrain": self.pretrain,
            "finetune": self.finetune,
            "eval-recon": self.eval_recon,
            "eval-policy": self.eval_policy,
            "extract-mesh": self.extract_mesh,
            "export-embeddings": self.export_embeddings,
            "eval-separability": self.eval_separability,
        }
        logger.info(f"Pipeline manager initialized (stage={config.stage}, "
                    f"config_hash={config.config_hash()[:12]}, seed={config.seed})")

    def run(self) -> Dict[str, Path]:
        """
        Execute the configured stage

        Returns:
            Output files by name
        """
        outputs = self.stages[self.config.stage]()
        for name, path in outputs.items():
            logger.info(f"Output {name}: {path}")
        return outputs

    def _header(self, **extra) -> str:
        return self.config.header(**extra)

    def _dataset(self) -> Dataset:
        return Dataset.open(self.config.dataset)

    # ==================== Data and training ====================

    def gen_data(self) -> Dict[str, Path]:
        root = gen_data(self.config)
        return {"dataset": root, "manifest": root / "manifest.json"}

    def pretrain(self) -> Dict[str, Path]:
        result = pretrain_run(self._dataset(), self.config.losses, self.config, self.out)
        return {"checkpoint": result.checkpoint, "loss_curve": self.out / "loss_curve.csv",
                "validation": self.out / "validation.csv"}

    def finetune(self) -> Dict[str, Path]:
        result = finetune_run(self.config, self.out)
        return {"checkpoint": result.checkpoint, "reward_curve": self.out / "reward_curve.csv"}

    # ==================== Evaluation ====================

    def eval_recon(self) -> Dict[str, Path]:
        config = self.config
        model, meta = load_shape_model(config.checkpoint, config.architecture)
        dataset = self._dataset()
        holdout = holdout_for(meta, config.pretrain.holdout_class)
        if holdout is not None and "trained_on" in meta:
            dataset.audit_holdout(meta["trained_on"], holdout)
        entries = dataset.select(config.split, holdout)
        frame = eval_recon(model, dataset, entries, config.budget.mc_resolution, config.seed,
                           config.data.workers)
        header = self._header(split=config.split, holdout=holdout,
                              resolution=config.budget.mc_resolution)
        metrics = write_table(frame, self.out / "recon_metrics.csv", header, RECON_COLUMNS)
        means = write_table(class_means(frame), self.out / "recon_class_means.csv", header)
        logger.info(f"Reconstruction ({config.split}): mean CD={frame['cd'].mean():.5f} "
                    f"EMD={frame['emd'].mean():.5f} over {len(frame)} records")
        return {"metrics": metrics, "class_means": means}

    def eval_policy(self) -> Dict[str, Path]:
        config = self.config
        n_trials = config.budget.eval_trials
        agent = None
        if config.policy == "learned" and n_trials > 0:
            agent = load_agent(config.checkpoint, config)
        report = eval_policy(config, agent, n_trials)
        header = self._header(policy=config.policy, preset=config.task.preset)
        trials = write_table(report.trials, self.out / "policy_trials.csv", header, TRIAL_COLUMNS)
        summary = write_table([report.summary], self.out / "policy_summary.csv", header,
                              SUMMARY_COLUMNS)
        return {"trials": trials, "summary": summary}

    def extract_mesh(self) -> Dict[str, Path]:
        config = self.config
        model, _ = load_shape_model(config.checkpoint, config.architecture)
        record = BandRecord.load(config.record)
        mesh = model.extract_mesh(record.partial, record_grid(record, config.budget.mc_resolution),
                                  reproject=True)
        if mesh.is_empty:
            logger.warning(f"Decoded field of {record.record_id} has no zero crossing; "
                           f"writing an empty mesh")
        self.out.mkdir(parents=True, exist_ok=True)
        path = self.out / f"{Path(config.record).stem}.obj"
        mesh.save_obj(path, header=self._header(record=record.record_id))
        return {"mesh": path}

    def _embeddings(self):
        encoder, arch = load_encoder(self.config.checkpoint, self.config.architecture)
        dataset = self._dataset()
        return export_embeddings(encoder, arch, dataset, dataset.select("all"))

    def export_embeddings(self) -> Dict[str, Path]:
        frame = self._embeddings()
        path = write_table(frame, self.out / "embeddings.csv", self._header())
        return {"embeddings": path}

    def eval_separability(self) -> Dict[str, Path]:
        result = twist_separability(self._embeddings(), seed=self.config.seed)
        path = write_table([result.row()], self.out / "separability.csv", self._header(),
                           SEPARABILITY_COLUMNS)
        return {"separability": path}
