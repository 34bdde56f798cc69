"""
BandINR - Run Configuration
Per-run settings loaded from a JSON file, merged over the module defaults in
settings.py and then over command-line flags
"""

import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

from . import settings
from src.core.exceptions import ConfigError

logger = logging.getLogger(__name__)

STAGES = ("gen-data", "pretrain", "finetune", "eval-recon", "eval-policy",
          "extract-mesh", "export-embeddings", "eval-separability")
SCALES = ("desk", "full")
PRETRAIN_VARIANTS = ("full", "no-skel")
FINETUNE_VARIANTS = ("full", "no-contrastive", "no-pretrain")
SPLITS = ("seen", "unseen", "all")
POLICIES = ("learned", "random")


@dataclass
class ArchitectureConfig:
    """Network shapes; `scale` picks the implicit network width"""
    scale: str = "desk"
    latent_dim: int = settings.LATENT_DIM
    encoder_point_widths: Tuple[int, ...] = settings.ENCODER_POINT_WIDTHS
    encoder_head_widths: Tuple[int, ...] = settings.ENCODER_HEAD_WIDTHS
    hyper_hidden_width: int = settings.HYPER_HIDDEN_WIDTH
    hyper_hidden_layers: int = settings.HYPER_HIDDEN_LAYERS
    hyper_output_scale: float = settings.HYPER_OUTPUT_SCALE
    sdf_hidden_layers: int = settings.SDF_HIDDEN_LAYERS
    sdf_width: Optional[int] = None  # None: 32 for desk, 128 for full
    first_omega: float = settings.SIREN_FIRST_OMEGA
    hidden_omega: float = settings.SIREN_HIDDEN_OMEGA
    input_scale: float = settings.SDF_INPUT_SCALE
    policy_hidden: Tuple[int, ...] = settings.POLICY_HIDDEN

    def resolved_sdf_width(self) -> int:
        if self.sdf_width is not None:
            return self.sdf_width
        return settings.SDF_WIDTH_FULL if self.scale == "full" else settings.SDF_WIDTH_DESK


@dataclass
class LossWeights:
    """Stage I loss weights"""
    skel: float = settings.LAMBDA_SKEL
    kl: float = settings.LAMBDA_KL
    weight: float = settings.LAMBDA_WEIGHT
    cns: float = settings.LAMBDA_CNS
    sdf_alpha: float = settings.SDF_ALPHA
    skel_eps: float = settings.SKEL_EPS


@dataclass
class PretrainConfig:
    variant: str = "full"
    lr: float = settings.ADAM_LR_PRETRAIN
    records_per_step: int = settings.PRETRAIN_BATCH_RECORDS
    validation_interval: int = settings.VALIDATION_INTERVAL
    validation_records: int = settings.VALIDATION_RECORDS
    checkpoint_interval: int = settings.CHECKPOINT_INTERVAL
    log_interval: int = settings.LOG_INTERVAL
    holdout_class: Optional[str] = None


@dataclass
class SacConfig:
    gamma: float = settings.SAC_GAMMA
    tau_target: float = settings.SAC_TARGET_TAU
    target_entropy: Optional[float] = None  # None: -action dimension
    lr: float = settings.ADAM_LR_FINETUNE
    init_alpha: float = settings.SAC_INIT_ALPHA
    batch_size: int = settings.SAC_BATCH_SIZE
    utd_ratio: int = settings.SAC_UTD_RATIO
    warmup_steps: int = settings.SAC_WARMUP_STEPS
    buffer_capacity: int = settings.BUFFER_CAPACITY_EPISODES
    delta: float = settings.SUCCESS_DELTA
    reward_alpha: float = settings.REWARD_ALPHA

    def resolved_target_entropy(self) -> float:
        return -float(settings.ACTION_DIM) if self.target_entropy is None else self.target_entropy


@dataclass
class ContrastiveConfig:
    top_m: int = settings.CONTRASTIVE_TOP_M
    negatives: int = settings.CONTRASTIVE_NEGATIVES
    momentum: float = settings.CONTRASTIVE_MOMENTUM
    tau: float = settings.CONTRASTIVE_TAU
    weight: float = settings.CONTRASTIVE_WEIGHT
    episodes_per_batch: int = settings.CONTRASTIVE_EPISODES_PER_BATCH
    retrieval_points: int = settings.CONTRASTIVE_RETRIEVAL_POINTS


@dataclass
class TaskConfig:
    preset: str = "stretch-place"
    max_steps: int = settings.EPISODE_MAX_STEPS
    max_twist: int = 1


@dataclass
class DatasetConfig:
    inside_diameters: Tuple[float, ...] = settings.BAND_INSIDE_DIAMETERS
    cross_section_diameters: Tuple[float, ...] = settings.BAND_CROSS_SECTION_DIAMETERS
    records_per_class: int = settings.RECORDS_PER_CLASS
    max_twist: int = settings.MAX_TWIST
    stretch_range: Tuple[float, float] = settings.STRETCH_RANGE
    n_nodes: int = settings.BAND_NODES
    cloud_points: int = settings.CLOUD_POINTS
    query_on: int = settings.QUERY_ON_SURFACE
    query_near: int = settings.QUERY_NEAR_SURFACE
    query_off: int = settings.QUERY_OFF_SURFACE
    medial_points: int = settings.MEDIAL_AXIS_POINTS
    workers: int = settings.PROCESSING_WORKERS


@dataclass
class BudgetConfig:
    pretrain_steps: int = settings.PRETRAIN_STEPS
    finetune_episodes: int = settings.FINETUNE_EPISODES
    eval_trials: int = settings.EVAL_TRIALS
    mc_resolution: int = settings.MC_RESOLUTION


@dataclass
class RunConfig:
    """
    Everything one CLI invocation needs

    Attributes:
        stage: Pipeline stage to run
        seed: Master seed, recorded in every output
        out: Output directory
        dataset: Dataset directory (read by every stage but gen-data)
        checkpoint: Checkpoint directory to load
        split: Record split for evaluation stages
        policy: 'learned' or 'random' for eval-policy
        finetune_variant: Stage II ablation
        record: Record file for extract-mesh
    """
    stage: str = "pretrain"
    seed: int = 0
    out: str = str(settings.DATA_DIR / "runs")
    dataset: str = str(settings.DATASET_DIR)
    checkpoint: Optional[str] = None
    split: str = "all"
    policy: str = "learned"
    finetune_variant: str = "full"
    record: Optional[str] = None
    architecture: ArchitectureConfig = field(default_factory=ArchitectureConfig)
    losses: LossWeights = field(default_factory=LossWeights)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    sac: SacConfig = field(default_factory=SacConfig)
    contrastive: ContrastiveConfig = field(default_factory=ContrastiveConfig)
    task: TaskConfig = field(default_factory=TaskConfig)
    data: DatasetConfig = field(default_factory=DatasetConfig)
    budget: BudgetConfig = field(default_factory=BudgetConfig)

    # ==================== Construction ====================

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunConfig":
        return _build(cls, data, "config")

    @classmethod
    def load(cls, path) -> "RunConfig":
        """Read a JSON config file; missing keys take their defaults"""
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}")
        if not isinstance(data, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
        logger.info(f"Loaded run config from {path}")
        return cls.from_dict(data)

    def with_overrides(self, **overrides) -> "RunConfig":
        """
        Apply flat overrides; dotted keys reach nested sections
        (``{"task.preset": "untwist"}``). None values are skipped.
        """
        data = self.to_dict()
        for key, value in overrides.items():
            if value is None:
                continue
            target = data
            *sections, leaf = key.split(".")
            for section in sections:
                if section not in target or not isinstance(target[section], dict):
                    raise ConfigError(f"unknown config section '{section}' in override '{key}'")
                target = target[section]
            if leaf not in target:
                raise ConfigError(f"unknown config key '{key}'")
            target[leaf] = value
        return RunConfig.from_dict(data)

    # ==================== Serialization ====================

    def to_dict(self) -> Dict[str, Any]:
        return json.loads(json.dumps(dataclasses.asdict(self)))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON of the resolved config"""
        return hashlib.sha256(self.to_json().encode("utf-8")).hexdigest()

    def header(self, **extra) -> str:
        """Provenance line embedded in every output file"""
        fields = {"config_hash": self.config_hash(), "seed": self.seed, "stage": self.stage}
        fields.update(extra)
        return " ".join(f"{k}={v}" for k, v in fields.items())

    # ==================== Validation ====================

    def validate(self, stage: Optional[str] = None):
        """
        Check invariants for a stage

        Raises:
            ConfigError: On the first violated invariant
        """
        stage = stage or self.stage
        _require(stage in STAGES, f"unknown stage '{stage}'")
        _require(self.architecture.scale in SCALES, f"scale must be one of {SCALES}")
        _require(self.task.preset in settings.TASK_PRESETS,
                 f"preset must be one of {settings.TASK_PRESETS}")
        _require(self.pretrain.variant in PRETRAIN_VARIANTS,
                 f"pretrain variant must be one of {PRETRAIN_VARIANTS}")
        _require(self.finetune_variant in FINETUNE_VARIANTS,
                 f"finetune variant must be one of {FINETUNE_VARIANTS}")
        _require(self.split in SPLITS, f"split must be one of {SPLITS}")
        _require(self.policy in POLICIES, f"policy must be one of {POLICIES}")
        _require(0.0 < self.sac.gamma < 1.0, "sac.gamma must lie in (0, 1)")
        _require(self.sac.delta > 0.0, "sac.delta must be positive")
        _require(0.0 <= self.contrastive.momentum <= 1.0, "contrastive.momentum must lie in [0, 1]")
        _require(self.contrastive.tau > 0.0, "contrastive.tau must be positive")
        _require(self.contrastive.negatives >= 1, "contrastive.negatives must be >= 1")
        _require(self.contrastive.top_m >= 1, "contrastive.top_m must be >= 1")
        _require(self.task.max_steps >= 1, "task.max_steps must be >= 1")
        for name in ("skel", "kl", "weight", "cns"):
            _require(getattr(self.losses, name) >= 0.0, f"losses.{name} must be non-negative")
        _require(self.losses.sdf_alpha > 0.0 and self.losses.skel_eps > 0.0,
                 "losses.sdf_alpha and losses.skel_eps must be positive")
        _require(self.budget.eval_trials >= 0, "budget.eval_trials must be non-negative")
        _require(self.data.records_per_class >= 1, "data.records_per_class must be >= 1")

        if stage != "gen-data":
            _require(Path(self.dataset).is_dir() or stage in ("eval-policy", "finetune"),
                     f"dataset directory {self.dataset} does not exist")
        needs_checkpoint = {
            "finetune": self.finetune_variant != "no-pretrain",
            "eval-recon": True,
            "eval-policy": self.policy == "learned" and self.budget.eval_trials > 0,
            "extract-mesh": True,
            "export-embeddings": True,
            "eval-separability": True,
        }.get(stage, False)
        if needs_checkpoint:
            _require(self.checkpoint is not None and Path(self.checkpoint).is_dir(),
                     f"stage {stage} needs an existing --checkpoint directory")
        if stage == "extract-mesh":
            _require(self.record is not None and Path(self.record).is_file(),
                     "extract-mesh needs an existing --record file")


def _require(condition: bool, message: str):
    if not condition:
        raise ConfigError(message)


def _build(cls, data: Dict[str, Any], where: str):
    """Instantiate a config dataclass from a dict, rejecting unknown keys"""
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be an object")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {', '.join(unknown)}")
    kwargs = {}
    for name, value in data.items():
        default = known[name].default_factory() if known[name].default_factory is not dataclasses.MISSING \
            else known[name].default
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value, f"{where}.{name}")
        elif isinstance(default, tuple) and isinstance(value, list):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    return cls(**kwargs)
