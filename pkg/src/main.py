"""
BandINR - Main Entry Point
Implicit shape pretraining and policy fine-tuning for elastic bands
"""

import argparse
import logging
import sys
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import List, Optional

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.config import RunConfig, settings
from src.config.run_config import FINETUNE_VARIANTS, POLICIES, PRETRAIN_VARIANTS, SCALES, SPLITS, STAGES
from src.core.exceptions import BandINRError, ConfigError
from src.core.pipeline_manager import PipelineManager

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def setup_logging(level: str = settings.LOG_LEVEL, log_file: Path = settings.LOG_FILE):
    """Rotating file log at `level`, console at WARNING"""
    log_file = Path(log_file)
    log_file.parent.mkdir(parents=True, exist_ok=True)

    file_handler = RotatingFileHandler(log_file, maxBytes=settings.LOG_MAX_BYTES,
                                       backupCount=settings.LOG_BACKUP_COUNT)
    file_handler.setLevel(level)
    file_handler.setFormatter(logging.Formatter(LOG_FORMAT))

    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setLevel(logging.WARNING)
    console_handler.setFormatter(logging.Formatter(LOG_FORMAT))

    root_logger = logging.getLogger()
    root_logger.setLevel(level)
    root_logger.addHandler(file_handler)
    root_logger.addHandler(console_handler)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bandinr", description=__doc__.strip().splitlines()[1])
    parser.add_argument("stage", choices=STAGES, help="pipeline stage to run")
    parser.add_argument("--config", type=Path, help="JSON run configuration")
    parser.add_argument("--seed", type=int, help="master seed")
    parser.add_argument("--out", help="output directory (dataset directory for gen-data)")
    parser.add_argument("--dataset", help="dataset directory")
    parser.add_argument("--checkpoint", help="checkpoint directory to load")
    parser.add_argument("--record", help="record file for extract-mesh")
    parser.add_argument("--scale", choices=SCALES, help="implicit network width preset")
    parser.add_argument("--preset", choices=settings.TASK_PRESETS, help="task preset")
    parser.add_argument("--trials", type=int, help="evaluation trials for eval-policy")
    parser.add_argument("--policy", choices=POLICIES, help="learned policy or random baseline")
    parser.add_argument("--split", choices=SPLITS, help="record split for eval-recon")
    parser.add_argument("--holdout", help="held-out class id")
    parser.add_argument("--pretrain-variant", choices=PRETRAIN_VARIANTS)
    parser.add_argument("--finetune-variant", choices=FINETUNE_VARIANTS)
    parser.add_argument("--steps", type=int, help="Stage I step budget")
    parser.add_argument("--episodes", type=int, help="Stage II episode budget")
    parser.add_argument("--workers", type=int, help="processes for gen-data and eval-recon")
    parser.add_argument("--log-level", default=settings.LOG_LEVEL,
                        choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"])
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Settings defaults, then the JSON file, then command-line flags"""
    config = RunConfig.load(args.config) if args.config else RunConfig()
    out, dataset = args.out, args.dataset
    if args.stage == "gen-data":
        out, dataset = None, args.out or args.dataset
    return config.with_overrides(**{
        "stage": args.stage,
        "seed": args.seed,
        "out": out,
        "dataset": dataset,
        "checkpoint": args.checkpoint,
        "record": args.record,
        "policy": args.policy,
        "split": args.split,
        "finetune_variant": args.finetune_variant,
        "architecture.scale": args.scale,
        "task.preset": args.preset,
        "budget.eval_trials": args.trials,
        "budget.pretrain_steps": args.steps,
        "budget.finetune_episodes": args.episodes,
        "pretrain.variant": args.pretrain_variant,
        "pretrain.holdout_class": args.holdout,
        "data.workers": args.workers,
    })


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point; returns 0 on success, 1 on a runtime error, 2 on a configuration error"""
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)
    logger = logging.getLogger(__name__)

    try:
        config = resolve_config(args)
        logger.info("=" * 60)
        logger.info(f"{settings.PROJECT_NAME} - {config.stage}")
        logger.info(f"Version: {settings.VERSION}")
        logger.info(f"Config hash: {config.config_hash()}  Seed: {config.seed}")
        logger.info("=" * 60)

        outputs = PipelineManager(config).run()
        for name, path in outputs.items():
            print(f"{name}: {path}")

    except ConfigError as e:
        logger.error(f"Configuration error: {e}", exc_info=True)
        print(f"bandinr: configuration error: {e}", file=sys.stderr)
        return 2
    except BandINRError as e:
        logger.error(f"{type(e).__name__}: {e}", exc_info=True)
        print(f"bandinr: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    except Exception as e:
        logger.error(f"Fatal error: {e}", exc_info=True)
        print(f"bandinr: fatal error: {e}", file=sys.stderr)
        return 1

    return 0


if __name__ == "__main__":
    sys.exit(main())
