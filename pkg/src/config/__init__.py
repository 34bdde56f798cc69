"""Configuration package"""
from .settings import *
from .run_config import (ArchitectureConfig, BudgetConfig, ContrastiveConfig, DatasetConfig,
                         LossWeights, PretrainConfig, RunConfig, SacConfig, TaskConfig)
