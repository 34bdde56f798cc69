"""Evaluation: reconstruction metrics, policy success rates, embeddings and separability"""
from .reconstruction import (RECON_COLUMNS, ReconstructionScore, class_means, eval_recon,
                             holdout_for, load_shape_model, oracle_score, record_grid, score_field)
from .policy_eval import (SUMMARY_COLUMNS, TRIAL_COLUMNS, PolicyReport, eval_policy, rollout,
                          wilson_interval)
from .embeddings import (LABEL_COLUMNS, SEPARABILITY_COLUMNS, SeparabilityResult,
                         export_embeddings, twist_separability, z_columns)

__all__ = ['RECON_COLUMNS', 'ReconstructionScore', 'class_means', 'eval_recon', 'holdout_for',
           'load_shape_model', 'oracle_score', 'record_grid', 'score_field',
           'SUMMARY_COLUMNS', 'TRIAL_COLUMNS', 'PolicyReport', 'eval_policy', 'rollout',
           'wilson_interval',
           'LABEL_COLUMNS', 'SEPARABILITY_COLUMNS', 'SeparabilityResult', 'export_embeddings',
           'twist_separability', 'z_columns']
