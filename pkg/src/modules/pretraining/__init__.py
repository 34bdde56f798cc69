"""Stage I: query sampling and shape losses (the training loop lives in .trainer)"""
from .queries import QueryCounts, SdfBatch, sample_queries
from .losses import (LossTerms, loss_cns, loss_kl, loss_sdf, loss_skel, loss_weight,
                     pretrain_objective, sdf_terms, skeleton_term)

__all__ = ['QueryCounts', 'SdfBatch', 'sample_queries',
           'LossTerms', 'loss_cns', 'loss_kl', 'loss_sdf', 'loss_skel', 'loss_weight',
           'pretrain_objective', 'sdf_terms', 'skeleton_term']
