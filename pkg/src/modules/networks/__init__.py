"""Network definitions: encoder, hypernetwork, implicit SDF network, actor and critics"""
from .layers import MLPArch, bind, mlp_apply, mlp_init
from .encoder import EncoderArch, LatentState, embed, embed_many, encode, encoder_init
from .hypernet import HyperArch, HypoParams, decode_hyper, hyper_init
from .sdf_network import (ShapeModel, marching_cubes_sdf, sdf_field, sdf_gradient_field,
                          sdf_query, siren_arch_for)
from .policy import (ActionSample, PolicyAction, PolicyArch, actor_distribution, actor_init,
                     critic_init, critic_values, policy_act, policy_state, sample_action,
                     to_env_action)
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint

__all__ = ['MLPArch', 'bind', 'mlp_apply', 'mlp_init',
           'EncoderArch', 'LatentState', 'embed', 'embed_many', 'encode', 'encoder_init',
           'HyperArch', 'HypoParams', 'decode_hyper', 'hyper_init',
           'ShapeModel', 'marching_cubes_sdf', 'sdf_field', 'sdf_gradient_field',
           'sdf_query', 'siren_arch_for',
           'ActionSample', 'PolicyAction', 'PolicyArch', 'actor_distribution', 'actor_init',
           'critic_init', 'critic_values', 'policy_act', 'policy_state', 'sample_action',
           'to_env_action',
           'Checkpoint', 'load_checkpoint', 'save_checkpoint']
