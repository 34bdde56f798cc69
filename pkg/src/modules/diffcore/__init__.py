"""Differentiation core: tape, parameter vectors, sine networks, Adam"""
from .tensor import Tape, Tensor, forward, backward
from .params import LayoutEntry, ParamLayout, ParamVector, unpack
from .siren import SirenArch, SirenOutput, siren_init, siren_value, siren_with_derivs
from .optim import Adam, AdamState, adam_step

__all__ = ['Tape', 'Tensor', 'forward', 'backward',
           'LayoutEntry', 'ParamLayout', 'ParamVector', 'unpack',
           'SirenArch', 'SirenOutput', 'siren_init', 'siren_value', 'siren_with_derivs',
           'Adam', 'AdamState', 'adam_step']
