"""Minimal reverse-mode differentiation over float64 numpy arrays."""

from . import ops
from .checkpoint import load as load_checkpoint, save as save_checkpoint
from .gradcheck import GradCheckReport, grad_check
from .layers import MLP, ConvBlock, Dense, Norm
from .ops import concat, linear, mish, reduce, sigmoid
from .optim import adamw_step, one_cycle_lr
from .params import Param, ParamStore
from .tensor import DecisionLog, Tape, Tensor, as_tensor, decide, decisions, no_grad

__all__ = [
    "ops", "Tensor", "Tape", "as_tensor", "no_grad", "decide", "decisions", "DecisionLog",
    "ParamStore", "Param", "Dense", "Norm", "ConvBlock", "MLP",
    "linear", "mish", "sigmoid", "reduce", "concat",
    "adamw_step", "one_cycle_lr", "grad_check", "GradCheckReport",
    "save_checkpoint", "load_checkpoint",
]
