"""Res-BRNet: a residual and spatial-boundary CNN for brain tumour MRI classification, on numpy."""

from .autograd import Tape, Tensor, backward, create, grad_check
from .model import ResBRNetConfig, build_res_brnet, canonical_config, desk_config, forward
from .optim import LrSchedule, RMSpropState, lr_at, rmsprop_step

__version__ = "0.1.0"
