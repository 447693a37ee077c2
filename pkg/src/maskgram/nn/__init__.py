from .tensor import Tensor, backward, grad_map, no_grad
from .layers import forward_transformer, sinusoidal_pe
from .losses import masked_cross_entropy, mse_loss
from .optim import AdamState, adam_step
from .checkpoint import load_records, save_records

__all__ = [
    "Tensor", "backward", "grad_map", "no_grad",
    "forward_transformer", "sinusoidal_pe",
    "masked_cross_entropy", "mse_loss",
    "AdamState", "adam_step",
    "load_records", "save_records",
]
