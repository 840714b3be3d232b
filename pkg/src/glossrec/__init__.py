"""Desk-scale continuous sign-language gloss recognition.

Gloss-sequence VAE pretraining, visual-to-textual transfer through an
adapter, CTC alignment, and contrastive cross-modal training, built on a
small reverse-mode tensor engine so every loss and gradient can be checked
against independent oracles.
"""

from .autodiff import Tensor, grad_check, log_sum_exp, matmul, no_grad, softmax_last

__all__ = [
    "Tensor",
    "grad_check",
    "log_sum_exp",
    "matmul",
    "no_grad",
    "softmax_last",
]

__version__ = "0.1.0"
