from .layers import (BilinearUpsample, Conv2d, Flatten, Layer, LayerNorm, Linear, MaxPool2,
                     ReLU, Sequential, Softmax, bilinear_matrix, cross_entropy, glorot_uniform,
                     matmul, matmul_backward, softmax, softmax_backward)
from .optim import Adam, AdamState, adam_step
from .gradcheck import GradCheckReport, grad_check
from .checkpoint import load_checkpoint, save_checkpoint

__all__ = [
    "Adam", "AdamState", "BilinearUpsample", "Conv2d", "Flatten", "GradCheckReport", "Layer",
    "LayerNorm", "Linear", "MaxPool2", "ReLU", "Sequential", "Softmax", "adam_step",
    "bilinear_matrix", "cross_entropy", "glorot_uniform", "grad_check", "load_checkpoint",
    "matmul", "matmul_backward", "save_checkpoint", "softmax", "softmax_backward",
]
