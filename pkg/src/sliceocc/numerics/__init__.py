from .conv import conv2d, conv3d
from .gradcheck import GradCheckReport, grad_check, rel_error
from .nn import Conv2d, Conv3d, LayerNorm, Linear, Module, Rng, param
from .sampling import bilinear_sample, gather2d, gather3d, trilinear_sample, weighted_gather2d
from .tensor import (NonFiniteError, NumericsError, Tensor, add, as_tensor, clamp_min, concat,
                     div, einsum, exp, layer_norm, log, matmul, mean, mul, no_grad, relu,
                     reshape, segment_sum, softmax, sqrt, stack, sub, take, transpose, tsum)

__all__ = [
    "Conv2d", "Conv3d", "GradCheckReport", "LayerNorm", "Linear", "Module", "NonFiniteError",
    "NumericsError", "Rng", "Tensor", "add", "as_tensor", "bilinear_sample", "clamp_min",
    "concat", "conv2d", "conv3d", "div", "einsum", "exp", "gather2d", "gather3d", "grad_check",
    "layer_norm", "log", "matmul", "mean", "mul", "no_grad", "param", "rel_error", "relu",
    "reshape", "segment_sum", "softmax", "sqrt", "stack", "sub", "take", "transpose",
    "trilinear_sample", "tsum", "weighted_gather2d",
]
