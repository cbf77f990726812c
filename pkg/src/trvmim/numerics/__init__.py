"""Dense float64 kernels, a reverse-mode tape and a finite-difference oracle."""
from .tensor import (
    GradTape,
    ShapeError,
    TapeUsageError,
    Tensor,
    add,
    as_tensor,
    custom_op,
    div,
    gelu,
    layer_norm,
    matmul,
    mean,
    mul,
    neg,
    reshape,
    silu,
    softmax_lastdim,
    sqrt,
    sub,
    take,
    transpose,
    tsum,
    where,
)
from .gradcheck import finite_diff_grad, gradient, max_rel_error

__all__ = [
    "GradTape", "ShapeError", "TapeUsageError", "Tensor", "add", "as_tensor", "custom_op",
    "div", "gelu", "layer_norm", "matmul", "mean", "mul", "neg", "reshape", "silu",
    "softmax_lastdim", "sqrt", "sub", "take", "transpose", "tsum", "where",
    "finite_diff_grad", "gradient", "max_rel_error",
]
