"""Minimal reverse-mode automatic differentiation over float64 arrays."""

from s2pg_lab.diffcore.jacobian import jacobian, jacobian_frobenius
from s2pg_lab.diffcore.optim import Adam, polyak_update
from s2pg_lab.diffcore.params import ParameterStore, load_checkpoint, save_checkpoint
from s2pg_lab.diffcore.tensor import (
    DiffcoreError,
    DomainError,
    NumericError,
    ShapeError,
    Tape,
    TapeError,
    Tensor,
    add,
    as_tensor,
    backward,
    clip,
    concat,
    detach,
    div,
    exp,
    expand_rows,
    forward_op,
    gaussian_logpdf,
    gaussian_logpdf_logstd,
    linear,
    log,
    matmul,
    mean,
    minimum,
    mul,
    neg,
    relu,
    reshape,
    sigmoid,
    slice_,
    softplus,
    square,
    sub,
    sum,
    tanh,
)

__all__ = [
    "Adam",
    "DiffcoreError",
    "DomainError",
    "NumericError",
    "ParameterStore",
    "ShapeError",
    "Tape",
    "TapeError",
    "Tensor",
    "add",
    "as_tensor",
    "backward",
    "clip",
    "concat",
    "detach",
    "div",
    "exp",
    "expand_rows",
    "forward_op",
    "gaussian_logpdf",
    "gaussian_logpdf_logstd",
    "jacobian",
    "jacobian_frobenius",
    "linear",
    "load_checkpoint",
    "log",
    "matmul",
    "mean",
    "minimum",
    "mul",
    "neg",
    "polyak_update",
    "relu",
    "reshape",
    "save_checkpoint",
    "sigmoid",
    "slice_",
    "softplus",
    "square",
    "sub",
    "sum",
    "tanh",
]
