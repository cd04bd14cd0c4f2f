"""A small reverse-mode differentiation engine over float32 numpy arrays."""

from .core import (
    DTYPE,
    ConfigError,
    DiffArray,
    DimensionError,
    NumericError,
    Parameter,
    StateError,
    Tape,
    active_tape,
    backward,
    debug_enabled,
    set_debug,
)
from .ops import (
    add,
    affine,
    concat,
    conv1d,
    cross_entropy,
    div,
    dropout,
    exp,
    gaussian_noise,
    getitem,
    gradient_redirect,
    layer_norm,
    log,
    log_softmax,
    matmul,
    mean,
    mul,
    neg,
    relu,
    reshape,
    saturating_sigmoid,
    sigmoid,
    sinusoidal_positions,
    softmax,
    sqrt,
    square,
    stop_gradient,
    sub,
    sum,
    swapaxes,
    take,
    tanh,
    transpose,
    where,
)
from .optim import AdamConfig, adam_step, clip_by_global_norm, learning_rate
from .params import Conv1d, Dense, LayerNorm, ParamStore, glorot_uniform
from .rng import RngState
