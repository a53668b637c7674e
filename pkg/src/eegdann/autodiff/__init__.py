from .tensor import (
    Tensor,
    ShapeError,
    no_grad,
    add,
    sub,
    mul,
    div,
    neg,
    exp,
    log,
    matmul,
    tsum,
    mean,
    reshape,
    transpose,
    swap_last,
    getitem,
    take,
    concat,
    stack,
    expand,
    sigmoid,
    tanh,
    gelu,
    leaky_relu,
    softmax,
    dropout,
    layer_norm,
    batch_norm,
    mse_loss,
    bce_with_logits,
    grl,
)
from .gradcheck import grad_check, grad_check_param
from .optim import Adam, AdamState, adam_step
from . import checkpoint
