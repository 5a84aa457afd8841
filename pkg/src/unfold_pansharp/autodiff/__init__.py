from .tensor import (
    Tensor,
    add,
    batch_norm,
    clip_symmetric,
    concat,
    conv2d,
    conv_transpose2d,
    div,
    exp,
    is_grad_enabled,
    l1_loss,
    linear_map,
    matmul,
    maximum,
    mean,
    mse_loss,
    mul,
    no_grad,
    pad,
    relu,
    reshape,
    softmax,
    softplus,
    sub,
    sum,
    window_apply,
    window_logits,
)
from .gradcheck import grad_check, grad_check_params
from .optim import Adam, AdamState, adam_step
