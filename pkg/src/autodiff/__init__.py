# Differentiable computation core: tape, neural blocks, Adam, gradient checks.
from .tensor import (
    Tape,
    Tensor,
    as_tensor,
    concat,
    einsum,
    exp,
    l2_normalize,
    matmul,
    recording,
    sigmoid,
    softmax,
    sqrt,
    stack,
    tanh,
)
from .module import (
    LSTMCell,
    LayerNorm,
    Linear,
    MLP,
    Module,
    MultiHeadSelfAttention,
    Parameter,
    attention_pool,
    layer_norm,
    linear,
    lstm_cell,
    multi_head_self_attention,
)
from .optim import Adam, clip_grad_norm, global_grad_norm
from .gradcheck import GradCheckReport, analytic_gradients, grad_check
