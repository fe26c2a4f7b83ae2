from .core import (
    Parameter,
    Tensor,
    as_tensor,
    get_default_dtype,
    no_grad,
    precision,
    set_default_dtype,
)
from .gradcheck import GradcheckReport, gradcheck
from .ops import (
    IGNORE,
    add,
    concat,
    conv1d,
    dropout,
    elementwise,
    embedding,
    gelu,
    gru,
    index,
    layernorm,
    lstm,
    masked_fill,
    matmul,
    max,
    mean,
    mul,
    relu,
    reshape,
    sigmoid,
    softmax,
    softmax_cross_entropy,
    sub,
    sum,
    tanh,
    transpose,
)
