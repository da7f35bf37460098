from .tensor import (
    NonFiniteError,
    Tensor,
    as_tensor,
    concat,
    conv2d,
    cross_entropy,
    log_softmax,
    mse,
)
from .layers import (
    FLATTEN,
    RELU,
    LayerSpec,
    accuracy,
    affine_norm,
    conv,
    forward,
    init_params,
    kaiming_init,
    linear,
    mlp_arch,
    num_params,
    param_layout,
    predict,
)
from .optim import SGD, AdamW, cosine_anneal, make_optimizer
from .gradcheck import GradCheckReport, grad_check, numeric_grad, rel_error
