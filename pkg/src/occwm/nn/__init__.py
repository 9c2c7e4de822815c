from .checkpoint import CheckpointError, file_sha256, load_checkpoint, save_checkpoint
from .gradcheck import finite_diff_check
from .lora import LowRankAdapter, lora_apply, lora_merge
from .optim import AdamW
from .tensor import (
    Tape,
    Tensor,
    add,
    as_tensor,
    attention,
    binary_cross_entropy_with_logits,
    concat,
    conv2d,
    cross_entropy,
    detach,
    gather_rows,
    gelu,
    layer_norm,
    log_softmax,
    masked_pool_max,
    matmul,
    mul,
    no_grad,
    ones_param,
    param,
    randn_param,
    relu,
    reshape,
    select_columns,
    sigmoid,
    softmax,
    softplus,
    stack_cols,
    ste_quantize_bridge,
    swap_last,
    texp,
    tlog,
    tmax,
    tmean,
    transpose,
    tsum,
    ttanh,
    upsample2x,
    zeros_param,
)
