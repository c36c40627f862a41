"""Position-aware kernel self-attention for sequential recommendation."""

from .attention import causal_attention, kernel_attention, rope_rotate, vanilla_qkv_oracle
from .kernel import (
    DEFAULT_MODE,
    ABLATION_MODES,
    KernelMode,
    extra_param_count,
    kernel_matrix,
    materialize_lower,
    materialize_upper,
)
from .model import Model, ModelConfig, ce_loss, predict_topk
from .tensor import Parameter, Tensor, grad_check

__version__ = "0.1.0"
