"""TrV encoder: config and ablation toggles, init, forward, parameter/MAC accounting."""
from .accounting import block_param_count, count_macs, count_params, ffn_param_count
from .config import (
    ABLATION_ROWS,
    PRESET_TRAINING,
    ConfigError,
    TrVConfig,
    ablation_configs,
    ffn_hidden_dim,
    preset,
)
from .init import (
    init_params,
    init_xavier_normal,
    layer_group,
    no_weight_decay,
    param_shapes,
    rel_pos_index,
    trunc_normal,
)
from .layers import (
    ForwardContext,
    check_params,
    drop_path,
    encoder_forward,
    ffn,
    linear,
    mhsa,
    mlp_ffn,
    sub_params,
    swiglu_ffn,
    trv_block,
)
