# planemorph/nn/__init__.py
"""
Network building blocks: tokenizer, plane attention, the registration network
and cost accounting.
"""
from .tokenizer import (
    PatchEmbed,
    HiResMerge,
    positional_encode,
    sinusoidal_encoding_3d,
    merge_blocks,
    pad_amounts,
)
from .attention import PlaneAttention, TransformerBlock, EfficientBlock, PatchMerging, efficient_block
from .network import (
    Encoder,
    Decoder,
    RegistrationNet,
    build_model,
    count_params,
    param_breakdown,
    predict_field,
)
from .cost import attn_cost, cost_table, count_macs, MacReport, STRATEGIES

__all__ = [
    "PatchEmbed",
    "HiResMerge",
    "positional_encode",
    "sinusoidal_encoding_3d",
    "merge_blocks",
    "pad_amounts",
    "PlaneAttention",
    "TransformerBlock",
    "EfficientBlock",
    "PatchMerging",
    "efficient_block",
    "Encoder",
    "Decoder",
    "RegistrationNet",
    "build_model",
    "count_params",
    "param_breakdown",
    "predict_field",
    "attn_cost",
    "cost_table",
    "count_macs",
    "MacReport",
    "STRATEGIES",
]
