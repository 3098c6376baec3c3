"""Minimal neural substrate with hand-written forward/backward passes."""
from .hashing import EmbeddingTable, hash_embed, stable_hash
from .layers import (
    AttentionPoolParams,
    DenseLayerStack,
    attention_pool,
    attention_pool_backward,
    attention_pool_forward,
    cross_layer,
    cross_layer_backward,
    cross_layer_forward,
    dense_backward,
    dense_forward,
    sigmoid,
)
from .optim import OptimizerState, RowGrad, adagrad_step
from .gradcheck import GradCheckResult, grad_check
from .checkpoint import load_checkpoint, save_checkpoint

__all__ = [
    "EmbeddingTable", "hash_embed", "stable_hash",
    "DenseLayerStack", "dense_forward", "dense_backward",
    "cross_layer", "cross_layer_forward", "cross_layer_backward",
    "AttentionPoolParams", "attention_pool", "attention_pool_forward",
    "attention_pool_backward", "sigmoid",
    "OptimizerState", "RowGrad", "adagrad_step",
    "GradCheckResult", "grad_check",
    "save_checkpoint", "load_checkpoint",
]
