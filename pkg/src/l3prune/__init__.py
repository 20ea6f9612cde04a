"""Layerwise-loss layer pruning for toy decoder-based text encoders.

The pipeline: profile per-layer contrastive loss, pick the two loss minima
around the depth midpoint, drop trailing layers, finetune low-rank adapters
with a contrastive objective, and evaluate the resulting encoders.
"""

from .adapt import (
    AdaptedModel,
    LoraAdapter,
    TrainConfig,
    TrainCurve,
    attach_lora,
    merge,
    train,
)
from .data import ContrastiveTuple, SynthSpec, Vocabulary, load_jsonl, synth_generate, write_jsonl
from .evaluation import EvalReport, EvalSuite, build_synth_suite, evaluate
from .model import HiddenStates, ModelConfig, TokenBatch, Transformer, count_params, forward_all, init
from .checkpoint import load, save
from .objective import ContrastiveBatch, info_nce, layer_loss
from .pooling import PoolingMask, embed, weighted_mean_pool
from .profiler import L3Selection, LayerLossProfile, l3prune_select, make_variants, profile
from .prune import PruneReport, PruneSpec, prune_layers, sweep

__version__ = "0.1.0"

__all__ = [
    "AdaptedModel",
    "ContrastiveBatch",
    "ContrastiveTuple",
    "EvalReport",
    "EvalSuite",
    "HiddenStates",
    "L3Selection",
    "LayerLossProfile",
    "LoraAdapter",
    "ModelConfig",
    "PoolingMask",
    "PruneReport",
    "PruneSpec",
    "SynthSpec",
    "TokenBatch",
    "TrainConfig",
    "TrainCurve",
    "Transformer",
    "Vocabulary",
    "attach_lora",
    "build_synth_suite",
    "count_params",
    "embed",
    "evaluate",
    "forward_all",
    "info_nce",
    "init",
    "l3prune_select",
    "layer_loss",
    "load",
    "load_jsonl",
    "make_variants",
    "merge",
    "profile",
    "prune_layers",
    "save",
    "sweep",
    "synth_generate",
    "train",
    "weighted_mean_pool",
    "write_jsonl",
]
