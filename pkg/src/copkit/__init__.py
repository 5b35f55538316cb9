"""Benchmark construction and Chain-of-Procedure evaluation for visual procedure QA."""

from .core import (
    DOMAINS,
    Permutation,
    Procedure,
    Step,
    VisualState,
    format_step_label,
    load_corpus,
    normalize_text,
    parse_step_label,
    parse_step_list,
    permute,
    save_corpus,
    validate_procedure,
)
from .embeddings import EmbeddingStore, EmbeddingVector, cosine_similarity, load_store, top_k_similar
from .forge import ForgeConfig, Instance, forge_instances, fuse_steps, generate_corpus, mine_negatives, split_dataset
from .gateway import CachedProvider, ModelRequest, ScriptedProvider, usage_report
from .pipeline import PipelineConfig, baseline_direct, clip_variant, run_cop
from .results import COMPLETE_SENTINEL, Prediction, RunResult
from .scripted import oracle_provider
from .templates import TemplateSet

__version__ = "0.1.0"

__all__ = [
    "COMPLETE_SENTINEL", "CachedProvider", "DOMAINS", "EmbeddingStore", "EmbeddingVector", "ForgeConfig",
    "Instance", "ModelRequest", "Permutation", "PipelineConfig", "Prediction", "Procedure", "RunResult",
    "ScriptedProvider", "Step", "TemplateSet", "VisualState", "baseline_direct", "clip_variant",
    "cosine_similarity", "forge_instances", "format_step_label", "fuse_steps", "generate_corpus", "load_corpus",
    "load_store", "mine_negatives", "normalize_text", "oracle_provider", "parse_step_label", "parse_step_list",
    "permute", "run_cop", "save_corpus", "split_dataset", "top_k_similar", "usage_report", "validate_procedure",
]
