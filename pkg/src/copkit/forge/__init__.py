from .fusion import FUSION_SETTINGS, fuse_steps, identity_alignment, join_step_texts
from .instances import (
    Candidate,
    Corpus,
    ForgeConfig,
    Instance,
    build_instance,
    forge_instances,
    load_instances,
    mine_negatives,
    save_instances,
)
from .splits import EmptyStratum, SplitSpec, split_dataset
from .stats import corpus_stats, format_stats, semantic_overlap
from .synth import PseudoEncoder, SynthCorpus, generate_corpus, text_key

__all__ = [
    "FUSION_SETTINGS", "Candidate", "Corpus", "EmptyStratum", "ForgeConfig", "Instance", "PseudoEncoder",
    "SplitSpec", "SynthCorpus", "build_instance", "corpus_stats", "forge_instances", "format_stats",
    "fuse_steps", "generate_corpus", "identity_alignment", "join_step_texts", "load_instances",
    "mine_negatives", "save_instances", "semantic_overlap", "split_dataset", "text_key",
]
