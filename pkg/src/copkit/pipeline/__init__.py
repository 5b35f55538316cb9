from .clip import CLIP_MODES, clip_current, clip_select, clip_variant, procedure_step_key, text_step_key
from .cop import (
    ABLATIONS,
    PipelineConfig,
    align_decomposition,
    baseline_direct,
    direct_predict,
    phase1_retrieve,
    phase2_decompose,
    phase3_predict,
    run_cop,
)

__all__ = [
    "ABLATIONS", "CLIP_MODES", "PipelineConfig", "align_decomposition", "baseline_direct", "clip_current",
    "clip_select", "clip_variant", "direct_predict", "phase1_retrieve", "phase2_decompose", "phase3_predict",
    "procedure_step_key", "text_step_key",
    "run_cop",
]
