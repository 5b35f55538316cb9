"""Embedding-retrieval replacements for phase 1, phase 3, or the whole pipeline."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..core import Procedure, Step
from ..embeddings import EmbeddingStore
from ..errors import CopkitError, GatewayError, MissingEmbedding
from ..forge.synth import text_key
from ..gateway.providers import Provider
from ..results import Prediction, RunResult
from .cop import PipelineConfig, _start, fail, phase1_retrieve, phase2_decompose, run_cop, successor

CLIP_MODES = ("p1", "p3", "full")

StepKey = Callable[[Procedure, Step], str]


def text_step_key(procedure: Procedure, step: Step) -> str:
    """Default lookup: identical step texts share one vector."""
    return text_key(step.text)


def procedure_step_key(procedure: Procedure, step: Step) -> str:
    """Per-procedure lookup, for stores that embed each procedure's steps separately."""
    return f"{procedure.id}::{text_key(step.text)}"


def _vec(store: EmbeddingStore, key: str, what: str) -> np.ndarray:
    if key not in store:
        raise MissingEmbedding(f"no embedding for {what} ({key})")
    v = store.get(key).values
    return v / np.linalg.norm(v)


def step_scores(image_id: str, procedure: Procedure, store: EmbeddingStore,
                key: StepKey = text_step_key) -> list[float]:
    """Cosine between the image and each step text of ``procedure``."""
    img = _vec(store, image_id, f"image {image_id!r}")
    return [float(img @ _vec(store, key(procedure, s), f"step text {s.text[:40]!r}")) for s in procedure.steps]


def clip_select(image_id: str, candidates: Sequence[Procedure], store: EmbeddingStore,
                key: StepKey = text_step_key) -> tuple[int, list[float]]:
    """Candidate position with the highest max step cosine (earliest wins ties)."""
    best = [max(step_scores(image_id, c, store, key)) for c in candidates]
    return int(np.argmax(best)), best


def clip_current(image_id: str, procedure: Procedure, store: EmbeddingStore,
                 key: StepKey = text_step_key) -> tuple[int, list[float]]:
    scores = step_scores(image_id, procedure, store, key)
    return int(np.argmax(scores)) + 1, scores


def clip_variant(instance, mode: str, store: EmbeddingStore, provider: Provider | None = None,
                 config: PipelineConfig | None = None, key: StepKey = text_step_key) -> RunResult:
    """Run a CLIP-style variant. ``full`` never calls the provider."""
    mode = mode.lower()
    if mode not in CLIP_MODES:
        raise ValueError(f"clip mode must be one of {CLIP_MODES}")
    if mode != "full" and provider is None:
        raise ValueError(f"clip:{mode} needs a provider")
    config = config or PipelineConfig()
    name = f"clip:{mode}"
    extra = {"mode": name, "provider": provider.provider_id if provider and mode != "full" else None}
    candidates = [c.procedure for c in instance.candidates]
    image = instance.visual.image_id

    if mode == "p1":
        result = RunResult(instance.id, name, config_hash=config.digest(extra))
        try:
            pos, scores = clip_select(image, candidates, store, key)
        except MissingEmbedding as exc:
            fail(result, exc)
            return result
        sub = PipelineConfig(config.phases - {1} or {3}, config.retrieval_mode, config.score_scale,
                             config.cot, config.templates, config.decoding)
        inner = run_cop(instance, sub, provider, procedure=candidates[pos], mode=name)
        _start(result, "clip_retrieval").parsed = {
            "selected_position": pos, "scores": scores, "selected_procedure_id": candidates[pos].id}
        result.trace.extend(inner.trace)
        result.prediction, result.error = inner.prediction, inner.error
        return result

    result = RunResult(instance.id, name, config_hash=config.digest(extra))
    try:
        if mode == "full":
            pos, scores = clip_select(image, candidates, store, key)
            _start(result, "clip_retrieval").parsed = {
                "selected_position": pos, "scores": scores, "selected_procedure_id": candidates[pos].id}
            working, dmap = candidates[pos], None
        else:
            working, _, _ = phase1_retrieve(instance.visual, candidates, provider, config, _start(result, "phase1"))
            selected = working
            dmap = None
            if 2 in config.phases:
                working, dmap, _ = phase2_decompose(selected, provider, config, _start(result, "phase2"))
        rec = _start(result, "clip_current")
        current, scores = clip_current(image, working, store, key)
        text, nxt, original = successor(working, current, dmap)
        rec.parsed = {"current_step_index": current, "scores": scores, "next_step_index": nxt,
                      "next_original_index": original, "next_step_text": text}
        result.prediction = Prediction(text, working.id, nxt, current)
    except (CopkitError, GatewayError) as exc:
        fail(result, exc)
    return result
