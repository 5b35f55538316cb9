"""Chain-of-Procedure: retrieve the procedure, decompose it, locate the current step."""

from __future__ import annotations

import hashlib
import json
import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

from ..core import Procedure, Step, VisualState, parse_step_label, parse_step_list, render_steps
from ..errors import (
    CopkitError,
    GatewayError,
    IndexOutOfRange,
    NoStepLabel,
    UnparseableCurrentStep,
    UnparseableSelection,
)
from ..gateway.providers import Decoding, ModelRequest, Provider
from ..results import COMPLETE_SENTINEL, PhaseRecord, Prediction, RunResult
from ..templates import TemplateSet, render_candidates

log = logging.getLogger(__name__)

RETRIEVAL_MODES = ("single_shot", "per_candidate_score")
ABLATIONS = (frozenset({1}), frozenset({1, 2}), frozenset({1, 3}), frozenset({1, 2, 3}))

_INT = re.compile(r"-?\d+")
_WORD = re.compile(r"[a-z0-9]+")


@dataclass
class PipelineConfig:
    phases: frozenset = frozenset({1, 2, 3})
    retrieval_mode: str = "single_shot"
    score_scale: int = 10
    cot: bool = False
    templates: TemplateSet = field(default_factory=TemplateSet.default)
    decoding: Decoding = field(default_factory=Decoding)

    def __post_init__(self):
        self.phases = frozenset(int(p) for p in self.phases)
        if not self.phases or not self.phases <= {1, 2, 3}:
            raise ValueError(f"phases must be a non-empty subset of {{1, 2, 3}}, got {sorted(self.phases)}")
        if self.retrieval_mode not in RETRIEVAL_MODES:
            raise ValueError(f"retrieval_mode must be one of {RETRIEVAL_MODES}")
        if self.score_scale < 1:
            raise ValueError("score_scale must be >= 1")

    @property
    def name(self) -> str:
        if self.phases == {1, 2, 3}:
            return "cop"
        return "ablation:" + ",".join(str(p) for p in sorted(self.phases))

    def to_dict(self) -> dict:
        return {
            "phases": sorted(self.phases),
            "retrieval_mode": self.retrieval_mode,
            "score_scale": self.score_scale,
            "cot": self.cot,
            "templates": self.templates.digest(),
            "decoding": self.decoding.to_dict(),
        }

    def digest(self, extra: dict | None = None) -> str:
        payload = {**self.to_dict(), **(extra or {})}
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


def _ask(provider: Provider, record: PhaseRecord, instruction: str, image_ids: Sequence[str],
         config: PipelineConfig) -> str:
    request = ModelRequest(instruction, tuple(image_ids), config.decoding)
    response = provider.complete(request)
    record.record(request, response)
    return response.text


def _parse_int(text: str, last: bool = False) -> int | None:
    found = _INT.findall(text)
    if not found:
        return None
    return int(found[-1] if last else found[0])


# Phase 1 -------------------------------------------------------------------

def _score_candidates(visual, candidates, provider, config, record) -> list[int | None]:
    scores: list[int | None] = []
    for proc in candidates:
        prompt = config.templates.render("phase1_score", STEPS=render_steps(proc.texts), MAX=str(config.score_scale))
        value = _parse_int(_ask(provider, record, prompt, [visual.image_id], config), last=True)
        scores.append(value if value is not None and 0 <= value <= config.score_scale else None)
    return scores


def phase1_retrieve(visual: VisualState, candidates: Sequence[Procedure], provider: Provider,
                    config: PipelineConfig, record: PhaseRecord | None = None) -> tuple[Procedure, list | None, PhaseRecord]:
    """Select the candidate procedure that matches the image.

    ``single_shot`` asks once for an instruction id and falls back to
    per-candidate scoring if the answer is not a valid id. Score ties go to the
    earliest candidate.
    """
    if not candidates:
        raise ValueError("phase 1 needs at least one candidate")
    record = record if record is not None else PhaseRecord("phase1")
    scores = None
    position = None
    if config.retrieval_mode == "single_shot":
        prompt = config.templates.render("phase1_retrieval", STEPS=render_candidates([c.texts for c in candidates]))
        answer = _parse_int(_ask(provider, record, prompt, [visual.image_id], config))
        if answer is not None and 1 <= answer <= len(candidates):
            position = answer - 1
        else:
            record.warnings.append("unparseable instruction id; falling back to per-candidate scoring")
    if position is None:
        scores = _score_candidates(visual, candidates, provider, config, record)
        valid = [(s, -i) for i, s in enumerate(scores) if s is not None]
        if not valid:
            raise UnparseableSelection("no candidate received a parseable score")
        position = -max(valid)[1]
    selected = candidates[position]
    record.parsed = {
        "mode": config.retrieval_mode,
        "selected_position": position,
        "selected_procedure_id": selected.id,
        "scores": scores,
    }
    return selected, scores, record


# Phase 2 -------------------------------------------------------------------

def _tokens(text: str) -> Counter:
    return Counter(_WORD.findall(text.lower()))


def _match_score(child: Counter, parent: Counter) -> tuple[float, float]:
    if not child or not parent:
        return 0.0, 0.0
    common = sum((child & parent).values())
    containment = common / sum(child.values())
    recall = common / sum(parent.values())
    f1 = 2 * containment * recall / (containment + recall) if common else 0.0
    return containment, f1


def align_decomposition(original: Sequence[str], decomposed: Sequence[str],
                        min_recall: float = 0.5) -> list[int] | None:
    """Map each decomposed step to its source step (1-based), or None if invalid.

    The mapping is non-decreasing and gives every source step a contiguous,
    non-empty run of children. A child may only map to a source step that
    contains as much of it as any other source step does, and each run must
    recover at least ``min_recall`` of its source step's tokens. Among the
    mappings that satisfy this, the one with the highest total token F1 wins.
    """
    n, m = len(decomposed), len(original)
    if n < m or m == 0:
        return None
    parents = [_tokens(t) for t in original]
    children = [_tokens(t) for t in decomposed]
    gain: list[list[float | None]] = []
    for child in children:
        scores = [_match_score(child, p) for p in parents]
        best = max(c for c, _ in scores)
        gain.append([f1 if best > 0 and c == best else None for c, f1 in scores])

    def run_score(start: int, end: int, j: int) -> float | None:
        total, covered = 0.0, Counter()
        for i in range(start, end):
            if gain[i][j] is None:
                return None
            total += gain[i][j]
            covered |= children[i]
        if sum((covered & parents[j]).values()) < min_recall * sum(parents[j].values()):
            return None
        return total

    neg = float("-inf")
    # value[j][i]: best total with parents 0..j-1 covered by exactly the first i children
    value = [[neg] * (n + 1) for _ in range(m + 1)]
    back = [[-1] * (n + 1) for _ in range(m + 1)]
    value[0][0] = 0.0
    for j in range(1, m + 1):
        for i in range(j, n - (m - j) + 1):
            for start in range(j - 1, i):
                if value[j - 1][start] == neg:
                    continue
                score = run_score(start, i, j - 1)
                if score is not None and value[j - 1][start] + score > value[j][i]:
                    value[j][i], back[j][i] = value[j - 1][start] + score, start
    if value[m][n] == neg:
        return None
    mapping = [0] * n
    end = n
    for j in range(m, 0, -1):
        start = back[j][end]
        mapping[start:end] = [j] * (end - start)
        end = start
    return mapping


def phase2_decompose(procedure: Procedure, provider: Provider, config: PipelineConfig,
                     record: PhaseRecord | None = None) -> tuple[Procedure, dict[int, int], PhaseRecord]:
    """Split composite steps. Invalid answers leave the procedure unchanged."""
    if not procedure.steps:
        raise ValueError("cannot decompose an empty procedure")
    record = record if record is not None else PhaseRecord("phase2")
    identity = {s.index: s.index for s in procedure.steps}
    prompt = config.templates.render("phase2_decompose", STEPS=render_steps(procedure.texts))
    raw = _ask(provider, record, prompt, [], config)
    items = parse_step_list(raw)

    mapping = None
    if not items:
        record.warnings.append("no step_X lines in decomposition; keeping original procedure")
    elif [i for i, _ in items] != list(range(1, len(items) + 1)) or any(not c for _, c in items):
        record.warnings.append("decomposition is not a contiguous step_1..step_M list; keeping original procedure")
    else:
        mapping = align_decomposition(procedure.texts, [c for _, c in items])
        if mapping is None:
            record.warnings.append("decomposition reorders, drops or invents steps; keeping original procedure")

    if mapping is None:
        record.parsed = {"accepted": False, "steps": procedure.texts, "map": identity}
        return procedure, identity, record

    steps = []
    for (idx, text), parent in zip(items, mapping):
        src = procedure.step(parent)
        unchanged = mapping.count(parent) == 1
        steps.append(Step(idx, text, src.image_refs if unchanged else (), src.atomic or not unchanged))
    dmap = {idx: parent for (idx, _), parent in zip(items, mapping)}
    record.parsed = {"accepted": True, "steps": [s.text for s in steps], "map": dmap}
    return procedure.with_steps(steps), dmap, record


# Phase 3 -------------------------------------------------------------------

def successor(procedure: Procedure, current: int, dmap: dict[int, int] | None = None) -> tuple[str, int | None, int | None]:
    """(next text, next working index, next original index) after ``current``."""
    if current == len(procedure.steps):
        return COMPLETE_SENTINEL, None, None
    nxt = current + 1
    original = dmap.get(nxt, nxt) if dmap else nxt
    return procedure.step(nxt).text, nxt, original


def phase3_predict(visual: VisualState, procedure: Procedure, provider: Provider, config: PipelineConfig,
                   dmap: dict[int, int] | None = None,
                   record: PhaseRecord | None = None) -> tuple[Prediction, PhaseRecord]:
    """Ask for the current step, then resolve the next step locally."""
    record = record if record is not None else PhaseRecord("phase3")
    prompt = config.templates.render("phase3_current", STEPS=render_steps(procedure.texts))
    raw = _ask(provider, record, prompt, [visual.image_id], config)
    try:
        current, _ = parse_step_label(raw)
    except NoStepLabel as exc:
        raise UnparseableCurrentStep(str(exc)) from exc
    if not 1 <= current <= len(procedure.steps):
        raise IndexOutOfRange(f"step_{current} outside 1..{len(procedure.steps)}")
    text, nxt, original = successor(procedure, current, dmap)
    record.parsed = {
        "current_step_index": current,
        "current_original_index": (dmap or {}).get(current, current),
        "next_step_index": nxt,
        "next_original_index": original,
        "next_step_text": text,
    }
    return Prediction(text, procedure.id, nxt, current), record


# Direct next-step prompt ---------------------------------------------------------

def direct_predict(visual: VisualState, procedures: Sequence[Procedure], provider: Provider,
                   config: PipelineConfig, record: PhaseRecord | None = None) -> tuple[Prediction, PhaseRecord]:
    """One baseline-template request; the last ``step_X:`` line is the answer."""
    record = record if record is not None else PhaseRecord("direct")
    name = "baseline" if config.cot else "baseline_zero_shot"
    prompt = config.templates.render(name, STEPS=render_candidates([p.texts for p in procedures]))
    raw = _ask(provider, record, prompt, [visual.image_id], config)
    index, content = parse_step_label(raw)
    selected = procedures[0].id if len(procedures) == 1 else None
    if not content:
        if selected is None or not 1 <= index <= len(procedures[0].steps):
            raise NoStepLabel(f"step_{index} has no content and cannot be resolved")
        content = procedures[0].step(index).text
    record.parsed = {"next_step_index": index, "next_step_text": content}
    return Prediction(content, selected, index, None), record


# Whole pipeline ------------------------------------------------------------

def _start(result: RunResult, phase: str) -> PhaseRecord:
    rec = PhaseRecord(phase)
    result.trace.append(rec)
    return rec


def _run_phases(result: RunResult, visual: VisualState, candidates: Sequence[Procedure], provider: Provider,
                config: PipelineConfig, procedure: Procedure | None) -> None:
    try:
        if 1 in config.phases:
            selected, _, _ = phase1_retrieve(visual, candidates, provider, config, _start(result, "phase1"))
        elif procedure is not None:
            selected = procedure
        else:
            raise ValueError("phases without 1 need an explicitly provided procedure")
        working, dmap = selected, None
        if 2 in config.phases:
            working, dmap, _ = phase2_decompose(selected, provider, config, _start(result, "phase2"))
        if 3 in config.phases:
            prediction, _ = phase3_predict(visual, working, provider, config, dmap, _start(result, "phase3"))
        else:
            prediction, _ = direct_predict(visual, [working], provider, config, _start(result, "direct"))
        prediction.selected_procedure_id = selected.id
        result.prediction = prediction
    except (CopkitError, GatewayError) as exc:
        fail(result, exc)


def fail(result: RunResult, exc: Exception) -> None:
    """Record ``exc`` against the phase that was running."""
    rec = result.trace[-1] if result.trace else _start(result, "setup")
    log.info("%s failed in %s: %s", result.instance_id, rec.phase, exc)
    result.error = f"{rec.phase}:{type(exc).__name__}"
    rec.warnings.append(f"{type(exc).__name__}: {exc}")


def run_cop(instance, config: PipelineConfig, provider: Provider, procedure: Procedure | None = None,
            mode: str | None = None) -> RunResult:
    """Run the configured phase subset on one instance.

    Subsets without phase 3 finish with a direct next-step prompt on the
    selected (and possibly decomposed) procedure. Errors are recorded on the
    result with the phase that raised them.
    """
    mode = mode or config.name
    result = RunResult(instance.id, mode, config_hash=config.digest({"mode": mode, "provider": provider.provider_id}))
    candidates = [c.procedure for c in instance.candidates]
    _run_phases(result, instance.visual, candidates, provider, config, procedure)
    return result


def baseline_direct(instance, provider: Provider, config: PipelineConfig | None = None, cot: bool | None = None) -> RunResult:
    config = config or PipelineConfig()
    if cot is not None and cot != config.cot:
        config = PipelineConfig(config.phases, config.retrieval_mode, config.score_scale, cot,
                                config.templates, config.decoding)
    mode = "baseline-cot" if config.cot else "baseline"
    result = RunResult(instance.id, mode,
                       config_hash=config.digest({"mode": mode, "provider": provider.provider_id}))
    try:
        result.prediction, _ = direct_predict(instance.visual, [c.procedure for c in instance.candidates],
                                              provider, config, _start(result, "direct"))
    except (CopkitError, GatewayError) as exc:
        fail(result, exc)
    return result
