"""Scripted stand-ins for a vision-language model, built from instance gold data.

``oracle_provider`` answers every pipeline prompt correctly. With
``rigged=True`` its direct next-step answers are only right when the step it
sees in the prompt has exactly the image's granularity, which is the failure
mode decomposition is meant to fix.
"""

from __future__ import annotations

from typing import Sequence

from .core import parse_step_list, render_steps
from .gateway.providers import ModelRequest, Rule, ScriptedProvider
from .subtasks import SubTaskItem

MARKERS = {
    "phase1_retrieval": "## Task: Identify which instruction manual the image belongs to.",
    "phase1_score": "## Task: Rate how well the instruction below matches",
    "phase2_decompose": "## Task: Identify and split the combined steps",
    "phase3_current": "## Task: Identify which step in the instruction the input image belongs to.",
    "direct": "## Instruction Manuals:",
}


def _steps_section(instruction: str) -> str:
    # the rendered steps always precede the first bullet of the instructions
    return instruction.split("\n- ", 1)[0]


def _blocks(instruction: str) -> list[list[str]]:
    """Candidate step lists from a prompt; one list when there are no ``###`` headers."""
    instruction = _steps_section(instruction)
    if "### Instruction" not in instruction:
        return [[c for _, c in parse_step_list(instruction)]]
    out = []
    for chunk in instruction.split("### Instruction")[1:]:
        out.append([c for _, c in parse_step_list(chunk)])
    return out


class _Knowledge:
    def __init__(self, instances):
        self.by_image = {inst.image: inst for inst in instances}
        self.splits: dict[str, list[str]] = {}
        for inst in instances:
            pos = inst.positive
            for i, src in pos.alignment.items():
                self.splits[pos.procedure.step(i).text] = [inst.source_steps[j - 1] for j in src]

    def coverage(self, inst, text: str) -> set[int]:
        atoms = list(inst.source_steps)
        if text in atoms:
            return {atoms.index(text) + 1}
        parts = self.splits.get(text)
        if parts and all(p in atoms for p in parts):
            return {atoms.index(p) + 1 for p in parts}
        return set()

    def positive_block(self, inst, blocks: list[list[str]]) -> int | None:
        target = inst.positive.procedure.texts
        for i, b in enumerate(blocks):
            if b == target:
                return i
        for i, b in enumerate(blocks):
            if b and all(self.coverage(inst, t) for t in b):
                return i
        return None

    def covering_step(self, inst, texts: list[str]) -> int | None:
        for k, text in enumerate(texts, start=1):
            if inst.after_step in self.coverage(inst, text):
                return k
        return None


def oracle_provider(instances: Sequence, rigged: bool = False, provider_id: str | None = None,
                    **kwargs) -> ScriptedProvider:
    kb = _Knowledge(instances)

    def respond(request: ModelRequest) -> str:
        text = request.instruction
        inst = kb.by_image.get(request.image_ids[0]) if request.image_ids else None
        if MARKERS["phase2_decompose"] in text:
            steps = [c for _, c in parse_step_list(_steps_section(text))]
            out = [part for s in steps for part in kb.splits.get(s, [s])]
            return render_steps(out)
        if inst is None:
            return "I cannot tell."
        blocks = _blocks(text)
        if MARKERS["phase1_retrieval"] in text:
            pos = kb.positive_block(inst, blocks)
            return str(pos + 1) if pos is not None else "unknown"
        if MARKERS["phase1_score"] in text:
            return "10" if kb.positive_block(inst, blocks) == 0 else "1"
        if MARKERS["phase3_current"] in text:
            k = kb.covering_step(inst, blocks[0])
            return f"step_{k}: {blocks[0][k - 1]}" if k else "step_0"
        if MARKERS["direct"] in text:
            pos = kb.positive_block(inst, blocks)
            if pos is None:
                return "step_1: unknown"
            steps = blocks[pos]
            if not rigged:
                return f"step_{inst.after_step + 1}: {inst.gold_next_step}"
            k = kb.covering_step(inst, steps)
            if k is None:
                return "step_1: unknown"
            if kb.coverage(inst, steps[k - 1]) == {inst.after_step} and k < len(steps):
                return f"step_{k + 1}: {steps[k]}"
            return f"step_{k}: {steps[k - 1]}"
        return "I cannot tell."

    name = provider_id or ("rigged-oracle" if rigged else "oracle")
    return ScriptedProvider([Rule(lambda r: True, respond)], provider_id=name, **kwargs)


def subtask_oracle(items: Sequence[SubTaskItem], provider_id: str = "subtask-oracle", **kwargs) -> ScriptedProvider:
    """Answers each sub-task prompt with its expected reply."""
    table = {(it.prompt, it.image_ids): it.expected_response() for it in items}

    def respond(request: ModelRequest) -> str:
        return table.get((request.instruction, tuple(request.image_ids)), "I cannot tell.")

    return ScriptedProvider([Rule(lambda r: True, respond)], provider_id=provider_id, **kwargs)
