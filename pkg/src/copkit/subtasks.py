"""Diagnostic sub-tasks: SIV, CSI, NSP, DPA and CPM items and their scoring.

Every item stores enough provenance (source instance, seed, permutation) to
recompute its gold answer without any model output.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Mapping, Sequence

from .core import Permutation, Procedure, derive_seed, normalize_text, permute, read_jsonl, render_steps, rng_for, write_jsonl
from .errors import CannotShuffle, ParseError
from .forge.instances import Instance
from .templates import TemplateSet

KINDS = ("SIV", "CSI", "NSP", "DPA", "CPM")
BOOLEAN_KINDS = ("SIV", "CPM")

_TEMPLATE = {"SIV": "subtask_siv", "CSI": "subtask_csi", "NSP": "subtask_nsp", "DPA": "subtask_dpa", "CPM": "subtask_cpm"}
_BOOL = re.compile(r"\b(true|false|yes|no)\b", re.IGNORECASE)
_STEP_INDEX = re.compile(r"step[\s_-]*(\d+)", re.IGNORECASE)
_BARE_INT = re.compile(r"^\s*\(?(\d+)\)?\s*[.:)]?\s*$")


@dataclass
class SubTaskItem:
    """One sub-task question.

    ``gold`` is a bool for SIV (True = steps in original order) and CPM
    (True = image belongs to the procedure), and a 1-based step index for CSI,
    NSP and DPA. For DPA the index refers to the shuffled presentation and
    ``gold_text`` holds the original successor step.
    """

    kind: str
    id: str
    procedure: Procedure
    gold: bool | int
    provenance: dict
    image: str | None = None
    permutation: Permutation | None = None
    gold_text: str | None = None
    prompt: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown sub-task kind {self.kind!r}")

    @property
    def image_ids(self) -> tuple[str, ...]:
        return (self.image,) if self.image else ()

    def expected_response(self) -> str:
        """The reply a perfect model gives to ``prompt``."""
        if self.kind == "SIV":
            # the prompt asks whether the steps *were shuffled*
            return "False" if self.gold else "True"
        if self.kind == "CPM":
            return "True" if self.gold else "False"
        return f"step_{self.gold}"

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "id": self.id,
            "procedure": self.procedure.to_dict(),
            "gold": self.gold,
            "gold_text": self.gold_text,
            "image": self.image,
            "permutation": list(self.permutation.mapping) if self.permutation else None,
            "provenance": self.provenance,
            "prompt": self.prompt,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SubTaskItem":
        try:
            prov = dict(d["provenance"])
            perm = d.get("permutation")
            return cls(
                kind=d["kind"],
                id=str(d["id"]),
                procedure=Procedure.from_dict(d["procedure"]),
                gold=d["gold"],
                provenance=prov,
                image=d.get("image"),
                permutation=Permutation(tuple(perm), int(prov.get("seed", 0))) if perm else None,
                gold_text=d.get("gold_text"),
                prompt=d.get("prompt", ""),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"malformed sub-task item: {exc}") from exc


def _render(item: SubTaskItem, templates: TemplateSet | None) -> SubTaskItem:
    templates = templates or TemplateSet.default()
    item.prompt = templates.render(_TEMPLATE[item.kind], STEPS=render_steps(item.procedure.texts))
    return item


def _coin(*parts) -> bool:
    return rng_for(*parts).random() < 0.5


def make_siv(procedure: Procedure, seed: int, templates: TemplateSet | None = None,
             source: str | None = None) -> SubTaskItem:
    if len(procedure.steps) < 2:
        raise CannotShuffle(f"procedure {procedure.id!r} is too short for SIV")
    source = source or procedure.id
    prov = {"source": source, "seed": seed}
    if _coin("siv", source, seed):
        shown, perm = permute(procedure, derive_seed("siv", source, seed), force_nonidentity=True)
        item = SubTaskItem("SIV", f"SIV:{source}:{seed}", shown, False, prov, permutation=perm)
    else:
        item = SubTaskItem("SIV", f"SIV:{source}:{seed}", procedure, True, prov)
    return _render(item, templates)


def make_csi(instance: Instance, templates: TemplateSet | None = None) -> SubTaskItem:
    t = instance.after_step
    item = SubTaskItem("CSI", f"CSI:{instance.id}", instance.source_procedure(), t,
                       {"source": instance.id, "seed": None}, image=instance.image,
                       gold_text=instance.source_steps[t - 1])
    return _render(item, templates)


def make_nsp(instance: Instance, templates: TemplateSet | None = None) -> SubTaskItem:
    t = instance.after_step
    if t >= instance.step_length:
        raise ValueError(f"{instance.id}: no next step after step {t}")
    item = SubTaskItem("NSP", f"NSP:{instance.id}", instance.source_procedure(), t + 1,
                       {"source": instance.id, "seed": None}, image=instance.image,
                       gold_text=instance.source_steps[t])
    return _render(item, templates)


def make_dpa(instance: Instance, seed: int, templates: TemplateSet | None = None) -> SubTaskItem:
    t = instance.after_step
    if t >= instance.step_length:
        raise ValueError(f"{instance.id}: no next step after step {t}")
    shown, perm = permute(instance.source_procedure(), derive_seed("dpa", instance.id, seed), force_nonidentity=True)
    position = perm.mapping.index(t + 1) + 1
    item = SubTaskItem("DPA", f"DPA:{instance.id}:{seed}", shown, position,
                       {"source": instance.id, "seed": seed}, image=instance.image,
                       permutation=perm, gold_text=instance.source_steps[t])
    return _render(item, templates)


def make_cpm(instance: Instance, seed: int, templates: TemplateSet | None = None) -> SubTaskItem:
    negatives = [c.procedure for i, c in enumerate(instance.candidates) if i != instance.label]
    if not negatives:
        raise ValueError(f"{instance.id}: CPM needs at least one negative candidate")
    prov = {"source": instance.id, "seed": seed}
    if _coin("cpm", instance.id, seed):
        item = SubTaskItem("CPM", f"CPM:{instance.id}:{seed}", instance.positive.procedure, True, prov,
                           image=instance.image)
    else:
        proc = rng_for("cpm-negative", instance.id, seed).choice(negatives)
        item = SubTaskItem("CPM", f"CPM:{instance.id}:{seed}", proc, False, prov, image=instance.image)
    return _render(item, templates)


def generate_subtasks(instances: Sequence[Instance], kinds: Sequence[str] = KINDS, seed: int = 0,
                      templates: TemplateSet | None = None) -> list[SubTaskItem]:
    templates = templates or TemplateSet.default()
    items: list[SubTaskItem] = []
    for inst in instances:
        for kind in kinds:
            kind = kind.upper()
            if kind == "SIV":
                items.append(make_siv(inst.source_procedure(), seed, templates, source=inst.id))
            elif kind == "CSI":
                items.append(make_csi(inst, templates))
            elif kind == "NSP":
                items.append(make_nsp(inst, templates))
            elif kind == "DPA":
                items.append(make_dpa(inst, seed, templates))
            elif kind == "CPM":
                items.append(make_cpm(inst, seed, templates))
            else:
                raise ValueError(f"unknown sub-task kind {kind!r}")
    return items


# Scoring -------------------------------------------------------------------

def parse_bool(text: str) -> bool | None:
    found = {m.group(1).lower() for m in _BOOL.finditer(text)}
    truthy = bool(found & {"true", "yes"})
    falsy = bool(found & {"false", "no"})
    if truthy == falsy:
        return None
    return truthy


def parse_index(text: str) -> int | None:
    m = _STEP_INDEX.search(text)
    if m:
        return int(m.group(1))
    m = _BARE_INT.match(text)
    return int(m.group(1)) if m else None


def _dpa_text(item: SubTaskItem, response: str) -> str | None:
    m = _STEP_INDEX.search(response)
    if m:
        rest = response[m.end():].lstrip(" :").strip()
        if rest:
            return rest
    idx = parse_index(response)
    if idx is not None and 1 <= idx <= len(item.procedure.steps):
        return item.procedure.step(idx).text
    return None


def judge_response(item: SubTaskItem, response: str) -> bool | None:
    """True/False for a parsed answer, None when the reply is unparseable."""
    if item.kind in BOOLEAN_KINDS:
        said = parse_bool(response)
        if said is None:
            return None
        claim = (not said) if item.kind == "SIV" else said
        return claim == item.gold
    if item.kind == "DPA":
        text = _dpa_text(item, response)
        if text is None:
            return None
        return normalize_text(text) == normalize_text(item.gold_text or "")
    idx = parse_index(response)
    if idx is None:
        return None
    return idx == item.gold


def score_subtasks(items: Sequence[SubTaskItem], responses: Mapping[str, str] | Sequence[str]) -> dict:
    """Per-kind accuracy in percent. Unparseable replies count as wrong."""
    if not isinstance(responses, Mapping):
        if len(responses) != len(items):
            raise ValueError(f"{len(responses)} responses for {len(items)} items")
        responses = {it.id: r for it, r in zip(items, responses)}
    table: dict[str, dict] = {}
    for item in items:
        if item.id not in responses:
            raise ValueError(f"no response for item {item.id!r}")
        row = table.setdefault(item.kind, {"n": 0, "correct": 0, "unparseable": 0})
        verdict = judge_response(item, responses[item.id])
        row["n"] += 1
        row["correct"] += int(bool(verdict))
        row["unparseable"] += int(verdict is None)
    for row in table.values():
        row["accuracy"] = 100.0 * row["correct"] / row["n"]
    return {k: table[k] for k in KINDS if k in table}


def load_subtasks(path) -> list[SubTaskItem]:
    return [SubTaskItem.from_dict(d) for d in read_jsonl(path)]


def save_subtasks(path, items: Sequence[SubTaskItem]) -> None:
    write_jsonl(path, (it.to_dict() for it in items))
