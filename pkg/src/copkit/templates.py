"""Prompt template sets.

Defaults ship as ``copkit/prompts/*.txt``; a directory of same-named files
overrides any subset byte-for-byte. Placeholders are ``{STEPS}``, ``{MAX}``,
``{LABEL}`` and ``{PREDICT}``; substitution is literal so braces inside step
text are safe.
"""

from __future__ import annotations

import hashlib
import re
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

from .core import render_steps

_PLACEHOLDER = re.compile(r"\{(STEPS|MAX|LABEL|PREDICT)\}")

TEMPLATE_NAMES = (
    "baseline", "baseline_zero_shot", "phase1_retrieval", "phase1_score", "phase2_decompose",
    "phase3_current", "subtask_csi", "subtask_nsp", "subtask_siv", "subtask_dpa", "subtask_cpm", "judge",
)


class TemplateSet(Mapping[str, str]):
    def __init__(self, templates: Mapping[str, str]):
        missing = [n for n in TEMPLATE_NAMES if n not in templates]
        if missing:
            raise ValueError(f"template set lacks {missing}")
        self._t = dict(templates)

    def __getitem__(self, name: str) -> str:
        return self._t[name]

    def __iter__(self):
        return iter(self._t)

    def __len__(self) -> int:
        return len(self._t)

    @classmethod
    def default(cls) -> "TemplateSet":
        return cls(_shipped_templates())

    @classmethod
    def from_dir(cls, path: str | Path) -> "TemplateSet":
        base = dict(cls.default())
        for f in Path(path).glob("*.txt"):
            base[f.stem] = f.read_text(encoding="utf-8")
        return cls(base)

    def digest(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self._t):
            h.update(name.encode() + b"\0" + self._t[name].encode("utf-8") + b"\0")
        return h.hexdigest()[:16]

    def render(self, name: str, **fields: str) -> str:
        text = _PLACEHOLDER.sub(lambda m: fields.get(m.group(1), m.group(0)), self._t[name])
        return text.rstrip("\n")


@lru_cache(maxsize=1)
def _shipped_templates() -> dict[str, str]:
    root = resources.files("copkit") / "prompts"
    return {n: (root / f"{n}.txt").read_text(encoding="utf-8") for n in TEMPLATE_NAMES}


def render_candidates(procedures: Sequence[Sequence[str]]) -> str:
    """Candidate procedures as ``### Instruction <i>`` blocks, 1-based."""
    blocks = [f"### Instruction {i}\n{render_steps(texts)}" for i, texts in enumerate(procedures, start=1)]
    return "\n\n".join(blocks)
