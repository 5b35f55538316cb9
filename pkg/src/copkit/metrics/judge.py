"""Multi-judge LLM scoring of predicted next steps."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import Sequence

from ..errors import AllJudgesFailed, GatewayError, UnparseableJudgeScore
from ..gateway.providers import Decoding, ModelRequest, Provider
from ..templates import TemplateSet

log = logging.getLogger(__name__)

_TRAILING_INT = re.compile(r"(-?\d+)(?!.*\d)", re.DOTALL)


@dataclass
class JudgePanel:
    judges: Sequence[Provider]
    rubric_template: str = field(default_factory=lambda: TemplateSet.default()["judge"])
    scale_max: int = 10
    decoding: Decoding = field(default_factory=lambda: Decoding(0.0, 16))

    def __post_init__(self):
        if not self.judges:
            raise ValueError("a judge panel needs at least one judge")

    def render(self, prediction: str, reference: str) -> str:
        return (self.rubric_template.replace("{LABEL}", reference)
                .replace("{PREDICT}", prediction).rstrip("\n"))


def parse_judge_score(text: str, scale_max: int = 10) -> int:
    """Last integer in the reply, which must lie in ``0..scale_max``."""
    m = _TRAILING_INT.search(text)
    if not m:
        raise UnparseableJudgeScore(f"no integer in {text[:60]!r}")
    value = int(m.group(1))
    if not 0 <= value <= scale_max:
        raise UnparseableJudgeScore(f"score {value} outside 0..{scale_max}")
    return value


def llm_score(prediction: str, reference: str, panel: JudgePanel) -> dict:
    """Mean judge score rescaled to percent.

    A judge whose reply cannot be parsed is asked once more, then dropped.
    """
    request = ModelRequest(panel.render(prediction, reference), (), panel.decoding)
    per_judge: dict[str, int | None] = {}
    for judge in panel.judges:
        score = None
        for attempt in range(2):
            try:
                score = parse_judge_score(judge.complete(request).text, panel.scale_max)
                break
            except (UnparseableJudgeScore, GatewayError) as exc:
                log.warning("judge %s attempt %d: %s", judge.provider_id, attempt + 1, exc)
        per_judge[_unique(judge.provider_id, per_judge)] = score
    valid = [s for s in per_judge.values() if s is not None]
    if not valid:
        raise AllJudgesFailed(f"none of {len(per_judge)} judges returned a usable score")
    return {
        "score_percent": sum(valid) / len(valid) / panel.scale_max * 100.0,
        "per_judge": per_judge,
    }


def _unique(name: str, seen) -> str:
    out, k = name, 2
    while out in seen:
        out, k = f"{name}#{k}", k + 1
    return out

