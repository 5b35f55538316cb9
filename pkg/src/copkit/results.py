"""Per-instance run records shared by the pipeline, metrics and CLI."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

from .gateway.providers import ModelRequest, ModelResponse, Usage

COMPLETE_SENTINEL = "__PROCEDURE_COMPLETE__"


@dataclass
class Prediction:
    next_step_text: str
    selected_procedure_id: str | None = None
    next_step_index: int | None = None
    current_step_index: int | None = None

    def to_dict(self) -> dict:
        return {
            "next_step_text": self.next_step_text,
            "next_step_index": self.next_step_index,
            "current_step_index": self.current_step_index,
            "selected_procedure_id": self.selected_procedure_id,
        }

    @classmethod
    def from_dict(cls, d: dict | None) -> "Prediction | None":
        if d is None:
            return None
        return cls(d["next_step_text"], d.get("selected_procedure_id"),
                   d.get("next_step_index"), d.get("current_step_index"))


@dataclass
class PhaseRecord:
    """Everything one phase did: exchanges, parsed output, chosen artifacts."""

    phase: str
    exchanges: list[dict] = field(default_factory=list)
    parsed: dict = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)
    usage: Usage = field(default_factory=Usage)

    def record(self, request: ModelRequest, response: ModelResponse) -> None:
        self.exchanges.append({
            "request": request.to_dict(),
            "response": response.text,
            "usage": response.usage.to_dict(),
        })
        self.usage = self.usage + response.usage

    def to_dict(self) -> dict:
        return {
            "phase": self.phase,
            "exchanges": self.exchanges,
            "parsed": self.parsed,
            "warnings": self.warnings,
            "usage": self.usage.to_dict(),
        }


@dataclass
class RunResult:
    instance_id: str
    mode: str
    prediction: Prediction | None = None
    trace: list[PhaseRecord] = field(default_factory=list)
    error: str | None = None
    config_hash: str = ""

    @property
    def ok(self) -> bool:
        return self.error is None and self.prediction is not None

    @property
    def request_count(self) -> int:
        return sum(len(p.exchanges) for p in self.trace)

    @property
    def usage_by_phase(self) -> dict[str, Usage]:
        out: dict[str, Usage] = {}
        for rec in self.trace:
            out[rec.phase] = out.get(rec.phase, Usage()) + rec.usage
        return out

    @property
    def usage(self) -> Usage:
        total = Usage()
        for u in self.usage_by_phase.values():
            total = total + u
        return total

    def exchanges(self) -> list[tuple[str, str]]:
        return [(ex["request"]["instruction"], ex["response"]) for rec in self.trace for ex in rec.exchanges]

    def trace_dict(self) -> dict:
        return {"instance_id": self.instance_id, "mode": self.mode, "phases": [p.to_dict() for p in self.trace]}

    def trace_ref(self) -> str:
        blob = json.dumps(self.trace_dict(), sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:32]

    def tokens(self) -> dict:
        per_phase = {k: v.total for k, v in sorted(self.usage_by_phase.items())}
        u = self.usage
        return {"input": u.input_tokens, "output": u.output_tokens, "total": u.total, "per_phase": per_phase}

    def to_record(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "mode": self.mode,
            "config_hash": self.config_hash,
            "prediction": self.prediction.to_dict() if self.prediction else None,
            "trace_ref": self.trace_ref(),
            "tokens": self.tokens(),
            "requests": self.request_count,
            "error": self.error,
        }
