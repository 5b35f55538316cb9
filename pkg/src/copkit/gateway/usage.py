"""Token-cost aggregation over run results."""

from __future__ import annotations

from typing import Iterable


def _tokens(result) -> dict:
    # accepts RunResult objects or their serialized records
    if isinstance(result, dict):
        return result["tokens"]
    return result.tokens()


def usage_report(results: Iterable) -> dict:
    """Mean tokens per instance, totals and per-phase totals.

    ``results`` may mix RunResult objects and results-JSONL records.
    """
    n = 0
    totals = {"input": 0, "output": 0, "total": 0}
    per_phase: dict[str, int] = {}
    for r in results:
        t = _tokens(r)
        n += 1
        for k in totals:
            totals[k] += int(t[k])
        for phase, v in t["per_phase"].items():
            per_phase[phase] = per_phase.get(phase, 0) + int(v)
    return {
        "instances": n,
        "per_instance_mean_tokens": totals["total"] / n if n else 0.0,
        "totals": totals,
        "per_phase": dict(sorted(per_phase.items())),
    }
