"""Granularity simulation: probabilistic merging of consecutive atomic steps."""

from __future__ import annotations

from ..core import Procedure, Step, rng_for

# Low / Balanced / High settings of the fusion-sensitivity study.
FUSION_SETTINGS = {"low": 0.25, "balanced": 0.5, "high": 0.75}

Alignment = dict[int, tuple[int, ...]]


def join_step_texts(*texts: str) -> str:
    return ". ".join(t.strip().rstrip(".").strip() for t in texts)


def fuse_steps(procedure: Procedure, p: float, seed: int) -> tuple[Procedure, Alignment]:
    """Greedy left-to-right scan: at each unconsumed position merge it with the
    next step with probability ``p``. Merged steps are never merged again.

    Returns the fused procedure and a map fused index -> original indices.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"fusion probability must be in [0, 1], got {p}")
    rng = rng_for("fuse", seed)
    src = procedure.steps
    n = len(src)
    fused: list[Step] = []
    alignment: Alignment = {}
    i = 0
    while i < n:
        idx = len(fused) + 1
        if i + 1 < n and rng.random() < p:
            a, b = src[i], src[i + 1]
            fused.append(Step(idx, join_step_texts(a.text, b.text), a.image_refs + b.image_refs, atomic=False))
            alignment[idx] = (a.index, b.index)
            i += 2
        else:
            s = src[i]
            fused.append(Step(idx, s.text, s.image_refs, s.atomic))
            alignment[idx] = (s.index,)
            i += 1
    return procedure.with_steps(fused), alignment


def identity_alignment(procedure: Procedure) -> Alignment:
    return {s.index: (s.index,) for s in procedure.steps}

