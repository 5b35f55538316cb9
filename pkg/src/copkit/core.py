"""Domain types, step-label parsing and seeded permutations."""

from __future__ import annotations

import gzip
import hashlib
import json
import random
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Iterator, Sequence

from .errors import CannotShuffle, NoStepLabel, ParseError

DOMAINS = ("cars", "computers", "hobbies", "sports", "work")
MIN_BENCHMARK_STEPS = 3

_STEP_LABEL = re.compile(r"^\s*step_(\d+)(?!\w)\s*:?\s*(.*?)\s*$", re.IGNORECASE)


@dataclass(frozen=True)
class Step:
    index: int
    text: str
    image_refs: tuple[str, ...] = ()
    atomic: bool = True

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "text": self.text,
            "image_refs": list(self.image_refs),
            "atomic": self.atomic,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Step":
        return cls(
            index=int(d["index"]),
            text=str(d["text"]),
            image_refs=tuple(d.get("image_refs") or ()),
            atomic=bool(d.get("atomic", True)),
        )


@dataclass(frozen=True)
class Procedure:
    id: str
    domain: str
    title: str
    steps: tuple[Step, ...]

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def texts(self) -> list[str]:
        return [s.text for s in self.steps]

    def step(self, index: int) -> Step:
        """Return the step with 1-based ``index``."""
        return self.steps[index - 1]

    def with_steps(self, steps: Iterable[Step]) -> "Procedure":
        return replace(self, steps=tuple(steps))

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "domain": self.domain,
            "title": self.title,
            "steps": [s.to_dict() for s in self.steps],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Procedure":
        try:
            return cls(
                id=str(d["id"]),
                domain=str(d["domain"]),
                title=str(d.get("title", "")),
                steps=tuple(Step.from_dict(s) for s in d["steps"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"malformed procedure record: {exc}") from exc

    @classmethod
    def from_texts(cls, id: str, texts: Sequence[str], domain: str = "cars", title: str = "",
                   image_refs: Sequence[Sequence[str]] | None = None) -> "Procedure":
        refs = image_refs or [() for _ in texts]
        steps = tuple(Step(i + 1, t, tuple(r)) for i, (t, r) in enumerate(zip(texts, refs)))
        return cls(id=id, domain=domain, title=title or id, steps=steps)


@dataclass(frozen=True)
class Permutation:
    """``mapping[i]`` is the original 1-based index shown at position ``i + 1``."""

    mapping: tuple[int, ...]
    seed: int

    def __post_init__(self):
        if sorted(self.mapping) != list(range(1, len(self.mapping) + 1)):
            raise ValueError(f"not a permutation of 1..{len(self.mapping)}: {self.mapping}")

    @property
    def is_identity(self) -> bool:
        return all(m == i + 1 for i, m in enumerate(self.mapping))

    def inverse(self) -> "Permutation":
        inv = [0] * len(self.mapping)
        for pos, orig in enumerate(self.mapping, start=1):
            inv[orig - 1] = pos
        return Permutation(tuple(inv), self.seed)

    def apply(self, items: Sequence) -> list:
        return [items[m - 1] for m in self.mapping]

    def restore(self, items: Sequence) -> list:
        """Undo :meth:`apply`."""
        return self.inverse().apply(items)


@dataclass(frozen=True)
class VisualState:
    image_id: str
    source_procedure: str
    after_step: int

    def check(self, length: int) -> None:
        if not 1 <= self.after_step < length:
            raise ValueError(
                f"after_step={self.after_step} must lie in [1, {length - 1}] for a {length}-step procedure"
            )


@dataclass
class ValidationReport:
    procedure_id: str
    violations: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.violations)

    @property
    def ok(self) -> bool:
        return not self.violations


def format_step_label(index: int, content: str) -> str:
    return f"step_{index}: {content}"


def parse_step_label(text: str) -> tuple[int, str]:
    """Return ``(index, content)`` from the last ``step_<n>[:] content`` line of ``text``.

    Raises NoStepLabel when no line matches. The index is not range-checked.
    """
    for line in reversed(text.splitlines()):
        m = _STEP_LABEL.match(line)
        if m:
            return int(m.group(1)), m.group(2).strip()
    raise NoStepLabel(f"no step_<n> label in {text[:80]!r}")


def parse_step_list(text: str) -> list[tuple[int, str]]:
    """All ``step_<n>: content`` lines, in order of appearance."""
    out = []
    for line in text.splitlines():
        m = _STEP_LABEL.match(line)
        if m:
            out.append((int(m.group(1)), m.group(2).strip()))
    return out


def render_steps(texts: Sequence[str]) -> str:
    return "\n".join(format_step_label(i, t) for i, t in enumerate(texts, start=1))


def derive_seed(*parts: Any) -> int:
    """Stable 64-bit seed from arbitrary parts; independent of PYTHONHASHSEED."""
    key = "\x1f".join(str(p) for p in parts).encode("utf-8")
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "big")


def rng_for(*parts: Any) -> random.Random:
    return random.Random(derive_seed(*parts))


def permute(procedure: Procedure, seed: int, force_nonidentity: bool = False) -> tuple[Procedure, Permutation]:
    n = len(procedure.steps)
    if force_nonidentity and n < 2:
        raise CannotShuffle(f"procedure {procedure.id!r} has {n} step(s); cannot produce a non-identity order")
    rng = rng_for("permute", seed)
    order = list(range(1, n + 1))
    while True:
        rng.shuffle(order)
        perm = Permutation(tuple(order), seed)
        if not (force_nonidentity and perm.is_identity):
            break
    shuffled = [replace(s, index=pos) for pos, s in enumerate(perm.apply(procedure.steps), start=1)]
    return procedure.with_steps(shuffled), perm


def validate_procedure(procedure: Procedure, min_steps: int = MIN_BENCHMARK_STEPS) -> ValidationReport:
    report = ValidationReport(procedure.id)
    if len(procedure.steps) < min_steps:
        report.violations.append(f"too short: {len(procedure.steps)} steps < {min_steps}")
    for pos, step in enumerate(procedure.steps, start=1):
        if not step.text.strip():
            report.violations.append(f"step {step.index}: empty text")
        if step.index != pos:
            report.violations.append(f"non-contiguous index: position {pos} has index {step.index}")
    return report


def normalize_text(text: str) -> str:
    """Lowercase, collapse whitespace and strip terminal punctuation."""
    text = " ".join(text.lower().split())
    return text.rstrip(" .!?;:,")


# JSONL helpers -----------------------------------------------------------

def _open_text(path: Path, mode: str):
    if str(path).endswith(".gz"):
        return gzip.open(path, mode + "t", encoding="utf-8")
    return open(path, mode, encoding="utf-8", newline="\n")


def read_jsonl(path: str | Path) -> Iterator[dict]:
    path = Path(path)
    with _open_text(path, "r") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from exc


def write_jsonl(path: str | Path, records: Iterable[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with _open_text(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")


def load_corpus(path: str | Path) -> list[Procedure]:
    return [Procedure.from_dict(d) for d in read_jsonl(path)]


def save_corpus(path: str | Path, procedures: Iterable[Procedure]) -> None:
    write_jsonl(path, (p.to_dict() for p in procedures))
