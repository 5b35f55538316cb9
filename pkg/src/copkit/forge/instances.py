"""Hard-negative mining and evaluation-instance assembly."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

from ..core import Procedure, VisualState, derive_seed, read_jsonl, rng_for, validate_procedure, write_jsonl
from ..embeddings import EmbeddingStore
from ..errors import InsufficientPool, ParseError, UnknownId
from .fusion import Alignment, fuse_steps, identity_alignment

log = logging.getLogger(__name__)

STRATEGIES = ("topk", "random")


@dataclass
class ForgeConfig:
    fusion_probability: float = 0.5
    num_candidates: int = 3
    negative_strategy: str = "topk"
    mining_k: int = 0  # 0 = scan the whole ranked pool
    seed: int = 0
    ood_domains: tuple[str, ...] = ("work",)
    fuse_negatives: bool = True
    images_per_procedure: int | None = 1  # None = every eligible image
    train_ratio: float = 0.5
    min_stratum_size: int = 2

    def __post_init__(self):
        if not 0.0 <= self.fusion_probability <= 1.0:
            raise ValueError("fusion_probability must be in [0, 1]")
        if self.num_candidates < 2:
            raise ValueError("num_candidates must be >= 2")
        if self.negative_strategy not in STRATEGIES:
            raise ValueError(f"negative_strategy must be one of {STRATEGIES}")
        if self.mining_k < 0:
            raise ValueError("mining_k must be >= 0")
        self.ood_domains = tuple(self.ood_domains)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ood_domains"] = list(self.ood_domains)
        return d


class Corpus:
    """Procedures by id plus an image -> (procedure, step) index."""

    def __init__(self, procedures: Iterable[Procedure]):
        self.procedures: dict[str, Procedure] = {}
        self.image_index: dict[str, tuple[str, int]] = {}
        for p in procedures:
            if p.id in self.procedures:
                raise ParseError(f"duplicate procedure id {p.id!r}")
            self.procedures[p.id] = p
            for s in p.steps:
                for img in s.image_refs:
                    self.image_index.setdefault(img, (p.id, s.index))

    def __getitem__(self, pid: str) -> Procedure:
        try:
            return self.procedures[pid]
        except KeyError:
            raise UnknownId(f"unknown procedure {pid!r}") from None

    def __iter__(self):
        return iter(self.procedures[k] for k in sorted(self.procedures))

    def __len__(self) -> int:
        return len(self.procedures)

    def visual_state(self, image_id: str) -> VisualState:
        try:
            pid, idx = self.image_index[image_id]
        except KeyError:
            raise UnknownId(f"image {image_id!r} is not referenced by any procedure") from None
        return VisualState(image_id, pid, idx)


def as_corpus(corpus) -> Corpus:
    return corpus if isinstance(corpus, Corpus) else Corpus(corpus)


@dataclass
class Candidate:
    procedure: Procedure
    alignment: Alignment

    @property
    def procedure_id(self) -> str:
        return self.procedure.id

    def to_dict(self) -> dict:
        return {
            "procedure_id": self.procedure.id,
            "domain": self.procedure.domain,
            "title": self.procedure.title,
            "steps": [s.to_dict() for s in self.procedure.steps],
            "alignment": [list(self.alignment[k]) for k in sorted(self.alignment)],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Candidate":
        proc = Procedure.from_dict({"id": d["procedure_id"], "domain": d.get("domain", ""),
                                    "title": d.get("title", ""), "steps": d["steps"]})
        if "alignment" in d:
            alignment = {i: tuple(src) for i, src in enumerate(d["alignment"], start=1)}
        else:
            alignment = identity_alignment(proc)
        return cls(proc, alignment)


@dataclass
class Instance:
    id: str
    visual: VisualState
    candidates: list[Candidate]
    label: int
    gold_next_step: str
    domain: str
    source_steps: tuple[str, ...]
    meta: dict = field(default_factory=dict)

    @property
    def positive(self) -> Candidate:
        return self.candidates[self.label]

    @property
    def alignment(self) -> Alignment:
        return self.positive.alignment

    @property
    def step_length(self) -> int:
        return len(self.source_steps)

    @property
    def after_step(self) -> int:
        return self.visual.after_step

    @property
    def image(self) -> str:
        return self.visual.image_id

    def source_procedure(self) -> Procedure:
        """The positive procedure at atomic (pre-fusion) granularity."""
        pos = self.positive.procedure
        return Procedure.from_texts(pos.id, self.source_steps, domain=self.domain, title=pos.title)

    def to_dict(self) -> dict:
        meta = dict(self.meta)
        meta.update({
            "domain": self.domain,
            "source_procedure": self.visual.source_procedure,
            "step_length": self.step_length,
            "source_steps": list(self.source_steps),
        })
        return {
            "id": self.id,
            "image": self.visual.image_id,
            "after_step": self.visual.after_step,
            "candidates": [c.to_dict() for c in self.candidates],
            "label": self.label,
            "gold_next_step": self.gold_next_step,
            "meta": meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Instance":
        try:
            meta = dict(d.get("meta") or {})
            candidates = [Candidate.from_dict(c) for c in d["candidates"]]
            label = int(d["label"])
            source = meta.pop("source_procedure", candidates[label].procedure_id)
            steps = tuple(meta.pop("source_steps", None) or candidates[label].procedure.texts)
            domain = meta.pop("domain", candidates[label].procedure.domain)
            meta.pop("step_length", None)
            return cls(
                id=str(d["id"]),
                visual=VisualState(str(d["image"]), source, int(d["after_step"])),
                candidates=candidates,
                label=label,
                gold_next_step=str(d["gold_next_step"]),
                domain=domain,
                source_steps=steps,
                meta=meta,
            )
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            raise ParseError(f"malformed instance record: {exc}") from exc

    def check(self) -> None:
        n = len(self.candidates)
        if not 0 <= self.label < n:
            raise ValueError(f"{self.id}: label {self.label} outside 0..{n - 1}")
        positives = [c for c in self.candidates if c.procedure_id == self.visual.source_procedure]
        if len(positives) != 1:
            raise ValueError(f"{self.id}: expected exactly one positive candidate, found {len(positives)}")
        if self.positive.procedure_id != self.visual.source_procedure:
            raise ValueError(f"{self.id}: label does not point at the source procedure")
        self.visual.check(self.step_length)
        if self.source_steps[self.visual.after_step] != self.gold_next_step:
            raise ValueError(f"{self.id}: gold_next_step is not the atomic successor step")


def load_instances(path) -> list[Instance]:
    return [Instance.from_dict(d) for d in read_jsonl(path)]


def save_instances(path, instances: Sequence[Instance]) -> None:
    write_jsonl(path, (i.to_dict() for i in instances))


def _eligible_images(visual: VisualState, store: EmbeddingStore, corpus: Corpus, domain: str):
    def keep(image_id: str) -> bool:
        owner = corpus.image_index.get(image_id)
        if owner is None or owner[0] == visual.source_procedure:
            return False
        return corpus.procedures[owner[0]].domain == domain
    return keep


def mine_negatives(visual: VisualState, store: EmbeddingStore, corpus, config: ForgeConfig) -> list[Procedure]:
    """Pick ``N - 1`` distractor procedures from the positive's domain.

    ``topk`` walks images by descending cosine to the query image and lifts
    them to their procedures (first occurrence wins); ``random`` samples
    uniformly among the same eligible procedures.
    """
    corpus = as_corpus(corpus)
    need = config.num_candidates - 1
    domain = corpus[visual.source_procedure].domain
    keep = _eligible_images(visual, store, corpus, domain)
    if config.negative_strategy == "topk":
        ranked = store.ranked(visual.image_id, keep)
        if config.mining_k:
            ranked = ranked[:config.mining_k]
        chosen: list[str] = []
        for image_id, _ in ranked:
            pid = corpus.image_index[image_id][0]
            if pid not in chosen:
                chosen.append(pid)
                if len(chosen) == need:
                    break
    else:
        pool = sorted({corpus.image_index[i][0] for i in store.entries if keep(i)})
        if len(pool) < need:
            chosen = pool
        else:
            chosen = rng_for(config.seed, "negatives", visual.image_id).sample(pool, need)
    if len(chosen) < need:
        raise InsufficientPool(
            f"{visual.image_id}: {len(chosen)} eligible distractor procedure(s) in domain {domain!r}, need {need}"
        )
    return [corpus[pid] for pid in chosen]


def instance_id(visual: VisualState) -> str:
    return f"{visual.source_procedure}@{visual.image_id}"


def build_instance(visual: VisualState, corpus, store: EmbeddingStore, config: ForgeConfig) -> Instance:
    corpus = as_corpus(corpus)
    positive = corpus[visual.source_procedure]
    visual.check(len(positive))
    iid = instance_id(visual)
    negatives = mine_negatives(visual, store, corpus, config)

    candidates = []
    for proc in [positive, *negatives]:
        if proc.id == positive.id or config.fuse_negatives:
            fused, alignment = fuse_steps(proc, config.fusion_probability, derive_seed(config.seed, "fuse", iid, proc.id))
        else:
            fused, alignment = proc, identity_alignment(proc)
        candidates.append(Candidate(fused, alignment))

    order = list(range(len(candidates)))
    rng_for(config.seed, "order", iid).shuffle(order)
    shuffled = [candidates[i] for i in order]
    label = order.index(0)

    inst = Instance(
        id=iid,
        visual=visual,
        candidates=shuffled,
        label=label,
        gold_next_step=positive.step(visual.after_step + 1).text,
        domain=positive.domain,
        source_steps=tuple(positive.texts),
        meta={"title": positive.title, "strategy": config.negative_strategy, "candidate_order": order},
    )
    inst.check()
    return inst


def forge_instances(corpus, store: EmbeddingStore, config: ForgeConfig) -> tuple[list[Instance], dict]:
    """Build instances for every benchmark-eligible procedure.

    Returns the instances (sorted by id) and a ledger of skipped procedures.
    """
    corpus = as_corpus(corpus)
    instances: list[Instance] = []
    skipped: dict[str, str] = {}
    for proc in corpus:
        report = validate_procedure(proc)
        if not report.ok:
            skipped[proc.id] = "; ".join(report.violations)
            continue
        visuals = [
            VisualState(img, proc.id, s.index)
            for s in proc.steps[:-1] for img in s.image_refs
            if img in store and corpus.image_index.get(img) == (proc.id, s.index)
        ]
        if not visuals:
            skipped[proc.id] = "no embedded image before the final step"
            continue
        if config.images_per_procedure is not None and len(visuals) > config.images_per_procedure:
            visuals = rng_for(config.seed, "visual", proc.id).sample(visuals, config.images_per_procedure)
            visuals.sort(key=lambda v: (v.after_step, v.image_id))
        for v in visuals:
            try:
                instances.append(build_instance(v, corpus, store, config))
            except InsufficientPool as exc:
                skipped[instance_id(v)] = str(exc)
    if skipped:
        log.warning("skipped %d procedure(s)/image(s) during forge", len(skipped))
    instances.sort(key=lambda i: i.id)
    return instances, dict(sorted(skipped.items()))
