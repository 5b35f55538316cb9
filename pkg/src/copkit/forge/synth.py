"""Synthetic procedural corpus with deterministic pseudo-embeddings.

Stands in for the real corpus, which cannot be redistributed. Images are
represented only by their embeddings; each step has one image showing the
state after it.
"""

from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass
from itertools import product

import numpy as np

from ..core import DOMAINS, Procedure, Step, derive_seed, rng_for
from ..embeddings import DEFAULT_DIM, EmbeddingStore
from .fusion import join_step_texts

VOCAB = {
    "cars": (["loosen", "remove", "inspect", "pour", "tighten", "clean", "replace", "check", "drain", "refill"],
             ["radiator cap", "oil filter", "coolant reservoir", "lug nuts", "spark plug", "air filter",
              "brake pads", "wiper blade", "battery terminal", "drain plug"]),
    "computers": (["open", "select", "install", "restart", "connect", "back up", "update", "disable", "configure", "type"],
                  ["command prompt", "settings menu", "graphics driver", "usb cable", "router", "system files",
                   "firmware", "antivirus", "network adapter", "startup folder"]),
    "hobbies": (["cut", "glue", "paint", "sketch", "fold", "sand", "trace", "peel", "mask", "varnish"],
                ["frisket film", "cardboard frame", "watercolor paper", "canvas edge", "paper strip",
                 "wood panel", "stencil", "clay base", "fabric square", "bead string"]),
    "sports": (["stretch", "grip", "lift", "lower", "adjust", "tighten", "hold", "rotate", "lace", "wax"],
               ["ski poles", "ski boots", "barbell", "hamstrings", "yoga mat", "bike seat", "helmet strap",
                "racket handle", "running shoes", "snowboard base"]),
    "work": (["listen to", "schedule", "draft", "review", "summarize", "send", "prepare", "update", "file", "discuss"],
             ["client concerns", "meeting agenda", "cover letter", "quarterly report", "project notes",
              "follow-up email", "team feedback", "budget sheet", "task list", "performance review"]),
}


def text_key(text: str) -> str:
    """Store id of a step-text embedding."""
    return "txt:" + hashlib.sha1(text.strip().encode("utf-8")).hexdigest()[:16]


class PseudoEncoder:
    """Bag-of-words hashing encoder: text -> normalised sum of per-token random vectors."""

    def __init__(self, dim: int = DEFAULT_DIM, seed: int = 0):
        self.dim = dim
        self.seed = seed
        self._cache: dict[str, np.ndarray] = {}

    def vector(self, *parts) -> np.ndarray:
        key = "\x1f".join(map(str, parts))
        v = self._cache.get(key)
        if v is None:
            v = np.random.default_rng(derive_seed(self.seed, "vec", key)).standard_normal(self.dim)
            self._cache[key] = v
        return v

    def encode_text(self, text: str) -> np.ndarray:
        tokens = text.lower().replace(".", " ").split()
        v = sum((self.vector("tok", t) for t in tokens), np.zeros(self.dim))
        n = np.linalg.norm(v)
        return v / n if n else v


@dataclass
class SynthCorpus:
    procedures: list[Procedure]
    image_store: EmbeddingStore
    text_store: EmbeddingStore
    ledger: dict


def generate_corpus(n_procedures: int = 100, domains=DOMAINS, min_steps: int = 3, max_steps: int = 12,
                    seed: int = 0, dim: int = DEFAULT_DIM, image_noise: float = 0.3) -> SynthCorpus:
    if min_steps < 1 or max_steps < min_steps:
        raise ValueError("need 1 <= min_steps <= max_steps")
    enc = PseudoEncoder(dim, seed)
    rng = rng_for(seed, "synth")
    procedures: list[Procedure] = []
    images = EmbeddingStore(dim)
    texts = EmbeddingStore(dim)
    width = len(str(max(n_procedures - 1, 1)))

    for k in range(n_procedures):
        domain = domains[k % len(domains)]
        verbs, objects = VOCAB.get(domain, VOCAB["cars"])
        pairs = list(product(verbs, objects))
        length = rng.randint(min_steps, min(max_steps, len(pairs)))
        chosen = rng.sample(pairs, length)
        pid = f"{domain}-{k:0{width}d}"
        steps = []
        for i, (verb, obj) in enumerate(chosen, start=1):
            steps.append(Step(i, f"{verb.capitalize()} the {obj}.", (f"{pid}-img{i:02d}",)))
        proc = Procedure(pid, domain, f"How to work on the {chosen[0][1]} ({pid})", tuple(steps))
        procedures.append(proc)

        proc_vec = enc.vector("proc", pid)
        dom_vec = enc.vector("domain", domain)
        for s in steps:
            noise = np.random.default_rng(derive_seed(seed, "noise", s.image_refs[0])).standard_normal(dim)
            v = (0.6 * enc.encode_text(s.text) * np.sqrt(dim) + 0.5 * proc_vec + 0.6 * dom_vec
                 + image_noise * noise)
            images.add(s.image_refs[0], v / np.linalg.norm(v), domain)

        step_vecs = []
        for s in steps:
            step_vecs.append(enc.encode_text(s.text))
            if text_key(s.text) not in texts:
                texts.add(text_key(s.text), step_vecs[-1], domain)
        for a, b in zip(steps, steps[1:]):
            fused = join_step_texts(a.text, b.text)
            if text_key(fused) not in texts:
                texts.add(text_key(fused), enc.encode_text(fused), domain)
        pv = np.mean(step_vecs, axis=0) + 0.5 * dom_vec / np.sqrt(dim)
        texts.add(pid, pv / np.linalg.norm(pv), domain)

    ledger = {
        "procedures": len(procedures),
        "images": len(images),
        "domains": dict(sorted(Counter(p.domain for p in procedures).items())),
        "lengths": {str(k): v for k, v in sorted(Counter(len(p.steps) for p in procedures).items())},
        "seed": seed,
        "dim": dim,
    }
    return SynthCorpus(procedures, images, texts, ledger)
