"""Train/test splitting: OOD domains held out, the rest stratified by step length."""

from __future__ import annotations

import logging
import warnings
from collections import defaultdict
from dataclasses import dataclass
from typing import Sequence

from ..core import rng_for
from .instances import Instance

log = logging.getLogger(__name__)


class EmptyStratum(UserWarning):
    """A step-length stratum was too small to split and was merged into a neighbour."""


@dataclass(frozen=True)
class SplitSpec:
    ood_domains: tuple[str, ...] = ("work",)
    train_ratio: float = 0.5
    min_stratum_size: int = 2

    def __post_init__(self):
        if not 0.0 <= self.train_ratio <= 1.0:
            raise ValueError("train_ratio must be in [0, 1]")
        object.__setattr__(self, "ood_domains", tuple(self.ood_domains))


def _strata(instances: Sequence[Instance], min_size: int) -> dict[int, list[Instance]]:
    groups: dict[int, list[Instance]] = defaultdict(list)
    for inst in instances:
        groups[inst.step_length].append(inst)
    keys = sorted(groups)
    # merge undersized strata into the next longer one (the previous one for the last)
    i = 0
    while i < len(keys) and len(keys) > 1:
        k = keys[i]
        if len(groups[k]) >= min_size:
            i += 1
            continue
        target = keys[i + 1] if i + 1 < len(keys) else keys[i - 1]
        warnings.warn(f"step-length stratum {k} has {len(groups[k])} item(s); merged into {target}",
                      EmptyStratum, stacklevel=3)
        groups[target].extend(groups.pop(k))
        keys.pop(i)
        if target < k:
            i -= 1
    return dict(groups)


def split_dataset(instances: Sequence[Instance], spec: SplitSpec, seed: int) -> tuple[list[Instance], list[Instance]]:
    present = {i.domain for i in instances}
    for d in spec.ood_domains:
        if d not in present:
            log.warning("OOD domain %r not present in data", d)

    ood = [i for i in instances if i.domain in spec.ood_domains]
    in_domain = [i for i in instances if i.domain not in spec.ood_domains]
    train: list[Instance] = []
    test: list[Instance] = list(ood)
    for key, group in sorted(_strata(in_domain, spec.min_stratum_size).items()):
        group = sorted(group, key=lambda i: i.id)
        rng_for(seed, "split", key).shuffle(group)
        n_train = int(spec.train_ratio * len(group) + 0.5)
        train.extend(group[:n_train])
        test.extend(group[n_train:])
    train.sort(key=lambda i: i.id)
    test.sort(key=lambda i: i.id)
    return train, test
