"""scikit-learn style wrappers around the pipeline.

Nothing here is learned: ``fit`` only validates its input. The wrappers exist
so that the pipeline variants can be swapped into code that expects the
estimator API (``get_params``/``set_params``/``predict``/``score``).
"""

from __future__ import annotations

from typing import Iterable

from sklearn.base import BaseEstimator, TransformerMixin

from .core import Procedure, derive_seed
from .forge.fusion import fuse_steps
from .forge.instances import Instance
from .metrics.accuracy import exact_accuracy, next_step_correct
from .pipeline.clip import clip_variant
from .pipeline.cop import PipelineConfig, baseline_direct, run_cop
from .results import RunResult


def check_instances(X) -> list[Instance]:
    """Coerce ``X`` to a list of valid instances (dicts are parsed)."""
    if isinstance(X, (Instance, dict)):
        raise TypeError("expected a sequence of instances, got a single instance")
    out = []
    for x in X:
        inst = Instance.from_dict(x) if isinstance(x, dict) else x
        if not isinstance(inst, Instance):
            raise TypeError(f"expected Instance or dict, got {type(x).__name__}")
        inst.check()
        out.append(inst)
    if not out:
        raise ValueError("no instances given")
    return out


def check_procedures(X) -> list[Procedure]:
    out = [Procedure.from_dict(x) if isinstance(x, dict) else x for x in X]
    for p in out:
        if not isinstance(p, Procedure):
            raise TypeError(f"expected Procedure or dict, got {type(p).__name__}")
    return out


class _PipelineEstimator(BaseEstimator):
    def fit(self, X, y=None):
        check_instances(X)
        self.is_fitted_ = True
        return self

    def _run(self, inst: Instance) -> RunResult:
        raise NotImplementedError

    def run(self, X) -> list[RunResult]:
        return [self._run(inst) for inst in check_instances(X)]

    def predict(self, X) -> list[str | None]:
        """Predicted next-step text per instance (None when the run failed)."""
        return [r.prediction.next_step_text if r.prediction else None for r in self.run(X)]

    def score(self, X, y=None) -> float:
        """Next-step accuracy in percent. ``y`` defaults to the instances' gold steps."""
        instances = check_instances(X)
        results = self.run(instances)
        if y is None:
            hits = [next_step_correct(r.prediction, inst) for r, inst in zip(results, instances)]
            return exact_accuracy(hits, [True] * len(hits))
        preds = [r.prediction.next_step_text if r.prediction else None for r in results]
        return exact_accuracy(preds, list(y))


class ChainOfProcedure(_PipelineEstimator):
    def __init__(self, provider=None, phases: Iterable[int] = (1, 2, 3), retrieval_mode: str = "single_shot",
                 score_scale: int = 10, cot: bool = False):
        self.provider = provider
        self.phases = phases
        self.retrieval_mode = retrieval_mode
        self.score_scale = score_scale
        self.cot = cot

    def config(self) -> PipelineConfig:
        return PipelineConfig(frozenset(self.phases), self.retrieval_mode, self.score_scale, self.cot)

    def _run(self, inst: Instance) -> RunResult:
        if self.provider is None:
            raise ValueError("ChainOfProcedure needs a provider")
        return run_cop(inst, self.config(), self.provider)


class DirectBaseline(_PipelineEstimator):
    def __init__(self, provider=None, cot: bool = False):
        self.provider = provider
        self.cot = cot

    def _run(self, inst: Instance) -> RunResult:
        if self.provider is None:
            raise ValueError("DirectBaseline needs a provider")
        return baseline_direct(inst, self.provider, cot=self.cot)


class ClipRetriever(_PipelineEstimator):
    def __init__(self, store=None, mode: str = "full", provider=None, key=None):
        self.store = store
        self.mode = mode
        self.provider = provider
        self.key = key

    def _run(self, inst: Instance) -> RunResult:
        if self.store is None:
            raise ValueError("ClipRetriever needs an embedding store")
        if self.key is None:
            return clip_variant(inst, self.mode, self.store, self.provider)
        return clip_variant(inst, self.mode, self.store, self.provider, key=self.key)


class StepFusion(TransformerMixin, BaseEstimator):
    """Fuse consecutive steps of each procedure with probability ``p``.

    The seed for procedure ``i`` is derived from ``seed`` and the procedure id,
    so the output does not depend on batch order.
    """

    def __init__(self, p: float = 0.5, seed: int = 0):
        self.p = p
        self.seed = seed

    def fit(self, X, y=None):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("p must be in [0, 1]")
        check_procedures(X)
        return self

    def transform(self, X) -> list[Procedure]:
        return [fuse_steps(p, self.p, derive_seed(self.seed, "fusion-transform", p.id))[0] for p in check_procedures(X)]

