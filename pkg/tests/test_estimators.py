import pytest
from sklearn.base import clone

from copkit.core import Procedure
from copkit.estimators import ChainOfProcedure, ClipRetriever, DirectBaseline, StepFusion
from copkit.scripted import oracle_provider


def test_params_and_clone(instances):
    est = ChainOfProcedure(provider=oracle_provider(instances), phases=(1, 3), retrieval_mode="per_candidate_score")
    params = est.get_params()
    assert params["phases"] == (1, 3) and params["retrieval_mode"] == "per_candidate_score"
    twin = clone(est)
    assert twin.get_params()["phases"] == (1, 3) and twin is not est
    est.set_params(phases=(1, 2, 3))
    assert est.config().phases == frozenset({1, 2, 3})


def test_predict_and_score(instances):
    est = ChainOfProcedure(provider=oracle_provider(instances)).fit(instances[:10])
    preds = est.predict(instances[:10])
    assert preds == [inst.gold_next_step for inst in instances[:10]]
    assert est.score(instances[:10]) == 100.0
    assert est.score(instances[:4], [inst.gold_next_step for inst in instances[:4]]) == 100.0


def test_accepts_dict_instances(instances):
    est = DirectBaseline(provider=oracle_provider(instances))
    assert est.predict([instances[0].to_dict()]) == [instances[0].gold_next_step]


def test_rigged_ordering_through_estimators(instances):
    rigged = oracle_provider(instances, rigged=True)
    cop = ChainOfProcedure(provider=rigged).score(instances)
    base = DirectBaseline(provider=rigged).score(instances)
    assert cop == 100.0 > base


def test_missing_provider_and_bad_input(instances):
    with pytest.raises(ValueError):
        ChainOfProcedure().predict(instances[:1])
    with pytest.raises(TypeError):
        DirectBaseline(provider=oracle_provider(instances)).fit(instances[0])
    with pytest.raises(ValueError):
        DirectBaseline().fit([])
    with pytest.raises(ValueError):
        ClipRetriever().predict(instances[:1])


def test_step_fusion_transformer():
    procs = [Procedure.from_texts(f"p{i}", [f"Step {j} of {i}." for j in range(6)]) for i in range(5)]
    assert [p.texts for p in StepFusion(p=0.0).fit_transform(procs)] == [p.texts for p in procs]
    assert all(len(p.steps) == 3 for p in StepFusion(p=1.0).fit_transform(procs))
    a = StepFusion(p=0.5, seed=2).fit_transform(procs)
    b = StepFusion(p=0.5, seed=2).fit_transform(procs[::-1])[::-1]
    assert [p.texts for p in a] == [p.texts for p in b]
    with pytest.raises(ValueError):
        StepFusion(p=1.5).fit(procs)
