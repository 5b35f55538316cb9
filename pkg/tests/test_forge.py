import numpy as np
import pytest

from copkit.core import Procedure, VisualState
from copkit.embeddings import store_from_mapping
from copkit.errors import InsufficientPool, MissingEmbedding
from copkit.forge import (
    Corpus,
    EmptyStratum,
    ForgeConfig,
    Instance,
    SplitSpec,
    build_instance,
    corpus_stats,
    forge_instances,
    format_stats,
    fuse_steps,
    generate_corpus,
    load_instances,
    mine_negatives,
    save_instances,
    semantic_overlap,
    split_dataset,
)
from copkit.forge.stats import split_stats


def proc(pid, n, domain="cars"):
    texts = [f"{pid} step {i}." for i in range(1, n + 1)]
    refs = [[f"{pid}-img{i}"] for i in range(1, n + 1)]
    return Procedure.from_texts(pid, texts, domain=domain, image_refs=refs)


# Fusion -----------------------------------------------------------------------

def test_fusion_p0_is_identity():
    p = proc("a", 6)
    for seed in range(50):
        fused, align = fuse_steps(p, 0.0, seed)
        assert fused == p and align == {i: (i,) for i in range(1, 7)}


def test_fusion_p1_pairs_everything():
    fused, align = fuse_steps(proc("a", 4), 1.0, 0)
    assert align == {1: (1, 2), 2: (3, 4)}
    assert fused.texts == ["a step 1. a step 2", "a step 3. a step 4"]
    assert not fused.step(1).atomic
    assert fused.step(1).image_refs == ("a-img1", "a-img2")


def test_fusion_single_step_unchanged():
    p = proc("a", 1)
    assert fuse_steps(p, 1.0, 0)[0] == p


def test_fusion_alignment_partitions_in_order():
    p = proc("a", 9)
    for seed in range(100):
        _, align = fuse_steps(p, 0.5, seed)
        flat = [i for k in sorted(align) for i in align[k]]
        assert flat == list(range(1, 10))
        assert all(1 <= len(v) <= 2 for v in align.values())


def test_fusion_rejects_bad_p():
    with pytest.raises(ValueError):
        fuse_steps(proc("a", 3), 1.5, 0)


# Negative mining ----------------------------------------------------------------

def random_pool(n_procs=40, imgs=5, dim=16, seed=0):
    rng = np.random.default_rng(seed)
    procs, vecs = [], {}
    for k in range(n_procs):
        p = proc(f"p{k:02d}", imgs)
        procs.append(p)
        for s in p.steps:
            vecs[s.image_refs[0]] = rng.normal(size=dim)
    return Corpus(procs), store_from_mapping(vecs)


def brute_force_negatives(visual, corpus, store, need):
    q = store.get(visual.image_id).values
    scored = []
    for img, vec in store.entries.items():
        owner = corpus.image_index[img][0]
        if owner == visual.source_procedure:
            continue
        cos = float(q @ vec.values / (np.linalg.norm(q) * np.linalg.norm(vec.values)))
        scored.append((-cos, img, owner))
    scored.sort()
    out = []
    for _, _, owner in scored:
        if owner not in out:
            out.append(owner)
    return out[:need]


def test_topk_matches_brute_force():
    corpus, store = random_pool()
    cfg = ForgeConfig(num_candidates=3)
    for k in range(0, 40, 3):
        v = VisualState(f"p{k:02d}-img2", f"p{k:02d}", 2)
        got = [p.id for p in mine_negatives(v, store, corpus, cfg)]
        assert got == brute_force_negatives(v, corpus, store, 2)
        assert f"p{k:02d}" not in got


def test_exact_pool_returned_by_both_strategies():
    corpus, store = random_pool(n_procs=3)
    v = VisualState("p00-img1", "p00", 1)
    for strategy in ("topk", "random"):
        got = {p.id for p in mine_negatives(v, store, corpus, ForgeConfig(negative_strategy=strategy))}
        assert got == {"p01", "p02"}


def test_insufficient_pool():
    corpus, store = random_pool(n_procs=2)
    with pytest.raises(InsufficientPool):
        mine_negatives(VisualState("p00-img1", "p00", 1), store, corpus, ForgeConfig())


def test_random_strategy_is_seeded_and_distinct_from_topk():
    corpus, store = random_pool()
    v = VisualState("p05-img2", "p05", 2)
    r1 = mine_negatives(v, store, corpus, ForgeConfig(negative_strategy="random", seed=1))
    r2 = mine_negatives(v, store, corpus, ForgeConfig(negative_strategy="random", seed=1))
    assert r1 == r2
    picks = {tuple(p.id for p in mine_negatives(v, store, corpus, ForgeConfig(negative_strategy="random", seed=s)))
             for s in range(20)}
    assert len(picks) > 1


def test_mining_stays_in_domain():
    procs = [proc("a", 4, "cars"), proc("b", 4, "cars"), proc("c", 4, "cars"), proc("w", 4, "work")]
    vecs = {s.image_refs[0]: np.ones(4) + i * 0.01 for i, p in enumerate(procs) for s in p.steps}
    vecs["w-img1"] = np.ones(4)
    store = store_from_mapping(vecs)
    got = mine_negatives(VisualState("a-img1", "a", 1), store, procs, ForgeConfig())
    assert {p.id for p in got} == {"b", "c"}


# Instances ----------------------------------------------------------------------

def test_build_instance_shape(synth):
    cfg = ForgeConfig(seed=5)
    corpus = Corpus(synth.procedures)
    p = synth.procedures[3]
    v = VisualState(p.step(len(p) - 1).image_refs[0], p.id, len(p) - 1)
    inst = build_instance(v, corpus, synth.image_store, cfg)
    assert len(inst.candidates) == 3
    assert sum(c.procedure_id == p.id for c in inst.candidates) == 1
    assert inst.candidates[inst.label].procedure_id == p.id
    assert inst.gold_next_step == p.step(len(p)).text
    again = build_instance(v, corpus, synth.image_store, cfg)
    assert [c.procedure_id for c in again.candidates] == [c.procedure_id for c in inst.candidates]


def test_p0_gives_unfused_candidates(synth):
    insts, _ = forge_instances(synth.procedures, synth.image_store, ForgeConfig(fusion_probability=0.0))
    corpus = Corpus(synth.procedures)
    for inst in insts[:20]:
        for c in inst.candidates:
            assert c.procedure.texts == corpus[c.procedure_id].texts


def test_instances_round_trip(tmp_path, instances):
    save_instances(tmp_path / "i.jsonl", instances)
    loaded = load_instances(tmp_path / "i.jsonl")
    assert [i.to_dict() for i in loaded] == [i.to_dict() for i in instances]
    for inst in loaded:
        inst.check()


def test_instance_record_schema(instances):
    d = instances[0].to_dict()
    assert set(d) == {"id", "image", "after_step", "candidates", "label", "gold_next_step", "meta"}
    assert set(d["candidates"][0]) >= {"procedure_id", "steps"}


def test_forge_skips_short_procedures():
    procs = [proc("a", 2), proc("b", 4), proc("c", 4), proc("d", 4)]
    rng = np.random.default_rng(0)
    store = store_from_mapping({s.image_refs[0]: rng.normal(size=8) for p in procs for s in p.steps})
    insts, skipped = forge_instances(procs, store, ForgeConfig())
    assert "a" in skipped and len(insts) == 3


# Splits and stats ------------------------------------------------------------------

def fake_instance(iid, domain, length):
    p = proc(iid, length, domain)
    from copkit.forge.instances import Candidate
    from copkit.forge.fusion import identity_alignment
    return Instance(iid, VisualState(f"{iid}-img1", iid, 1), [Candidate(p, identity_alignment(p))], 0,
                    p.step(2).text, domain, tuple(p.texts))


def test_ood_only_gives_empty_train():
    insts = [fake_instance(f"w{i}", "work", 4) for i in range(6)]
    train, test = split_dataset(insts, SplitSpec(), seed=0)
    assert train == [] and len(test) == 6


def test_stratified_half_split():
    insts = [fake_instance(f"s{i:03d}", "cars", 4 if i < 50 else 8) for i in range(100)]
    train, test = split_dataset(insts, SplitSpec(train_ratio=0.5), seed=3)
    for length in (4, 8):
        n_train = sum(i.step_length == length for i in train)
        assert abs(n_train - 25) <= 1
    assert not {i.id for i in train} & {i.id for i in test}
    assert len(train) + len(test) == 100


def test_small_stratum_is_merged_with_warning():
    insts = [fake_instance(f"s{i}", "cars", 4) for i in range(6)] + [fake_instance("odd", "cars", 9)]
    with pytest.warns(EmptyStratum):
        train, test = split_dataset(insts, SplitSpec(), seed=0)
    assert len(train) + len(test) == 7


def test_split_stats_arithmetic():
    s = split_stats([proc("a", 5)])
    assert (s["mean_step_length"], s["step_length_std"], s["min_step_length"], s["max_step_length"]) == (5, 0, 5, 5)
    s = split_stats([proc("a", 3), proc("b", 7)])
    assert s["mean_step_length"] == 5 and s["step_length_std"] == 2


def test_stats_match_generator_ledger(synth):
    table = corpus_stats(synth.procedures)["all"]
    assert table["total_samples"] == synth.ledger["procedures"]
    assert table["domains"] == synth.ledger["domains"]
    lengths = {int(k): v for k, v in synth.ledger["lengths"].items()}
    mean = sum(k * v for k, v in lengths.items()) / sum(lengths.values())
    assert table["mean_step_length"] == pytest.approx(mean)
    assert "mean_step_length" in format_stats(corpus_stats(synth.procedures))


def test_overlap_copy_and_orthogonal():
    a, b = proc("a", 3), proc("b", 3)
    store = store_from_mapping({"a": [1, 0], "b": [0, 1]})
    assert semantic_overlap([a, b], [a, b], store)["median_cosine"] == pytest.approx(1.0)
    assert semantic_overlap([a], [b], store)["median_cosine"] == pytest.approx(0.0)
    with pytest.raises(MissingEmbedding):
        semantic_overlap([a], [proc("c", 3)], store)


def test_overlap_matches_double_loop():
    rng = np.random.default_rng(1)
    ids = [f"p{i}" for i in range(12)]
    vecs = {i: rng.normal(size=6) for i in ids}
    store = store_from_mapping(vecs)
    train, test = [proc(i, 3) for i in ids[:7]], [proc(i, 3) for i in ids[7:]]
    best = []
    for t in test:
        v = vecs[t.id]
        best.append(max(v @ vecs[r.id] / np.linalg.norm(v) / np.linalg.norm(vecs[r.id]) for r in train))
    got = semantic_overlap(train, test, store)
    assert got["max_cosines"] == pytest.approx(best)
    assert got["median_cosine"] == pytest.approx(float(np.median(best)))


def test_synth_is_deterministic():
    a, b = generate_corpus(20, seed=4), generate_corpus(20, seed=4)
    assert a.procedures == b.procedures and a.image_store == b.image_store and a.ledger == b.ledger
    assert generate_corpus(20, seed=5).procedures != a.procedures
