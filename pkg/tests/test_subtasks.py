import pytest

from copkit.core import Procedure
from copkit.errors import CannotShuffle, ParseError
from copkit.subtasks import (
    KINDS,
    SubTaskItem,
    generate_subtasks,
    judge_response,
    load_subtasks,
    make_cpm,
    make_dpa,
    make_nsp,
    make_siv,
    parse_bool,
    parse_index,
    save_subtasks,
    score_subtasks,
)


def test_generate_all_kinds(instances):
    items = generate_subtasks(instances[:5], seed=3)
    assert [it.kind for it in items[:5]] == list(KINDS) and len(items) == 25
    assert all(it.prompt for it in items)
    assert len({it.id for it in items}) == 25


def test_siv_gold_matches_order(four_steps):
    for seed in range(50):
        item = make_siv(four_steps, seed)
        assert item.gold == (item.procedure.texts == four_steps.texts)
        if not item.gold:
            assert item.permutation.apply(four_steps.texts) == item.procedure.texts


def test_siv_rejects_single_step():
    with pytest.raises(CannotShuffle):
        make_siv(Procedure.from_texts("x", ["only."]), 0)


def test_siv_is_seed_deterministic(four_steps):
    assert make_siv(four_steps, 9).to_dict() == make_siv(four_steps, 9).to_dict()


def test_csi_and_nsp_golds(instances):
    for inst in instances[:10]:
        items = generate_subtasks([inst], ["CSI", "NSP"])
        csi, nsp = items
        assert csi.gold == inst.after_step and csi.image == inst.image
        assert nsp.gold == inst.after_step + 1
        assert nsp.gold_text == inst.gold_next_step


def test_dpa_inverse_and_gold(instances):
    for inst in instances:
        dpa, nsp = make_dpa(inst, seed=5), make_nsp(inst)
        assert dpa.permutation.restore(dpa.procedure.texts) == list(inst.source_steps)
        assert dpa.procedure.step(dpa.gold).text == nsp.gold_text == dpa.gold_text
        assert not dpa.permutation.is_identity


def test_cpm_gold(instances):
    seen = set()
    for seed in range(40):
        item = make_cpm(instances[0], seed)
        assert item.gold == (item.procedure.id == instances[0].positive.procedure.id)
        seen.add(item.gold)
    assert seen == {True, False}


def test_round_trip(tmp_path, instances):
    items = generate_subtasks(instances[:3], seed=1)
    save_subtasks(tmp_path / "items.jsonl", items)
    back = load_subtasks(tmp_path / "items.jsonl")
    assert [b.to_dict() for b in back] == [it.to_dict() for it in items]
    with pytest.raises(ParseError):
        SubTaskItem.from_dict({"kind": "SIV"})


@pytest.mark.parametrize("text,value", [("True", True), ("no.", False), ("Yes, it is", True),
                                        ("true or false", None), ("maybe", None)])
def test_parse_bool(text, value):
    assert parse_bool(text) is value


@pytest.mark.parametrize("text,value", [("step_3", 3), ("Step 12: x", 12), ("4", 4), ("(2)", 2), ("none", None)])
def test_parse_index(text, value):
    assert parse_index(text) == value


def test_expected_responses_score_perfectly(instances):
    items = generate_subtasks(instances[:20], seed=2)
    table = score_subtasks(items, [it.expected_response() for it in items])
    assert all(row["accuracy"] == 100.0 for row in table.values())
    assert list(table) == list(KINDS)


def test_siv_reply_semantics(four_steps):
    ordered = next(make_siv(four_steps, s) for s in range(100) if make_siv(four_steps, s).gold)
    # asked "was it shuffled?"; the right answer for an ordered list is False
    assert judge_response(ordered, "False") is True
    assert judge_response(ordered, "True") is False


def test_dpa_judged_by_text(instances):
    item = make_dpa(instances[0], 1)
    assert judge_response(item, f"step_{item.gold}")
    assert judge_response(item, f"step_99: {item.gold_text}")
    assert judge_response(item, "no idea") is None


def test_unparseable_counts_wrong(instances):
    items = generate_subtasks(instances[:4], ["NSP"])
    table = score_subtasks(items, {it.id: "??" for it in items})
    assert table["NSP"] == {"n": 4, "correct": 0, "unparseable": 4, "accuracy": 0.0}
    with pytest.raises(ValueError):
        score_subtasks(items, ["step_1"])
