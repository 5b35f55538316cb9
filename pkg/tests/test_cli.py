import json

import pytest

from copkit.cli import main
from copkit.runner import strip_timestamps


def cli(*args):
    return main([str(a) for a in args])


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("ws")
    assert cli("synth", "--n-procedures", 40, "--dim", 32, "--seed", 4, "--out", root / "corpus") == 0
    assert cli("forge", "--corpus", root / "corpus/corpus.jsonl", "--embeddings", root / "corpus/image_embeddings.jsonl",
               "--seed", 4, "--out", root / "data") == 0
    return root


def read(path):
    return json.loads(path.read_text())


def test_synth_and_forge_outputs(workspace):
    for name in ("corpus.jsonl", "image_embeddings.jsonl", "embeddings.jsonl", "ledger.json", "manifest.json"):
        assert (workspace / "corpus" / name).exists()
    for name in ("instances.jsonl", "train.jsonl", "test.jsonl", "stats.json", "stats.txt", "manifest.json"):
        assert (workspace / "data" / name).exists()
    manifest = read(workspace / "data/manifest.json")
    assert manifest["command"] == "forge" and "instances.jsonl" in manifest["outputs"]


def test_rigged_cop_beats_baseline(workspace, tmp_path):
    data = workspace / "data/instances.jsonl"
    for mode in ("cop", "baseline"):
        assert cli("run", "--dataset", data, "--mode", mode, "--provider", "rigged-oracle",
                   "--out", tmp_path / mode) == 0
        assert cli("eval", "--results", tmp_path / mode / "results.jsonl", "--gold", data,
                   "--out", tmp_path / f"eval-{mode}") == 0
    cop = read(tmp_path / "eval-cop/report.json")["accuracy"]
    base = read(tmp_path / "eval-baseline/report.json")["accuracy"]
    assert cop == 100.0 and base < cop


def test_run_writes_traces(workspace, tmp_path):
    assert cli("run", "--dataset", workspace / "data/instances.jsonl", "--mode", "ablation:1,3",
               "--provider", "oracle", "--out", tmp_path) == 0
    records = [json.loads(line) for line in (tmp_path / "results.jsonl").read_text().splitlines()]
    ids = [r["instance_id"] for r in records]
    assert ids == sorted(ids)
    for r in records:
        assert (tmp_path / "traces" / f"{r['trace_ref']}.json").exists()
    manifest = read(tmp_path / "manifest.json")
    assert manifest["requests"]["provider_calls"] == 2 * len(records)


def test_cache_rerun_identical(workspace, tmp_path):
    args = ["run", "--dataset", workspace / "data/instances.jsonl", "--mode", "cop", "--provider", "oracle",
            "--cache-dir", tmp_path / "cache"]
    assert cli(*args, "--out", tmp_path / "a") == 0
    assert cli(*args, "--out", tmp_path / "b") == 0
    assert (tmp_path / "a/results.jsonl").read_bytes() == (tmp_path / "b/results.jsonl").read_bytes()
    second = read(tmp_path / "b/manifest.json")["requests"]
    assert second["cache_misses"] == 0 and second["provider_calls"] == 0


def test_clip_full_makes_no_calls(workspace, tmp_path):
    assert cli("run", "--dataset", workspace / "data/instances.jsonl", "--mode", "clip:full",
               "--embeddings", workspace / "corpus/embeddings.jsonl", "--out", tmp_path,
               "--max-failure-fraction", 1.0) == 0
    manifest = read(tmp_path / "manifest.json")
    assert manifest["requests"]["provider_calls"] == 0 and manifest["provider_ids"] == []


def test_clip_without_embeddings_is_input_error(workspace, tmp_path):
    assert cli("run", "--dataset", workspace / "data/instances.jsonl", "--mode", "clip:full", "--out", tmp_path) == 2


def test_failure_threshold_exit_code(workspace, tmp_path, monkeypatch):
    # the plain oracle fed nonsense on every request fails every instance
    import copkit.runner as runner
    from copkit.gateway import ScriptedProvider

    monkeypatch.setattr(runner, "oracle_provider", lambda *a, **k: ScriptedProvider([("", "no idea")]))
    assert cli("run", "--dataset", workspace / "data/instances.jsonl", "--mode", "cop", "--out", tmp_path) == 3
    assert (tmp_path / "results.jsonl").exists()


@pytest.mark.parametrize("args", [
    ["eval", "--results", "missing.jsonl", "--gold", "missing.jsonl", "--out", "x"],
    ["run", "--dataset", "missing.jsonl", "--mode", "cop", "--out", "x"],
    ["forge", "--corpus", "missing.jsonl", "--embeddings", "missing.jsonl", "--out", "x"],
])
def test_missing_inputs_exit_2(tmp_path, monkeypatch, args):
    monkeypatch.chdir(tmp_path)
    assert cli(*args) == 2


def test_bad_mode_and_metric(workspace, tmp_path):
    data = workspace / "data/instances.jsonl"
    assert cli("run", "--dataset", data, "--mode", "teleport", "--out", tmp_path / "r") == 2
    assert cli("run", "--dataset", data, "--mode", "cop", "--provider", "oracle", "--out", tmp_path / "r") == 0
    assert cli("eval", "--results", tmp_path / "r/results.jsonl", "--gold", data, "--metrics", "bleu",
               "--out", tmp_path / "e") == 2
    assert cli("eval", "--results", tmp_path / "r/results.jsonl", "--gold", data, "--group-by", "colour",
               "--out", tmp_path / "e") == 2


def test_eval_report_files(workspace, tmp_path):
    data = workspace / "data/instances.jsonl"
    cli("run", "--dataset", data, "--mode", "cop", "--provider", "oracle", "--out", tmp_path / "r")
    assert cli("eval", "--results", tmp_path / "r/results.jsonl", "--gold", data, "--metrics", "accuracy,similarity",
               "--group-by", "none,domain,step_length_bucket", "--out", tmp_path / "e") == 0
    report = read(tmp_path / "e/report.json")
    assert set(report["groups"]) == {"none", "domain", "step_length_bucket"}
    assert report["groups"]["none"][1]["overall"]["similarity"] == pytest.approx(100.0)
    assert (tmp_path / "e/report.csv").read_text().startswith("group_by,metric,group,n,value")


def test_config_file_supplies_flags(workspace, tmp_path):
    cfg = tmp_path / "run.toml"
    cfg.write_text(f'[run]\ndataset = "{workspace / "data/instances.jsonl"}"\nmode = "baseline"\n'
                   f'out = "{tmp_path / "out"}"\nprovider = "oracle"\n')
    assert cli("run", "--config", cfg) == 0
    assert read(tmp_path / "out/manifest.json")["extra"]["mode"] == "baseline"


def test_subtasks_generate_and_score(workspace, tmp_path):
    data = workspace / "data/instances.jsonl"
    items = tmp_path / "items.jsonl"
    assert cli("subtasks", "generate", "--dataset", data, "--kinds", "SIV,NSP", "--seed", 1, "--out", items) == 0
    rows = [json.loads(line) for line in items.read_text().splitlines()]
    responses = tmp_path / "responses.jsonl"
    responses.write_text("".join(json.dumps({"id": r["id"], "response": "step_1"}) + "\n" for r in rows))
    assert cli("subtasks", "score", "--items", items, "--responses", responses, "--out", tmp_path / "score.json") == 0
    table = read(tmp_path / "score.json")
    assert table["SIV"]["unparseable"] == table["SIV"]["n"]
    assert cli("subtasks", "generate", "--dataset", data, "--kinds", "XYZ", "--out", items) == 2


def test_subtask_run_mode(workspace, tmp_path):
    assert cli("run", "--dataset", workspace / "data/instances.jsonl", "--mode", "subtasks:DPA",
               "--provider", "oracle", "--out", tmp_path) == 0
    assert read(tmp_path / "subtasks_report.json")["DPA"]["accuracy"] == 100.0


def test_embed_import(tmp_path):
    import numpy as np

    np.savez(tmp_path / "v.npz", ids=np.array(["a", "b"]), vectors=np.eye(2, 3))
    assert cli("embed", "import", tmp_path / "v.npz", "--out", tmp_path / "v.jsonl") == 0
    assert len((tmp_path / "v.jsonl").read_text().splitlines()) == 2


def test_manifest_timestamps_are_only_difference(workspace, tmp_path):
    data = workspace / "data/instances.jsonl"
    for d in ("a", "b"):
        cli("run", "--dataset", data, "--mode", "baseline", "--provider", "oracle", "--out", tmp_path / d)
    a, b = read(tmp_path / "a/manifest.json"), read(tmp_path / "b/manifest.json")
    assert strip_timestamps(a) == strip_timestamps(b)
