"""Config loading, provider construction and the forge/run/eval workflows used by the CLI."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Sequence

from .core import load_corpus, read_jsonl, write_jsonl
from .embeddings import load_store
from .errors import CopkitInputError, GatewayError, JoinMismatch
from .forge.instances import ForgeConfig, Instance, forge_instances, load_instances, save_instances
from .forge.splits import SplitSpec, split_dataset
from .forge.stats import corpus_stats, format_stats, semantic_overlap
from .gateway.cache import CachedProvider
from .gateway.providers import ModelRequest, OpenAICompatibleProvider, Provider, Rule, ScriptedProvider
from .gateway.usage import usage_report
from .metrics.accuracy import exact_accuracy, next_step_correct
from .metrics.breakdown import GROUP_KEYS, breakdown_report, format_report, report_csv
from .metrics.judge import JudgePanel, llm_score
from .metrics.similarity import similarity_score
from .pipeline.clip import CLIP_MODES, clip_variant
from .pipeline.cop import PipelineConfig, baseline_direct, run_cop
from .results import PhaseRecord, Prediction, RunResult
from .scripted import oracle_provider, subtask_oracle
from .subtasks import KINDS, SubTaskItem, generate_subtasks, judge_response, save_subtasks, score_subtasks
from .templates import TemplateSet

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)

METRICS = ("accuracy", "similarity", "llm")
DEFAULT_MAX_FAILURE_FRACTION = 0.25
TIMESTAMP_KEYS = ("started_at", "finished_at")


class UsageError(CopkitInputError):
    """Bad command-line or config value."""


# Config ---------------------------------------------------------------------

def load_config(path: str | Path | None) -> dict:
    if path is None:
        return {}
    path = Path(path)
    raw = path.read_bytes()
    try:
        if path.suffix.lower() == ".toml":
            return tomllib.loads(raw.decode("utf-8"))
        return json.loads(raw)
    except (tomllib.TOMLDecodeError, json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise UsageError(f"{path}: cannot parse config: {exc}") from exc


def section(config: dict, name: str) -> dict:
    value = config.get(name, {})
    if not isinstance(value, dict):
        raise UsageError(f"config section [{name}] must be a table")
    return dict(value)


def digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode("utf-8")).hexdigest()[:16]


def file_sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def now() -> str:
    """UTC timestamp; ``SOURCE_DATE_EPOCH`` pins it for reproducible manifests."""
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    when = datetime.fromtimestamp(int(epoch), timezone.utc) if epoch else datetime.now(timezone.utc)
    return when.isoformat(timespec="seconds")


def write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")


@dataclass
class Manifest:
    command: str
    seed: int | None = None
    config_hash: str = ""
    provider_ids: list[str] = field(default_factory=list)
    template_hash: str | None = None
    inputs: dict[str, str] = field(default_factory=dict)
    started_at: str = field(default_factory=now)
    finished_at: str | None = None
    tokens: dict = field(default_factory=dict)
    requests: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)

    def finish(self, out_dir: Path) -> dict:
        self.finished_at = now()
        self.outputs = {
            str(p.relative_to(out_dir)): file_sha256(p)
            for p in sorted(out_dir.rglob("*")) if p.is_file() and p.name != "manifest.json"
        }
        record = {k: v for k, v in self.__dict__.items()}
        write_json(out_dir / "manifest.json", record)
        return record


def strip_timestamps(manifest: dict) -> dict:
    return {k: v for k, v in manifest.items() if k not in TIMESTAMP_KEYS}


# Providers ------------------------------------------------------------------

def _replay_provider(spec: dict) -> ScriptedProvider:
    """Replay recorded exchanges from a JSONL of ``{"instruction", "image_ids", "response"}``."""
    table = {}
    for rec in read_jsonl(spec["trace"]):
        table[(rec["instruction"], tuple(rec.get("image_ids", ())))] = rec["response"]
    default = spec.get("default", "")

    def respond(request):
        return table.get((request.instruction, tuple(request.image_ids)), default)

    return ScriptedProvider([Rule(lambda r: True, respond)], provider_id=spec.get("id", "replay"))


def build_provider(spec: dict | str | None, instances: Sequence[Instance] = (),
                   items: Sequence[SubTaskItem] = (), cache_dir: str | Path | None = None) -> Provider:
    """Provider from a config table. Scripted kinds are built from the gold data at hand."""
    if spec is None:
        spec = {"kind": "oracle"}
    if isinstance(spec, str):
        spec = {"kind": spec}
    spec = dict(spec)
    kind = spec.pop("kind", "oracle")
    limits = {k: spec.pop(k) for k in ("max_in_flight", "token_budget") if k in spec}
    if kind in ("oracle", "rigged-oracle"):
        if items:
            provider = subtask_oracle(items, **limits)
        else:
            provider = oracle_provider(instances, rigged=kind == "rigged-oracle" or bool(spec.get("rigged")), **limits)
    elif kind == "replay":
        provider = _replay_provider(spec)
    elif kind == "openai":
        try:
            provider = OpenAICompatibleProvider(spec.pop("name"), spec.pop("model"), **spec, **limits)
        except (KeyError, TypeError) as exc:
            raise UsageError(f"bad openai provider config: {exc}") from exc
    else:
        raise UsageError(f"unknown provider kind {kind!r}")
    if cache_dir:
        provider = CachedProvider(provider, cache_dir)
    return provider


def request_stats(provider: Provider | None) -> dict:
    if provider is None:
        return {"provider_calls": 0}
    out = {"provider_calls": provider.upstream_calls}
    if isinstance(provider, CachedProvider):
        out.update({"requests": provider.requests, "cache_hits": provider.hits, "cache_misses": provider.misses})
    return out


# Forge ----------------------------------------------------------------------

def forge_config_from(values: dict) -> ForgeConfig:
    known = set(ForgeConfig.__dataclass_fields__)
    unknown = set(values) - known
    if unknown:
        raise UsageError(f"unknown forge settings {sorted(unknown)}")
    try:
        return ForgeConfig(**values)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad forge settings: {exc}") from exc


def cmd_forge(corpus_path: Path, embeddings_path: Path, out_dir: Path, config: ForgeConfig,
              text_embeddings: Path | None = None) -> dict:
    manifest = Manifest("forge", seed=config.seed, config_hash=digest(config.to_dict()))
    manifest.inputs = {"corpus": file_sha256(corpus_path), "embeddings": file_sha256(embeddings_path)}
    procedures = load_corpus(corpus_path)
    store = load_store(embeddings_path)
    instances, skipped = forge_instances(procedures, store, config)
    train, test = split_dataset(instances, SplitSpec(config.ood_domains, config.train_ratio,
                                                     config.min_stratum_size), config.seed)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_instances(out_dir / "instances.jsonl", instances)
    save_instances(out_dir / "train.jsonl", train)
    save_instances(out_dir / "test.jsonl", test)
    stats = corpus_stats({"train": train, "test": test})
    if text_embeddings is not None:
        manifest.inputs["text_embeddings"] = file_sha256(text_embeddings)
        overlap = semantic_overlap(train, test, load_store(text_embeddings))
        stats["semantic_overlap"] = {"median_cosine": overlap["median_cosine"], "histogram": overlap["histogram"]}
    write_json(out_dir / "stats.json", stats)
    (out_dir / "stats.txt").write_text(format_stats({k: v for k, v in stats.items() if k != "semantic_overlap"}),
                                       encoding="utf-8")
    write_json(out_dir / "skipped.json", skipped)
    manifest.extra = {"forge": config.to_dict(), "instances": len(instances), "train": len(train),
                      "test": len(test), "skipped": len(skipped)}
    return manifest.finish(out_dir)


# Run ------------------------------------------------------------------------

def parse_mode(mode: str) -> tuple[str, str | None]:
    """("baseline"|"baseline-cot"|"cop"|"ablation"|"clip"|"subtasks", argument)."""
    mode = mode.strip().lower()
    if mode in ("baseline", "baseline-cot", "cop"):
        return mode, None
    head, _, arg = mode.partition(":")
    if head == "ablation" and arg:
        try:
            phases = frozenset(int(x) for x in arg.split(","))
        except ValueError:
            raise UsageError(f"bad ablation set {arg!r}") from None
        if 1 not in phases or not phases <= {1, 2, 3}:
            raise UsageError("ablation sets must contain phase 1 and be a subset of {1,2,3}")
        return head, ",".join(str(p) for p in sorted(phases))
    if head == "clip" and arg in CLIP_MODES:
        return head, arg
    if head == "subtasks" and arg.upper() in KINDS:
        return head, arg.upper()
    raise UsageError(f"unknown run mode {mode!r}")


def pipeline_config_from(values: dict, phases=frozenset({1, 2, 3})) -> PipelineConfig:
    templates = TemplateSet.from_dir(values["templates_dir"]) if values.get("templates_dir") else TemplateSet.default()
    try:
        return PipelineConfig(phases, values.get("retrieval_mode", "single_shot"), int(values.get("score_scale", 10)),
                              bool(values.get("cot", False)), templates)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def run_instances(instances: Sequence, fn: Callable, workers: int = 4) -> list:
    """Apply ``fn`` concurrently; results come back sorted by instance id."""
    if workers <= 1:
        results = [fn(i) for i in instances]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(fn, instances))
    return sorted(results, key=lambda r: r.instance_id)


def _subtask_result(item: SubTaskItem, provider: Provider, mode: str, config_hash: str) -> tuple[RunResult, str]:
    result = RunResult(item.id, mode, config_hash=config_hash)
    rec = PhaseRecord("subtask")
    result.trace.append(rec)
    try:
        request = ModelRequest(item.prompt, item.image_ids)
        response = provider.complete(request)
        rec.record(request, response)
        rec.parsed = {"correct": judge_response(item, response.text)}
        return result, response.text
    except GatewayError as exc:
        result.error = f"subtask:{type(exc).__name__}"
        rec.warnings.append(str(exc))
        return result, ""


def cmd_run(dataset: Path, mode: str, out_dir: Path, provider_spec=None, run_values: dict | None = None,
            seed: int = 0, cache_dir: Path | None = None, embeddings: Path | None = None,
            workers: int = 4) -> tuple[dict, int]:
    """Run one mode over a dataset. Returns (manifest, failure count)."""
    run_values = dict(run_values or {})
    kind, arg = parse_mode(mode)
    instances = load_instances(dataset)
    inputs = {"dataset": file_sha256(dataset)}
    store = None
    if kind == "clip":
        if embeddings is None:
            raise UsageError("clip modes need --embeddings (image and step-text vectors)")
        inputs["embeddings"] = file_sha256(embeddings)
        store = load_store(embeddings)

    phases = frozenset(int(p) for p in arg.split(",")) if kind == "ablation" else frozenset({1, 2, 3})
    config = pipeline_config_from(run_values, phases)
    items: list[SubTaskItem] = []
    if kind == "subtasks":
        items = generate_subtasks(instances, [arg], seed, config.templates)

    provider = None
    if not (kind == "clip" and arg == "full"):
        provider = build_provider(provider_spec, instances, items, cache_dir)

    if kind in ("baseline", "baseline-cot"):
        fn = lambda inst: baseline_direct(inst, provider, config, cot=kind == "baseline-cot" or config.cot)
    elif kind in ("cop", "ablation"):
        fn = lambda inst: run_cop(inst, config, provider)
    elif kind == "clip":
        fn = lambda inst: clip_variant(inst, arg, store, provider, config)
    else:
        fn = None

    out_dir.mkdir(parents=True, exist_ok=True)
    traces = out_dir / "traces"
    traces.mkdir(exist_ok=True)
    records = []
    if fn is not None:
        results = run_instances(instances, fn, workers)
        for r in results:
            records.append(r.to_record())
    else:
        config_hash = config.digest({"mode": mode, "provider": provider.provider_id})
        results, responses = [], {}
        for item in sorted(items, key=lambda it: it.id):
            r, text = _subtask_result(item, provider, f"subtasks:{arg}", config_hash)
            results.append(r)
            responses[item.id] = text
            rec = r.to_record()
            rec["response"] = text
            rec["correct"] = r.trace[0].parsed.get("correct")
            records.append(rec)
        save_subtasks(out_dir / "items.jsonl", sorted(items, key=lambda it: it.id))
        write_json(out_dir / "subtasks_report.json", score_subtasks(items, responses))
    for r in results:
        write_json(traces / f"{r.trace_ref()}.json", r.trace_dict())
    write_jsonl(out_dir / "results.jsonl", records)

    # sub-task runs carry a response, not a Prediction
    failures = sum(1 for r in results if (r.error is not None if kind == "subtasks" else not r.ok))
    manifest = Manifest("run", seed=seed, config_hash=config.digest({"mode": mode}),
                        provider_ids=[provider.provider_id] if provider else [],
                        template_hash=config.templates.digest(), inputs=inputs)
    manifest.tokens = usage_report(results)
    manifest.requests = request_stats(provider)
    manifest.extra = {"mode": mode, "instances": len(results), "failures": failures,
                      "errors": sorted({r.error for r in results if r.error})}
    return manifest.finish(out_dir), failures


# Eval -----------------------------------------------------------------------

def join_results(records: Sequence[dict], gold: Sequence[Instance]) -> list[tuple[dict, Instance]]:
    by_id = {r["instance_id"]: r for r in records}
    gold_ids = {g.id for g in gold}
    missing_results = gold_ids - by_id.keys()
    missing_gold = by_id.keys() - gold_ids
    if missing_results or missing_gold:
        raise JoinMismatch(missing_results, missing_gold)
    return [(by_id[g.id], g) for g in sorted(gold, key=lambda g: g.id)]


def item_scores(pairs: Sequence[tuple[dict, Instance]], metrics: Sequence[str],
                panel: JudgePanel | None = None, scorer=None) -> list[dict]:
    """Per-instance metric values on a 0-100 scale plus grouping metadata.

    Failed runs score 0 on every metric.
    """
    rows = []
    for rec, inst in pairs:
        pred = Prediction.from_dict(rec.get("prediction"))
        text = pred.next_step_text if pred and pred.next_step_text else None
        row = {"instance_id": inst.id, "domain": inst.domain, "step_length": inst.step_length}
        for m in metrics:
            if m == "accuracy":
                row[m] = 100.0 if next_step_correct(pred, inst) else 0.0
            elif text is None:
                row[m] = 0.0
            elif m == "similarity":
                row[m] = 100.0 * similarity_score(text, inst.gold_next_step, scorer)
            elif m == "llm":
                if panel is None:
                    raise UsageError("the llm metric needs judges configured under [eval.judges]")
                row[m] = llm_score(text, inst.gold_next_step, panel)["score_percent"]
        rows.append(row)
    return rows


def cmd_eval(results_path: Path, gold_path: Path, out_dir: Path, metrics: Sequence[str],
             group_by: Sequence[str], judges: Sequence[Provider] = (), scorer=None) -> dict:
    metrics = [m.strip().lower() for m in metrics if m.strip()]
    bad = [m for m in metrics if m not in METRICS]
    if bad or not metrics:
        raise UsageError(f"unknown metric(s) {bad}; choose from {METRICS}")
    group_by = [g.strip() for g in group_by if g.strip()] or ["none"]
    bad = [g for g in group_by if g not in GROUP_KEYS]
    if bad:
        raise UsageError(f"unknown group_by key(s) {bad}; choose from {GROUP_KEYS}")
    records = list(read_jsonl(results_path))
    gold = load_instances(gold_path)
    pairs = join_results(records, gold)
    panel = JudgePanel(list(judges)) if judges else None
    rows = item_scores(pairs, metrics, panel, scorer)

    report = {"results": len(records), "metrics": metrics, "groups": {}}
    text_parts, csv_parts = [], []
    for key in group_by:
        reports = [breakdown_report(rows, key, m) for m in metrics]
        report["groups"][key] = reports
        text_parts.append(f"[group_by={key}]\n" + format_report(reports))
        csv_parts.append(report_csv(reports))
    if "accuracy" in metrics:
        report["accuracy"] = exact_accuracy([r["accuracy"] == 100.0 for r in rows], [True] * len(rows))
    out_dir.mkdir(parents=True, exist_ok=True)
    write_json(out_dir / "report.json", report)
    (out_dir / "report.txt").write_text("\n".join(text_parts), encoding="utf-8")
    header, *_ = csv_parts[0].splitlines()
    body = [line for part in csv_parts for line in part.splitlines()[1:]]
    (out_dir / "report.csv").write_text("\n".join([header, *body]) + "\n", encoding="utf-8")
    write_jsonl(out_dir / "items.jsonl", rows)

    manifest = Manifest("eval", config_hash=digest({"metrics": metrics, "group_by": group_by}),
                        provider_ids=[j.provider_id for j in judges],
                        inputs={"results": file_sha256(results_path), "gold": file_sha256(gold_path)})
    manifest.extra = {"metrics": metrics, "group_by": group_by, "results": len(records)}
    manifest.finish(out_dir)
    return report


# Sub-tasks ------------------------------------------------------------------

def cmd_subtasks_generate(dataset: Path, out_path: Path, kinds: Sequence[str], seed: int,
                          templates: TemplateSet | None = None) -> list[SubTaskItem]:
    kinds = [k.strip().upper() for k in kinds if k.strip()]
    bad = [k for k in kinds if k not in KINDS]
    if bad:
        raise UsageError(f"unknown sub-task kind(s) {bad}; choose from {KINDS}")
    items = generate_subtasks(load_instances(dataset), kinds, seed, templates)
    items.sort(key=lambda it: it.id)
    save_subtasks(out_path, items)
    return items


def load_responses(path: Path) -> dict[str, str]:
    out = {}
    for rec in read_jsonl(path):
        key = rec.get("id", rec.get("instance_id"))
        if key is None or "response" not in rec:
            raise UsageError(f"{path}: response records need 'id' and 'response'")
        out[str(key)] = str(rec["response"])
    return out
