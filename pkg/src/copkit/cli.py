"""``copkit`` command line.

Exit codes: 0 success, 1 internal error, 2 input error, 3 too many failed
instances in ``run``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .core import save_corpus
from .embeddings import import_embeddings, load_store, save_store
from .errors import CopkitInputError
from .forge.synth import generate_corpus
from .metrics.similarity import GreedyEmbeddingScorer
from .runner import (
    DEFAULT_MAX_FAILURE_FRACTION,
    Manifest,
    UsageError,
    build_provider,
    cmd_eval,
    cmd_forge,
    cmd_run,
    cmd_subtasks_generate,
    digest,
    forge_config_from,
    load_config,
    load_responses,
    section,
    write_json,
)
from .subtasks import load_subtasks, score_subtasks

EXIT_OK, EXIT_INTERNAL, EXIT_INPUT, EXIT_FAILURES = 0, 1, 2, 3

log = logging.getLogger("copkit")


def _pick(flag, config: dict, key: str, default=None):
    return flag if flag is not None else config.get(key, default)


def _required(value, name: str):
    if value is None:
        raise UsageError(f"{name} is required (flag or config file)")
    return value


def _seed(args, config: dict, sect: dict) -> int:
    return int(_pick(args.seed, sect, "seed", config.get("seed", 0)))


def do_synth(args, config: dict) -> int:
    sect = section(config, "synth")
    params = {
        "n_procedures": int(_pick(args.n_procedures, sect, "n_procedures", 100)),
        "min_steps": int(_pick(args.min_steps, sect, "min_steps", 3)),
        "max_steps": int(_pick(args.max_steps, sect, "max_steps", 12)),
        "dim": int(_pick(args.dim, sect, "dim", 512)),
        "seed": _seed(args, config, sect),
    }
    out = Path(_required(_pick(args.out, sect, "out"), "--out"))
    corpus = generate_corpus(**params)
    out.mkdir(parents=True, exist_ok=True)
    save_corpus(out / "corpus.jsonl", corpus.procedures)
    save_store(corpus.image_store, out / "image_embeddings.jsonl")
    save_store(corpus.image_store.merged(corpus.text_store), out / "embeddings.jsonl")
    save_store(corpus.text_store, out / "text_embeddings.jsonl")
    write_json(out / "ledger.json", corpus.ledger)
    Manifest("synth", seed=params["seed"], config_hash=digest(params), extra=params).finish(out)
    print(json.dumps(corpus.ledger, sort_keys=True))
    return EXIT_OK


def do_embed_import(args, config: dict) -> int:
    store = import_embeddings(args.source)
    save_store(store, args.out)
    print(f"imported {len(store)} vectors of dim {store.dim} -> {args.out}")
    return EXIT_OK


def do_forge(args, config: dict) -> int:
    sect = section(config, "forge")
    corpus = Path(_required(_pick(args.corpus, sect, "corpus"), "--corpus"))
    embeddings = Path(_required(_pick(args.embeddings, sect, "embeddings"), "--embeddings"))
    text_embeddings = _pick(args.text_embeddings, sect, "text_embeddings")
    out = Path(_required(_pick(args.out, sect, "out"), "--out"))
    values = {k: v for k, v in sect.items() if k not in ("corpus", "embeddings", "text_embeddings", "out")}
    values["seed"] = _seed(args, config, sect)
    if args.fusion_p is not None:
        values["fusion_probability"] = args.fusion_p
    if args.strategy is not None:
        values["negative_strategy"] = args.strategy
    if args.num_candidates is not None:
        values["num_candidates"] = args.num_candidates
    manifest = cmd_forge(corpus, embeddings, out, forge_config_from(values),
                         Path(text_embeddings) if text_embeddings else None)
    print(json.dumps(manifest["extra"], sort_keys=True))
    return EXIT_OK


def do_run(args, config: dict) -> int:
    sect = section(config, "run")
    dataset = Path(_required(_pick(args.dataset, sect, "dataset"), "--dataset"))
    mode = _required(_pick(args.mode, sect, "mode"), "--mode")
    out = Path(_required(_pick(args.out, sect, "out"), "--out"))
    provider = args.provider if args.provider is not None else sect.get("provider")
    cache_dir = _pick(args.cache_dir, sect, "cache_dir")
    embeddings = _pick(args.embeddings, sect, "embeddings")
    workers = int(_pick(args.workers, sect, "workers", 4))
    threshold = float(_pick(args.max_failure_fraction, sect, "max_failure_fraction", DEFAULT_MAX_FAILURE_FRACTION))
    run_values = {k: sect[k] for k in ("retrieval_mode", "score_scale", "cot", "templates_dir") if k in sect}
    manifest, failures = cmd_run(dataset, mode, out, provider, run_values, _seed(args, config, sect),
                                 Path(cache_dir) if cache_dir else None,
                                 Path(embeddings) if embeddings else None, workers)
    n = manifest["extra"]["instances"]
    print(f"{mode}: {n} instance(s), {failures} failed, {manifest['requests'].get('provider_calls', 0)} provider call(s)")
    if n and failures / n > threshold:
        log.error("%d/%d instances failed (threshold %.0f%%)", failures, n, 100 * threshold)
        return EXIT_FAILURES
    return EXIT_OK


def do_eval(args, config: dict) -> int:
    sect = section(config, "eval")
    results = Path(_required(_pick(args.results, sect, "results"), "--results"))
    gold = Path(_required(_pick(args.gold, sect, "gold"), "--gold"))
    out = Path(_required(_pick(args.out, sect, "out"), "--out"))
    metrics = args.metrics.split(",") if args.metrics else list(sect.get("metrics", ["accuracy"]))
    group_by = args.group_by.split(",") if args.group_by else list(sect.get("group_by", ["none"]))
    judges = [build_provider(spec) for spec in sect.get("judges", [])]
    token_embeddings = _pick(args.token_embeddings, sect, "token_embeddings")
    scorer = GreedyEmbeddingScorer(load_store(token_embeddings)) if token_embeddings else None
    report = cmd_eval(results, gold, out, metrics, group_by, judges, scorer)
    summary = {key: {r["metric"]: round(r["overall"][r["metric"]], 4) for r in reports}
               for key, reports in report["groups"].items()}
    print(json.dumps(summary["none"] if "none" in summary else summary, sort_keys=True))
    return EXIT_OK


def do_subtasks(args, config: dict) -> int:
    sect = section(config, "subtasks")
    if args.action == "generate":
        kinds = args.kinds.split(",") if args.kinds else list(sect.get("kinds", ["SIV", "CSI", "NSP", "DPA", "CPM"]))
        items = cmd_subtasks_generate(Path(args.dataset), Path(args.out), kinds, _seed(args, config, sect))
        print(f"wrote {len(items)} sub-task item(s) to {args.out}")
        return EXIT_OK
    items = load_subtasks(args.items)
    table = score_subtasks(items, load_responses(Path(args.responses)))
    text = json.dumps(table, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="copkit", description="Visual procedure QA benchmark and CoP evaluation")
    parser.add_argument("-v", "--verbose", action="store_true")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML or JSON config file; flags override it")
    common.add_argument("--seed", type=int)
    common.add_argument("--out")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic corpus with pseudo-embeddings")
    p.add_argument("--n-procedures", type=int)
    p.add_argument("--min-steps", type=int)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--dim", type=int)
    p.set_defaults(func=do_synth)

    p = sub.add_parser("embed", help="embedding utilities")
    esub = p.add_subparsers(dest="action", required=True)
    e = esub.add_parser("import", parents=[common], help="convert .npz/.csv/.jsonl vectors to a JSONL store")
    e.add_argument("source")
    e.set_defaults(func=do_embed_import)

    p = sub.add_parser("forge", parents=[common], help="build benchmark instances and splits")
    p.add_argument("--corpus")
    p.add_argument("--embeddings", help="image embeddings JSONL")
    p.add_argument("--text-embeddings", help="procedure text embeddings for the overlap statistic")
    p.add_argument("--fusion-p", type=float)
    p.add_argument("--strategy", choices=["topk", "random"])
    p.add_argument("--num-candidates", type=int)
    p.set_defaults(func=do_forge)

    p = sub.add_parser("run", parents=[common], help="run a pipeline mode over a dataset")
    p.add_argument("--dataset")
    p.add_argument("--mode", help="baseline | baseline-cot | cop | ablation:<set> | clip:<p1|p3|full> | subtasks:<kind>")
    p.add_argument("--provider", help="oracle | rigged-oracle (others via the config file)")
    p.add_argument("--cache-dir")
    p.add_argument("--embeddings", help="image + step-text embeddings for clip modes")
    p.add_argument("--workers", type=int)
    p.add_argument("--max-failure-fraction", type=float)
    p.set_defaults(func=do_run)

    p = sub.add_parser("eval", parents=[common], help="score results against gold instances")
    p.add_argument("--results")
    p.add_argument("--gold")
    p.add_argument("--metrics", help="comma list of accuracy, similarity, llm")
    p.add_argument("--group-by", help="comma list of domain, step_length_bucket, none")
    p.add_argument("--token-embeddings", help="token vectors for embedding-mode similarity")
    p.set_defaults(func=do_eval)

    p = sub.add_parser("subtasks", help="diagnostic sub-tasks")
    ssub = p.add_subparsers(dest="action", required=True)
    g = ssub.add_parser("generate", parents=[common])
    g.add_argument("--dataset", required=True)
    g.add_argument("--kinds", help="comma list of SIV, CSI, NSP, DPA, CPM")
    g.set_defaults(func=do_subtasks)
    s = ssub.add_parser("score", parents=[common])
    s.add_argument("--items", required=True)
    s.add_argument("--responses", required=True)
    s.set_defaults(func=do_subtasks)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(getattr(args, "config", None))
        return args.func(args, config)
    except (CopkitInputError, FileNotFoundError, IsADirectoryError, NotADirectoryError) as exc:
        print(f"copkit: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except KeyboardInterrupt:
        print("copkit: interrupted", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception:
        log.exception("internal error")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
