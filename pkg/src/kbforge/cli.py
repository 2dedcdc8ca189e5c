"""Command-line entry point: crawl, suite, compare, ensemble, export, popularity.

Configuration comes from an optional JSON file plus flat override flags;
flags win. Paths default to locations under --workspace. Capped crawls are
successful runs (exit 0); only configuration and transport failures exit 1.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import crawler, ensemble, export, metrics, popularity
from .embeddings import EmbeddingCache, RemoteEmbedder, TrigramHashEmbedder
from .gateway import BackendDescriptor, GatewayError, build_gateway
from .model import (
    Caps,
    KnowledgeBase,
    RunConfig,
    StructuralCategory,
    load_run,
    load_triples,
    run_failed,
    save_run,
)

CATEGORY_ALIASES = {
    "ne": StructuralCategory.NAMED_ENTITIES,
    "named_entities": StructuralCategory.NAMED_ENTITIES,
    "literals": StructuralCategory.LITERALS,
    "predicates": StructuralCategory.PREDICATES,
    "classes": StructuralCategory.CLASSES,
    "triples": StructuralCategory.TRIPLES,
}

ALL_CATEGORIES = [
    StructuralCategory.NAMED_ENTITIES,
    StructuralCategory.LITERALS,
    StructuralCategory.PREDICATES,
    StructuralCategory.CLASSES,
    StructuralCategory.TRIPLES,
]


class CliError(Exception):
    """Fatal configuration or IO problem; maps to exit code 1."""


def _load_config_file(path: Optional[str]) -> dict:
    if not path:
        return {}
    p = Path(path)
    if not p.exists():
        raise CliError(f"config file not found: {p}")
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CliError(f"config file {p} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise CliError(f"config file {p} must hold a JSON object")
    return data


def _pick(cli_value, config: dict, key: str, default):
    if cli_value is not None:
        return cli_value
    if key in config:
        return config[key]
    return default


def _run_config(args, config: dict) -> RunConfig:
    topic = _pick(args.topic, config, "topic", None)
    seed = _pick(args.seed, config, "seed", None)
    if not topic or not seed:
        raise CliError("both a topic and a seed entity are required")
    run_config = RunConfig(
        topic=topic,
        seed_entity=seed,
        prompt_language=_pick(args.language, config, "language", "en"),
        temperature=float(_pick(args.temperature, config, "temperature", 0.0)),
        model_id=_pick(args.model, config, "model", "gpt-4.1-mini"),
        caps=Caps(
            max_layers=int(_pick(args.max_layers, config, "max_layers", Caps.max_layers)),
            max_wall_seconds=int(
                _pick(args.max_seconds, config, "max_seconds", Caps.max_wall_seconds)
            ),
            max_triples=int(
                _pick(args.max_triples, config, "max_triples", Caps.max_triples)
            ),
        ),
        parallelism=int(_pick(args.parallelism, config, "parallelism", 4)),
    )
    try:
        run_config.validate()
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    return run_config


def _gateway(args, config: dict, workspace: Path):
    world = _pick(getattr(args, "world", None), config, "world", None)
    endpoint = _pick(getattr(args, "endpoint", None), config, "endpoint", None)
    model = _pick(getattr(args, "model", None), config, "model", "gpt-4.1-mini")
    if world:
        descriptor = BackendDescriptor(kind="mock", model_id=model)
        world_path = Path(world)
        if not world_path.exists():
            raise CliError(f"world file not found: {world_path}")
        return build_gateway(descriptor, world_path=world_path)
    if endpoint:
        descriptor = BackendDescriptor(
            kind="remote",
            endpoint_url=endpoint,
            model_id=model,
            temperature=float(_pick(getattr(args, "temperature", None), config, "temperature", 0.0)),
        )
        audit = _pick(getattr(args, "audit", None), config, "audit", None)
        audit_path = Path(audit) if audit else workspace / "audit.ndjson"
        try:
            return build_gateway(descriptor, audit_path=audit_path)
        except GatewayError as exc:
            raise CliError(str(exc)) from exc
    raise CliError("select a backend with --world (fixture) or --endpoint (remote)")


def _print_run_summary(record) -> None:
    counts = metrics.yield_counts(record)
    print(f"run_id: {record.run_id}")
    print(f"termination: {record.termination.value}")
    print(f"deepest_layer: {record.deepest_layer}")
    print(f"wall_seconds: {record.wall_seconds:.3f}")
    for category in ALL_CATEGORIES:
        print(f"{category.value}: {counts[category]}")
    if record.degeneracy_events:
        print(f"degeneracy_events: {len(record.degeneracy_events)}")


def cmd_crawl(args) -> int:
    workspace = Path(args.workspace)
    config = _load_config_file(args.config)
    run_config = _run_config(args, config)
    gateway = _gateway(args, config, workspace)

    run_id = args.run_id or crawler.default_run_id(run_config)
    out_dir = Path(args.out) if args.out else workspace / "runs" / run_id
    record = crawler.crawl(run_config, gateway, run_id=run_id)
    save_run(record, out_dir)
    _print_run_summary(record)
    print(f"saved: {out_dir}")
    return 0


def cmd_suite(args) -> int:
    workspace = Path(args.workspace)
    config = _load_config_file(args.config)
    if "runs" not in config or not isinstance(config["runs"], list) or not config["runs"]:
        raise CliError("suite config must define a non-empty 'runs' list")
    dimension = _pick(args.dimension, config, "dimension", "base")
    defaults = config.get("defaults", {})

    run_configs = []
    for entry in config["runs"]:
        if not isinstance(entry, dict):
            raise CliError("each suite run entry must be a JSON object")
        merged = {**defaults, **entry}
        run_configs.append(
            RunConfig(
                topic=merged.get("topic", ""),
                seed_entity=merged.get("seed", ""),
                prompt_language=merged.get("language", "en"),
                temperature=float(merged.get("temperature", 0.0)),
                model_id=merged.get("model", "gpt-4.1-mini"),
                caps=Caps(
                    max_layers=int(merged.get("max_layers", Caps.max_layers)),
                    max_wall_seconds=int(merged.get("max_seconds", Caps.max_wall_seconds)),
                    max_triples=int(merged.get("max_triples", Caps.max_triples)),
                ),
                parallelism=int(merged.get("parallelism", 4)),
            )
        )

    gateway = _gateway(args, config, workspace)
    out_dir = Path(args.out) if args.out else workspace / "suites" / dimension
    try:
        records = crawler.run_suite(run_configs, gateway, out_dir, dimension=dimension)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    ok = sum(1 for r in records if r is not None)
    failed = len(records) - ok
    print(f"suite: {out_dir}")
    print(f"dimension: {dimension}")
    print(f"runs_ok: {ok}")
    if failed:
        print(f"warning: {failed} run(s) failed; see FAILED markers", file=sys.stderr)
    return 0


def _load_suite_runs(suite_dir: Path):
    manifest_path = suite_dir / crawler.SUITE_MANIFEST
    if not manifest_path.exists():
        raise CliError(f"no suite manifest in {suite_dir}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    records = []
    for run_id in manifest["run_ids"]:
        run_dir = suite_dir / run_id
        if run_failed(run_dir) is not None:
            continue
        records.append(load_run(run_dir))
    return manifest, records


def _embedding_provider(args):
    name = args.provider or "trigram"
    if name == "trigram":
        return TrigramHashEmbedder()
    if name == "remote":
        if not args.embed_endpoint:
            raise CliError("remote embedding provider needs --embed-endpoint")
        try:
            return RemoteEmbedder(args.embed_endpoint, model_id=args.embed_model)
        except GatewayError as exc:
            raise CliError(str(exc)) from exc
    raise CliError(f"unknown embedding provider {name!r}")


def cmd_compare(args) -> int:
    workspace = Path(args.workspace)
    suite_dir = Path(args.suite_dir)
    manifest, records = _load_suite_runs(suite_dir)
    if len(records) < 2:
        raise CliError("comparison needs at least two successful runs")

    if args.categories in (None, "all"):
        categories = ALL_CATEGORIES
    else:
        categories = []
        for token in args.categories.split(","):
            token = token.strip().lower()
            if token not in CATEGORY_ALIASES:
                raise CliError(f"unknown category {token!r}")
            categories.append(CATEGORY_ALIASES[token])

    provider = _embedding_provider(args)
    cache = EmbeddingCache(Path(args.cache)) if args.cache else None

    assignments = None
    if args.buckets:
        store_path = Path(args.popularity_cache) if args.popularity_cache else workspace / popularity.CACHE_NAME
        store = popularity.PopularityStore(store_path)
        client = None
        if not args.offline:
            client = popularity.WikidataClient(endpoint_url=args.wikidata_endpoint)
        assignments = []
        for record in records:
            entities = sorted(metrics.category_elements(record, StructuralCategory.NAMED_ENTITIES))
            resolved = popularity.resolve_many(entities, client, store, offline=args.offline)
            assignments.append(popularity.bucketize(resolved))

    report = metrics.build_stability_report(
        records,
        categories,
        tau=args.tau,
        provider=provider,
        cache=cache,
        suite_id=suite_dir.name or str(suite_dir),
        assignments=assignments,
    )
    out_dir = Path(args.out) if args.out else suite_dir / "report"
    json_path, csv_path = metrics.write_report(report, out_dir)
    for row in report.rows:
        cv = "n/a" if row.yield_cv is None else f"{row.yield_cv:.4f}"
        print(
            f"{row.category.value}: yield_cv={cv} "
            f"jaccard={row.avg_jaccard:.4f} hausdorff={row.avg_hausdorff:.4f} "
            f"match_pct={row.avg_match_pct:.2f}"
        )
    print(f"report: {json_path}")
    print(f"report: {csv_path}")
    return 0


def cmd_ensemble(args) -> int:
    suite_dir = Path(args.suite_dir)
    manifest, records = _load_suite_runs(suite_dir)
    if len(records) < 2:
        raise CliError("ensembling needs at least two successful runs")
    if args.k is None and not args.auto:
        raise CliError("choose --k N or --auto")

    curve = ensemble.shared_triple_curve(records)
    if args.auto:
        try:
            k = ensemble.elbow_k(curve)
        except ValueError as exc:
            raise CliError(str(exc)) from exc
    else:
        k = args.k
        if not 1 <= k <= len(records):
            raise CliError(f"--k must lie in 1..{len(records)}")

    kb = ensemble.build_ensemble_kb(records, k)
    out_dir = Path(args.out) if args.out else suite_dir / "ensemble"
    out_dir.mkdir(parents=True, exist_ok=True)
    ensemble.write_elbow_csv(curve, out_dir / ensemble.ELBOW_CSV)
    ensemble.write_curve_json(curve, out_dir / "curve.json")
    with (out_dir / "triples.ndjson").open("w", encoding="utf-8") as handle:
        for t in kb.triples:
            handle.write(
                json.dumps(
                    {
                        "s": t.subject,
                        "p": t.predicate,
                        "o": t.object,
                        "o_kind": t.object_kind.value,
                        "layer": t.layer,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )
    summary = {
        "k": k,
        "auto": bool(args.auto),
        "n_runs": len(records),
        "triple_count": len(kb),
        "curve": [list(point) for point in curve.points],
    }
    (out_dir / "ensemble.json").write_text(
        json.dumps(summary, indent=2) + "\n", encoding="utf-8"
    )
    print(f"k: {k}")
    print(f"triples: {len(kb)}")
    print(f"saved: {out_dir}")
    return 0


def cmd_export(args) -> int:
    kb_dir = Path(args.kb_dir)
    triples_path = kb_dir / "triples.ndjson"
    if not triples_path.exists():
        raise CliError(f"no triples.ndjson under {kb_dir}")
    formats = [f.strip().lower() for f in args.formats.split(",") if f.strip()]
    for fmt in formats:
        if fmt not in export.EXPORTERS:
            raise CliError(f"unknown export format {fmt!r} (choose from {', '.join(export.EXPORTERS)})")
    kb = KnowledgeBase()
    kb.add_all(load_triples(triples_path))
    out_dir = Path(args.out) if args.out else kb_dir.parent / (kb_dir.name + "-export")
    policy = export.IriPolicy(args.namespace) if args.namespace else export.IriPolicy()
    try:
        policy.validate()
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    written = export.export_kb(kb, out_dir, formats, policy=policy)
    for path in written:
        print(f"wrote: {path}")
    return 0


def cmd_popularity(args) -> int:
    workspace = Path(args.workspace)
    if args.labels:
        labels_path = Path(args.labels)
        if not labels_path.exists():
            raise CliError(f"labels file not found: {labels_path}")
        labels = [
            line.strip()
            for line in labels_path.read_text(encoding="utf-8").splitlines()
            if line.strip()
        ]
    elif args.run_dir:
        record = load_run(Path(args.run_dir))
        labels = sorted(metrics.category_elements(record, StructuralCategory.NAMED_ENTITIES))
    else:
        raise CliError("give a run directory or --labels FILE")
    if not labels:
        raise CliError("no entity labels to resolve")

    store_path = Path(args.cache) if args.cache else workspace / popularity.CACHE_NAME
    store = popularity.PopularityStore(store_path)
    client = None
    if not args.offline:
        client = popularity.WikidataClient(endpoint_url=args.wikidata_endpoint)
    records = popularity.resolve_many(labels, client, store, offline=args.offline)
    assignment = popularity.bucketize(records)
    for name in popularity.BUCKET_NAMES:
        print(f"{name}: {len(assignment.buckets[name])}")
    if args.out:
        payload = {
            name: sorted(members) for name, members in assignment.buckets.items()
        }
        out_path = Path(args.out)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        out_path.write_text(json.dumps(payload, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
        print(f"saved: {out_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kbforge",
        description="Materialize topic knowledge bases from a language model and measure their stability.",
    )
    parser.add_argument("--workspace", default=".", help="root for default output paths")
    sub = parser.add_subparsers(dest="command", required=True)

    p_crawl = sub.add_parser("crawl", help="run one knowledge crawl")
    p_crawl.add_argument("--config", help="JSON config file")
    p_crawl.add_argument("--world", help="fixture world file (mock backend)")
    p_crawl.add_argument("--endpoint", help="chat-completions endpoint (remote backend)")
    p_crawl.add_argument("--audit", help="audit log path for remote calls")
    p_crawl.add_argument("--topic", help="topic key for prompt phrasing")
    p_crawl.add_argument("--seed", help="seed entity label")
    p_crawl.add_argument("--language", help="prompt language tag")
    p_crawl.add_argument("--temperature", type=float)
    p_crawl.add_argument("--model", help="model identifier")
    p_crawl.add_argument("--max-layers", type=int, dest="max_layers")
    p_crawl.add_argument("--max-seconds", type=int, dest="max_seconds")
    p_crawl.add_argument("--max-triples", type=int, dest="max_triples")
    p_crawl.add_argument("--parallelism", type=int)
    p_crawl.add_argument("--run-id", dest="run_id")
    p_crawl.add_argument("--out", help="run directory")
    p_crawl.set_defaults(func=cmd_crawl)

    p_suite = sub.add_parser("suite", help="run a suite of crawls")
    p_suite.add_argument("--config", required=True, help="suite JSON config")
    p_suite.add_argument("--world", help="fixture world file (mock backend)")
    p_suite.add_argument("--endpoint", help="chat-completions endpoint")
    p_suite.add_argument("--audit")
    p_suite.add_argument("--dimension", choices=crawler.SUITE_DIMENSIONS)
    p_suite.add_argument("--out", help="suite directory")
    p_suite.set_defaults(func=cmd_suite)

    p_compare = sub.add_parser("compare", help="stability report across a suite")
    p_compare.add_argument("suite_dir")
    p_compare.add_argument("--categories", help="'all' or comma list: ne,literals,predicates,classes,triples")
    p_compare.add_argument("--tau", type=float, default=metrics.DEFAULT_TAU)
    p_compare.add_argument("--provider", choices=["trigram", "remote"])
    p_compare.add_argument("--embed-endpoint", dest="embed_endpoint")
    p_compare.add_argument("--embed-model", dest="embed_model", default="text-embedding-3-small")
    p_compare.add_argument("--cache", help="embedding cache file")
    p_compare.add_argument("--buckets", action="store_true", help="add popularity-bucketed rows")
    p_compare.add_argument("--popularity-cache", dest="popularity_cache")
    p_compare.add_argument("--offline", action="store_true")
    p_compare.add_argument("--wikidata-endpoint", dest="wikidata_endpoint", default=popularity.WIKIDATA_API)
    p_compare.add_argument("--out", help="report directory")
    p_compare.set_defaults(func=cmd_compare)

    p_ens = sub.add_parser("ensemble", help="intersection-ensemble a suite")
    p_ens.add_argument("suite_dir")
    group = p_ens.add_mutually_exclusive_group()
    group.add_argument("--k", type=int)
    group.add_argument("--auto", action="store_true", help="pick k by the elbow heuristic")
    p_ens.add_argument("--out", help="ensemble directory")
    p_ens.set_defaults(func=cmd_ensemble)

    p_export = sub.add_parser("export", help="serialize a run or ensemble KB")
    p_export.add_argument("kb_dir", help="directory containing triples.ndjson")
    p_export.add_argument("--formats", default="csv,sql,ttl,html")
    p_export.add_argument("--namespace", help="base IRI namespace for Turtle")
    p_export.add_argument("--out", help="output directory")
    p_export.set_defaults(func=cmd_export)

    p_pop = sub.add_parser("popularity", help="resolve and bucket entity popularity")
    p_pop.add_argument("run_dir", nargs="?", help="run directory to read entities from")
    p_pop.add_argument("--labels", help="file with one entity label per line")
    p_pop.add_argument("--cache", help="popularity cache file")
    p_pop.add_argument("--offline", action="store_true")
    p_pop.add_argument("--wikidata-endpoint", dest="wikidata_endpoint", default=popularity.WIKIDATA_API)
    p_pop.add_argument("--out", help="write bucket assignment JSON here")
    p_pop.set_defaults(func=cmd_popularity)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except GatewayError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
