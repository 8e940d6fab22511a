"""Batch command-line entry point: ingest, stats, train, evaluate, explain,
and hyperparameter search, driven by a JSON config file.

Subcommands: stats | train | eval | run | search. ``run`` composes the full
pipeline: k-fold split, per-fold training and inference, pre-pruning and
pruned metrics tables, prediction dumps, checkpoints, and explanation
exports. Every run writes a manifest (config hash, seeds, versions)
sufficient to reproduce it exactly; given identical seeds the metrics and
prediction files are byte-identical across runs.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy

from . import __version__, beam, evaluation, explain, kge, policy, training
from .env import Query, WalkEnvironment, load_metapaths
from .graph import (
    GraphFormatError,
    GraphValidationError,
    augment_inverses,
    graph_stats,
    load_graph,
    split_folds,
)

THREADS_ENV_VAR = "KGREASON_THREADS"

WALKER_MODELS = ("minerva", "polo")
KGE_MODELS = ("transe", "distmult")
ALL_MODELS = WALKER_MODELS + KGE_MODELS + ("embedding_guided",)

TASK_PRESETS = {
    "treats-repurposing": {"target_relation": "treats", "target_type": "Disease"},
    "binds-target": {"target_relation": "binds", "target_type": "Gene"},
}


class ConfigError(ValueError):
    """The run configuration is invalid or incomplete."""


@dataclass
class RunConfig:
    triples: str
    types: str
    model: str
    target_relation: str
    target_type: str
    task: str = ""
    metapaths: str = ""
    seed: int = 0
    folds: int = 5
    out: str = "runs/out"
    filter_scope: str = "all"  # or "train_valid"
    beam_width: int = 100
    explain_top_k: int = 10
    search: bool = False
    train: dict = dataclasses.field(default_factory=dict)
    kge: dict = dataclasses.field(default_factory=dict)
    search_overrides: dict = dataclasses.field(default_factory=dict)

    def to_dict(self):
        return dataclasses.asdict(self)


def load_run_config(args):
    """Merge the JSON config file with command-line overrides, resolve the
    task preset, and validate."""
    raw = {}
    if args.config:
        with open(args.config, "r", encoding="utf-8") as handle:
            raw = json.load(handle)
    task = raw.get("task", "")
    preset = TASK_PRESETS.get(task, {})
    merged = {
        "target_relation": preset.get("target_relation", ""),
        "target_type": preset.get("target_type", ""),
        **raw,
    }
    for flag in ("triples", "types", "metapaths", "seed", "folds", "out"):
        value = getattr(args, flag, None)
        if value is not None:
            merged[flag] = value
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(merged) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    try:
        cfg = RunConfig(**merged)
    except TypeError as exc:
        raise ConfigError(f"incomplete config: {exc}") from None

    if cfg.model not in ALL_MODELS:
        raise ConfigError(
            f"model must be one of {', '.join(ALL_MODELS)}, got {cfg.model!r}"
        )
    if cfg.task and cfg.task not in TASK_PRESETS:
        raise ConfigError(
            f"task must be one of {', '.join(TASK_PRESETS)}, got {cfg.task!r}"
        )
    if not cfg.target_relation or not cfg.target_type:
        raise ConfigError("config needs target_relation and target_type")
    if cfg.model == "polo" and not cfg.metapaths:
        raise ConfigError("model 'polo' requires a metapaths file")
    if cfg.filter_scope not in ("all", "train_valid"):
        raise ConfigError("filter_scope must be 'all' or 'train_valid'")
    if cfg.folds < 2:
        raise ConfigError("folds must be >= 2")
    return cfg


def thread_count():
    value = os.environ.get(THREADS_ENV_VAR, "1")
    try:
        return max(1, int(value))
    except ValueError:
        raise ConfigError(
            f"{THREADS_ENV_VAR} must be an integer, got {value!r}"
        ) from None


def _map_ordered(fn, items, threads):
    if threads <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _json_dump(payload, path):
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True)
        handle.write("\n")


# -- stats --------------------------------------------------------------------


def cmd_stats(args):
    kg = load_graph(args.triples, args.types)
    stats = graph_stats(kg)
    payload = stats.to_dict()
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _json_dump(payload, out / "stats.json")
        with open(out / "stats.txt", "w", encoding="utf-8") as handle:
            handle.write(_stats_text(payload))
    if args.format == "json":
        print(json.dumps(payload, indent=2, sort_keys=True))
    else:
        print(_stats_text(payload), end="")
    return 0


def _stats_text(payload):
    lines = [
        f"node_count\t{payload['node_count']}",
        f"edge_count\t{payload['edge_count']}",
        f"node_type_count\t{payload['node_type_count']}",
        f"edge_type_count\t{payload['edge_type_count']}",
        f"mean_degree\t{payload['mean_degree']:.4f}",
        f"degree_skew\t{payload['degree_skew']:.4f}",
    ]
    for pct, value in payload["degree_percentiles"]:
        lines.append(f"degree_p{int(pct)}\t{value:g}")
    return "\n".join(lines) + "\n"


# -- shared pipeline pieces -----------------------------------------------------


def _prepare(cfg):
    kg = load_graph(cfg.triples, cfg.types, action_seed=cfg.seed)
    try:
        target_rel = kg.relation_id(cfg.target_relation)
    except KeyError:
        raise ConfigError(
            f"target relation {cfg.target_relation!r} not in the graph"
        ) from None
    try:
        target_type = kg.type_id(cfg.target_type)
    except KeyError:
        raise ConfigError(
            f"target type {cfg.target_type!r} not in the graph"
        ) from None
    folds = split_folds(kg, target_rel, cfg.folds, cfg.seed)
    return kg, target_rel, target_type, folds


def _train_config(cfg):
    params = dict(cfg.train)
    base_seed = params.pop("seed", cfg.seed)
    base = training.TrainConfig(seed=base_seed, **params)
    if cfg.model == "minerva":
        base = dataclasses.replace(base, metapath_bonus=0.0)
    elif cfg.model == "polo" and base.metapath_bonus == 0.0:
        base = dataclasses.replace(base, metapath_bonus=0.1)
    return base


def _kge_config(cfg, fold_index=0):
    params = dict(cfg.kge)
    base_seed = params.pop("seed", cfg.seed)
    return kge.KgeTrainConfig(seed=base_seed + fold_index, **params)


def _fold_metapaths(cfg, kg_fold):
    if not cfg.metapaths:
        return []
    return load_metapaths(cfg.metapaths, kg_fold)


def _train_fold(cfg, kg_fold, split, fold_dir):
    """Train the configured model on one fold's graph; returns an inference
    callable mapping a Query to a PredictionList, after writing the
    checkpoint and training log."""
    train_cfg = _train_config(cfg)
    if cfg.model in WALKER_MODELS:
        metapaths = _fold_metapaths(cfg, kg_fold)
        seeded = dataclasses.replace(
            train_cfg, seed=train_cfg.seed + split.fold_index
        )
        params, _ = training.train(
            kg_fold,
            split,
            metapaths,
            seeded,
            log_path=fold_dir / "train_log.jsonl",
        )
        policy.save_policy(
            fold_dir / "checkpoint.npz",
            params,
            extra_meta={"model": cfg.model, "fold": split.fold_index},
        )

        def infer(query):
            return beam.beam_search(
                params,
                kg_fold,
                query,
                cfg.beam_width,
                seeded.max_steps,
                max_out=seeded.max_out,
            )

        return infer

    kge_cfg = _kge_config(cfg, split.fold_index)
    kind = kge.TRANSE if cfg.model in ("transe", "embedding_guided") else cfg.model
    params, _ = kge.train_kge(kg_fold, split, kge_cfg, kind)
    kge.save_kge(
        fold_dir / "checkpoint.npz",
        params,
        extra_meta={"model": cfg.model, "fold": split.fold_index},
    )
    if cfg.model == "embedding_guided":
        walk_steps = _train_config(cfg).max_steps

        def infer(query):
            return beam.embedding_guided_walk(
                params, kg_fold, query, cfg.beam_width, walk_steps
            )

        return infer

    def infer(query):
        return kge.rank_tails(params, kg_fold, query)

    return infer


def _fold_filter(cfg, kg, split):
    if cfg.filter_scope == "train_valid":
        return evaluation.FilterSet.from_triples(split.train, split.valid)
    return evaluation.FilterSet.from_triples(kg.triples)


def _test_queries(split, target_type):
    pairs = sorted({(int(h), int(r)) for h, r, _ in split.test})
    tails = {}
    for h, r, t in split.test:
        tails.setdefault((int(h), int(r)), set()).add(int(t))
    return [
        Query(
            head=h,
            relation=r,
            answers=frozenset(tails[(h, r)]),
            target_type=target_type,
        )
        for h, r in pairs
    ]


def _run_fold(cfg, kg, split, target_type, out_dir, threads):
    fold_dir = out_dir / "folds" / str(split.fold_index)
    fold_dir.mkdir(parents=True, exist_ok=True)
    kg_fold = augment_inverses(kg.with_triples(split.train))
    infer = _train_fold(cfg, kg_fold, split, fold_dir)

    queries = _test_queries(split, target_type)
    lists = _map_ordered(infer, queries, threads)
    by_key = {(q.head, q.relation): pl for q, pl in zip(queries, lists)}
    beam.dump_predictions(lists, kg_fold, fold_dir / "predictions.tsv")

    filter_set = _fold_filter(cfg, kg, split)
    pre_ranks, post_ranks = evaluation.rank_test_triples(
        by_key, split.test, filter_set, kg_fold
    )
    pre = evaluation.compute_metrics(pre_ranks)
    post = evaluation.compute_metrics(post_ranks)
    _json_dump(
        {
            "fold": split.fold_index,
            "pre_pruning": {**pre.values(), "num_queries": pre.num_queries},
            "pruned": {**post.values(), "num_queries": post.num_queries},
        },
        fold_dir / "metrics.json",
    )

    pruned_lists = [
        evaluation.prune_by_type(pl, target_type, kg_fold) for pl in lists
    ]
    # Witness validation must happen against this fold's own graph; the
    # registries are shared across folds, so rendered records stay valid
    # once collected.
    records = explain.explanation_records(pruned_lists, kg_fold)
    witnesses = [
        entry.witness
        for plist in pruned_lists
        for entry in plist.entries
        if entry.witness is not None
    ]
    return pre, post, records, witnesses, kg_fold


def _write_manifest(cfg, out_dir, extra=None):
    canonical = json.dumps(cfg.to_dict(), sort_keys=True)
    manifest = {
        "config": cfg.to_dict(),
        "config_sha256": hashlib.sha256(canonical.encode()).hexdigest(),
        "seed": cfg.seed,
        "fold_seeds": [cfg.seed + i for i in range(cfg.folds)],
        "versions": {
            "kgreason": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
    }
    if extra:
        manifest.update(extra)
    _json_dump(manifest, out_dir / "manifest.json")


def cmd_run(args):
    cfg = load_run_config(args)
    threads = thread_count()
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    kg, target_rel, target_type, folds = _prepare(cfg)

    searched = None
    if cfg.search:
        searched = _search_config(cfg, kg, folds)
        cfg = dataclasses.replace(cfg, train=searched)

    pre_folds, post_folds = [], []
    all_records, all_witnesses = [], []
    explain_kg = None
    for split in folds:
        pre, post, records, witnesses, kg_fold = _run_fold(
            cfg, kg, split, target_type, out_dir, threads
        )
        pre_folds.append(pre)
        post_folds.append(post)
        all_records.extend(records)
        all_witnesses.extend(witnesses)
        explain_kg = kg_fold

    pre_agg = evaluation.aggregate_folds(pre_folds)
    post_agg = evaluation.aggregate_folds(post_folds)
    _json_dump(
        {
            "model": cfg.model,
            "target_relation": cfg.target_relation,
            "folds": cfg.folds,
            "pre_pruning": pre_agg.to_dict(),
            "pruned": post_agg.to_dict(),
        },
        out_dir / "metrics.json",
    )
    text = evaluation.render_metrics_table(
        [{"model": cfg.model, "metrics": pre_agg}], "Results (pre-pruning)"
    )
    text += "\n" + evaluation.render_metrics_table(
        [{"model": cfg.model, "metrics": post_agg}], "Results (pruned)"
    )
    with open(out_dir / "metrics.txt", "w", encoding="utf-8") as handle:
        handle.write(text)

    if all_witnesses:
        explain.write_explanations(all_records, out_dir / "explanations.jsonl")
        # Metapath abstraction only touches the shared registries, so any
        # fold's graph works here.
        stats = explain.metapath_frequencies(
            all_witnesses, explain_kg, cfg.explain_top_k
        )
        explain.write_metapath_table(
            stats, out_dir / "metapaths.txt", out_dir / "metapaths.json"
        )

    _write_manifest(
        cfg,
        out_dir,
        extra={"searched_train_config": searched} if searched else None,
    )
    print(text, end="")
    return 0


def cmd_train(args):
    cfg = load_run_config(args)
    out_dir = Path(cfg.out)
    fold_index = args.fold
    kg, _, target_type, folds = _prepare(cfg)
    if not 0 <= fold_index < len(folds):
        raise ConfigError(f"fold must lie in [0, {len(folds) - 1}]")
    split = folds[fold_index]
    fold_dir = out_dir / "folds" / str(fold_index)
    fold_dir.mkdir(parents=True, exist_ok=True)
    kg_fold = augment_inverses(kg.with_triples(split.train))
    _train_fold(cfg, kg_fold, split, fold_dir)
    print(f"checkpoint written to {fold_dir / 'checkpoint.npz'}")
    return 0


def cmd_eval(args):
    cfg = load_run_config(args)
    kg, _, _, folds = _prepare(cfg)
    split = folds[args.fold]
    kg_fold = augment_inverses(kg.with_triples(split.train))
    lists = beam.load_predictions(args.predictions, kg_fold)
    filter_set = _fold_filter(cfg, kg, split)
    pre_ranks, post_ranks = evaluation.rank_test_triples(
        lists, split.test, filter_set, kg_fold
    )
    pre = evaluation.compute_metrics(pre_ranks)
    post = evaluation.compute_metrics(post_ranks)
    payload = {
        "fold": args.fold,
        "predictions": args.predictions,
        "pre_pruning": {**pre.values(), "num_queries": pre.num_queries},
        "pruned": {**post.values(), "num_queries": post.num_queries},
    }
    if args.format == "json":
        print(json.dumps(payload, indent=2, sort_keys=True))
    else:
        for scope in ("pre_pruning", "pruned"):
            row = payload[scope]
            cells = "  ".join(
                f"{name}={row[name]:.4f}" for name in evaluation.METRIC_NAMES
            )
            print(f"{scope}: {cells}")
    return 0


def _search_config(cfg, kg, folds):
    """Hyperparameter search on fold 0, scored by pruned validation MRR."""
    overrides = dict(cfg.search_overrides)
    if cfg.model in WALKER_MODELS:
        overrides.setdefault("seed", cfg.seed)
        grid = (
            training.minerva_grid(**overrides)
            if cfg.model == "minerva"
            else training.polo_grid(**overrides)
        )
        metapaths = (
            load_metapaths(cfg.metapaths, augment_inverses(kg))
            if cfg.metapaths
            else []
        )
        best, _ = training.grid_search(
            kg, folds, grid, metapaths, eval_width=cfg.beam_width
        )
        return {
            field.name: getattr(best, field.name)
            for field in dataclasses.fields(best)
        }
    raise ConfigError(
        "config-driven search currently covers the walker models; use "
        "kgreason search for embeddings"
    )


def cmd_search(args):
    cfg = load_run_config(args)
    kg, _, target_type, folds = _prepare(cfg)
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    if cfg.model in WALKER_MODELS:
        best = _search_config(cfg, kg, folds)
        _json_dump({"model": cfg.model, "best": best}, out_dir / "search.json")
        print(json.dumps(best, indent=2, sort_keys=True))
        return 0

    # Embedding models: random draws over the search space, scored like the
    # walker grid (pruned MRR on fold 0's validation triples).
    split = folds[0]
    kg_fold = augment_inverses(kg.with_triples(split.train))
    filter_set = _fold_filter(cfg, kg, split)
    kind = kge.TRANSE if cfg.model in ("transe", "embedding_guided") else cfg.model
    rows = []
    for draw in kge.sample_kge_configs(cfg.seed, **cfg.search_overrides):
        params, _ = kge.train_kge(kg_fold, split, draw, kind)
        lists = {}
        for h, r in sorted({(int(h), int(r)) for h, r, _ in split.valid}):
            query = Query(
                head=h, relation=r, answers=frozenset(), target_type=target_type
            )
            lists[(h, r)] = kge.rank_tails(params, kg_fold, query)
        _, post_ranks = evaluation.rank_test_triples(
            lists, split.valid, filter_set, kg_fold
        )
        score = evaluation.compute_metrics(post_ranks).mrr
        rows.append(
            {"config": dataclasses.asdict(draw), "pruned_valid_mrr": score}
        )
    rows.sort(key=lambda row: -row["pruned_valid_mrr"])
    _json_dump({"model": cfg.model, "table": rows}, out_dir / "search.json")
    print(json.dumps(rows[0], indent=2, sort_keys=True))
    return 0


# -- entry point ----------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="kgreason",
        description="Explainable multi-hop link prediction pipelines.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    stats = sub.add_parser("stats", help="profile a graph's structure")
    stats.add_argument("--triples", required=True)
    stats.add_argument("--types", required=True)
    stats.add_argument("--out", default=None)
    stats.add_argument("--format", choices=("text", "json"), default="text")
    stats.set_defaults(func=cmd_stats)

    def add_common(p):
        p.add_argument("--config", default=None)
        p.add_argument("--triples", default=None)
        p.add_argument("--types", default=None)
        p.add_argument("--metapaths", default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--folds", type=int, default=None)
        p.add_argument("--out", default=None)
        p.add_argument("--format", choices=("text", "json"), default="text")

    run = sub.add_parser("run", help="full pipeline: split, train, evaluate")
    add_common(run)
    run.set_defaults(func=cmd_run)

    tr = sub.add_parser("train", help="train one fold and write a checkpoint")
    add_common(tr)
    tr.add_argument("--fold", type=int, default=0)
    tr.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="score an existing prediction dump")
    add_common(ev)
    ev.add_argument("--fold", type=int, default=0)
    ev.add_argument("--predictions", required=True)
    ev.set_defaults(func=cmd_eval)

    se = sub.add_parser("search", help="hyperparameter search on fold 0")
    add_common(se)
    se.set_defaults(func=cmd_search)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (
        ConfigError,
        GraphFormatError,
        GraphValidationError,
        FileNotFoundError,
        training.TrainingDiverged,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
