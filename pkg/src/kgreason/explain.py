"""Witness-path explanations: abstraction to metapaths, frequency tables,
and per-prediction export."""

from __future__ import annotations

import json
from dataclasses import dataclass

from .env import (
    Metapath,
    PredictionList,
    path_pattern,
    render_metapath,
    render_path,
    strip_no_ops,
    validate_witness,
)


@dataclass(frozen=True)
class MetapathStat:
    metapath: Metapath
    count: int
    percent: float


@dataclass(frozen=True)
class Explanation:
    """One exported prediction: the witness path rendered with display
    names (NO_OP steps omitted) and its type-level abstraction."""

    head: str
    relation: str
    predicted: str
    score: float
    path: str
    metapath: str


def abstract_path(path, kg):
    """Type-level abstraction of a finished walk: NO_OP steps deleted, each
    entity replaced by its type. An all-NO_OP walk degenerates to the
    single-element pattern holding the head's type."""
    pattern = path_pattern(kg, path.query.head, path.steps)
    name = render_metapath(kg, Metapath(pattern=pattern))
    return Metapath(pattern=pattern, name=name)


def metapath_frequencies(paths, kg, top_k=10):
    """Group walks by abstracted metapath and return the top_k most
    frequent, counts descending, ties in rendered lexicographic order.
    Percentages are relative to all walks, so a truncated table sums to
    at most 100."""
    if not paths:
        raise ValueError("metapath frequencies need at least one path")
    counts = {}
    for path in paths:
        mp = abstract_path(path, kg)
        entry = counts.get(mp.pattern)
        if entry is None:
            counts[mp.pattern] = [mp, 1]
        else:
            entry[1] += 1
    total = len(paths)
    ranked = sorted(counts.values(), key=lambda kv: (-kv[1], kv[0].name))
    return [
        MetapathStat(metapath=mp, count=n, percent=100.0 * n / total)
        for mp, n in ranked[:top_k]
    ]


def render_frequency_table(stats):
    """Aligned text rows ``pattern  percent%`` in table order."""
    width = max((len(s.metapath.name) for s in stats), default=0)
    lines = [
        f"{s.metapath.name.ljust(width)}  {s.percent:5.1f}%" for s in stats
    ]
    return "\n".join(lines) + "\n"


def write_metapath_table(stats, text_path, json_path):
    with open(text_path, "w", encoding="utf-8") as handle:
        handle.write(render_frequency_table(stats))
    payload = [
        {
            "metapath": s.metapath.name,
            "count": s.count,
            "percent": round(s.percent, 4),
        }
        for s in stats
    ]
    with open(json_path, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True)
        handle.write("\n")


def explanation_records(prediction_lists, kg):
    """Flatten prediction lists into Explanation records, validating every
    witness path against the graph."""
    if isinstance(prediction_lists, PredictionList):
        prediction_lists = [prediction_lists]
    records = []
    for plist in prediction_lists:
        head = kg.entity_names[plist.query.head]
        relation = kg.relation_names[plist.query.relation]
        for entry in plist.entries:
            if entry.witness is None:
                continue
            validate_witness(kg, entry.witness)
            stripped = strip_no_ops(entry.witness)
            records.append(
                Explanation(
                    head=head,
                    relation=relation,
                    predicted=kg.entity_names[entry.entity],
                    score=entry.score,
                    path=render_path(kg, plist.query.head, stripped.steps),
                    metapath=abstract_path(entry.witness, kg).name,
                )
            )
    return records


def write_explanations(records, path):
    with open(path, "w", encoding="utf-8") as handle:
        for record in records:
            handle.write(
                json.dumps(
                    {
                        "head": record.head,
                        "relation": record.relation,
                        "candidate": record.predicted,
                        "score": record.score,
                        "path": record.path,
                        "metapath": record.metapath,
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def export_explanations(prediction_lists, kg, path):
    """Write one JSON record per prediction, score descending within each
    query: query head, relation, candidate, score, rendered witness path
    (NO_OPs omitted), and the metapath string."""
    write_explanations(explanation_records(prediction_lists, kg), path)
