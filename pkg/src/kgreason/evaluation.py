"""Standardized ranking protocol: filtered, deduplicated, tail-sided,
optionally type-pruned, with pessimistic tie handling.

Pessimistic means the answer is ranked behind every candidate tying its
score, and candidates no walk reached are ranked behind every listed one
(and pessimistically among themselves). This convention can only understate
results, never inflate them, and it makes pre-pruning numbers meaningful
for walkers whose beams miss the answer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .env import PredictionList

METRIC_NAMES = ("hits1", "hits3", "hits10", "mrr")


class FilterSet:
    """Known-true tails per (head, relation), usually built from the union
    of train, valid and test triples. The triple being scored is never
    filtered against itself."""

    def __init__(self, known_true):
        self._known = {
            key: frozenset(tails) for key, tails in known_true.items()
        }

    @classmethod
    def from_triples(cls, *triple_arrays):
        known = {}
        for arr in triple_arrays:
            for h, r, t in np.asarray(arr, dtype=np.int64).reshape(-1, 3):
                known.setdefault((int(h), int(r)), set()).add(int(t))
        return cls(known)

    def tails(self, head, relation):
        return self._known.get((head, relation), frozenset())


def filtered_rank(predictions, answer, filter_set):
    """Pessimistic filtered rank of ``answer`` inside the prediction list's
    eligible universe.

    Known-true tails other than the answer are removed from both the listed
    candidates and the unlisted remainder of the universe. A listed answer
    ranks 1 + (#strictly better) + (#ties); an unlisted answer ranks last:
    behind all listed candidates and all other unlisted eligible entities.
    """
    query = predictions.query
    universe = predictions.universe
    if not np.isin(answer, universe).any():
        raise ValueError(
            f"answer {answer} is not in the prediction list's universe"
        )
    known = filter_set.tails(query.head, query.relation) - {answer}
    known_arr = np.fromiter(known, dtype=np.int64, count=len(known))
    n_eligible = int(universe.size - np.isin(universe, known_arr).sum())

    entities = predictions.entities
    scores = np.array([e.score for e in predictions.entries])
    eligible = np.isin(entities, universe) & ~np.isin(entities, known_arr)

    hit = np.flatnonzero(entities == answer)
    if hit.size == 0:
        return n_eligible
    answer_score = scores[hit[0]]
    others = eligible & (entities != answer)
    better = int((scores[others] > answer_score).sum())
    ties = int((scores[others] == answer_score).sum())
    return 1 + better + ties


def prune_by_type(predictions, target_type, kg):
    """Drop entries and universe members whose entity type differs from the
    query's expected target type; order is preserved and the eligible
    universe shrinks accordingly."""
    entries = tuple(
        e for e in predictions.entries if kg.type_of(e.entity) == target_type
    )
    universe = predictions.universe
    universe = universe[kg.entity_types[universe] == target_type]
    return PredictionList(
        query=predictions.query, entries=entries, universe=universe
    )


@dataclass(frozen=True)
class FoldMetrics:
    """HITS@K and MRR over one fold's query ranks."""

    hits1: float
    hits3: float
    hits10: float
    mrr: float
    num_queries: int

    def values(self):
        return {name: getattr(self, name) for name in METRIC_NAMES}


def compute_metrics(ranks):
    ranks = np.asarray(ranks)
    if ranks.size == 0:
        raise ValueError("metrics are undefined for an empty rank list")
    if (ranks < 1).any():
        raise ValueError("ranks must be >= 1")
    return FoldMetrics(
        hits1=float((ranks <= 1).mean()),
        hits3=float((ranks <= 3).mean()),
        hits10=float((ranks <= 10).mean()),
        mrr=float((1.0 / ranks).mean()),
        num_queries=int(ranks.size),
    )


@dataclass(frozen=True)
class AggregateMetrics:
    """Cross-fold mean and standard error (sample std / sqrt(n)) for every
    metric, with the per-fold reports kept for inspection."""

    per_fold: tuple
    mean: dict
    standard_error: dict

    def to_dict(self):
        return {
            "mean": dict(self.mean),
            "standard_error": dict(self.standard_error),
            "per_fold": [
                {**fold.values(), "num_queries": fold.num_queries}
                for fold in self.per_fold
            ],
        }


def aggregate_folds(per_fold):
    if len(per_fold) < 2:
        raise ValueError("aggregation needs at least 2 folds")
    mean, stderr = {}, {}
    for name in METRIC_NAMES:
        values = np.array([getattr(fold, name) for fold in per_fold])
        mean[name] = float(values.mean())
        stderr[name] = float(values.std(ddof=1) / np.sqrt(values.size))
    return AggregateMetrics(
        per_fold=tuple(per_fold), mean=mean, standard_error=stderr
    )


def rank_test_triples(prediction_lists, test_triples, filter_set, kg):
    """Pre- and post-pruning filtered ranks for each test triple, pruning
    to the type of each triple's own answer."""
    pre_ranks, post_ranks = [], []
    pruned_cache = {}
    for h, r, t in np.asarray(test_triples, dtype=np.int64).reshape(-1, 3):
        key = (int(h), int(r))
        plist = prediction_lists[key]
        pre_ranks.append(filtered_rank(plist, int(t), filter_set))
        target_type = kg.type_of(int(t))
        pruned = pruned_cache.get((key, target_type))
        if pruned is None:
            pruned = prune_by_type(plist, target_type, kg)
            pruned_cache[(key, target_type)] = pruned
        post_ranks.append(filtered_rank(pruned, int(t), filter_set))
    return np.array(pre_ranks), np.array(post_ranks)


def render_metrics_table(rows, title):
    """Aligned text table: one row per model, mean +/- standard error per
    metric, mirroring the paired pre-pruning/pruned presentation."""
    header = ["model"] + [name.upper() for name in METRIC_NAMES]
    lines = [title, ""]
    widths = [max(len(header[0]), *(len(r["model"]) for r in rows))]
    cells = []
    for row in rows:
        agg = row["metrics"]
        rendered = [
            f"{agg.mean[name]:.3f} ± {agg.standard_error[name]:.3f}"
            for name in METRIC_NAMES
        ]
        cells.append([row["model"]] + rendered)
    for col in range(1, len(header)):
        widths.append(
            max(len(header[col]), *(len(c[col]) for c in cells))
        )
    lines.append(
        "  ".join(h.ljust(widths[i]) for i, h in enumerate(header))
    )
    for row_cells in cells:
        lines.append(
            "  ".join(c.ljust(widths[i]) for i, c in enumerate(row_cells))
        )
    return "\n".join(lines) + "\n"
