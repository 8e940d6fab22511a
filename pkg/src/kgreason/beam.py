"""Deterministic beam-search inference over graph walks.

Candidate answers are the terminal entities of the surviving paths,
deduplicated by keeping the maximum-log-probability path per entity; that
path is the prediction's witness. Entities no path reaches are absent from
the list and rank pessimistically downstream as failed walks.
"""

from __future__ import annotations

import numpy as np

from . import kge
from .env import PredictionEntry, PredictionList, Rollout, parse_path, render_path
from .policy import action_distribution_batch, encode_history_batch, initial_hidden


def _pad_actions(per_row):
    width = max(a.shape[0] for a in per_row)
    b = len(per_row)
    rels = np.zeros((b, width), dtype=np.int64)
    tails = np.zeros((b, width), dtype=np.int64)
    mask = np.zeros((b, width), dtype=bool)
    for i, acts in enumerate(per_row):
        k = acts.shape[0]
        rels[i, :k] = acts[:, 0]
        tails[i, :k] = acts[:, 1]
        mask[i, :k] = True
    return rels, tails, mask


class _ActionCache:
    def __init__(self, kg, max_out):
        self.kg = kg
        self.max_out = max_out
        self._cache = {}

    def __call__(self, entity):
        acts = self._cache.get(entity)
        if acts is None:
            acts = self.kg.out_actions(entity, self.max_out)
            self._cache[entity] = acts
        return acts


def _entries_from_terminals(query, ents, scores, paths):
    """Group terminal paths by entity, keep the best-scoring witness each,
    and order entries by (score desc, entity asc)."""
    order = np.lexsort((np.arange(len(ents)), -scores))
    best = {}
    for i in order:
        ent = int(ents[i])
        if ent not in best:
            best[ent] = (float(scores[i]), paths[i])
    ranked = sorted(best.items(), key=lambda kv: (-kv[1][0], kv[0]))
    entries = tuple(
        PredictionEntry(
            entity=ent,
            score=sc,
            witness=Rollout(
                query=query, steps=path, log_probability=sc, terminal=ent
            ),
        )
        for ent, (sc, path) in ranked
    )
    return entries


def beam_search(params, kg, query, width, steps, max_out=200):
    """Keep the ``width`` highest log-probability partial paths per step,
    expanding every legal action; ties break deterministically by parent
    order then action order."""
    if width < 1:
        raise ValueError("width must be >= 1")
    actions_at = _ActionCache(kg, max_out)

    ents = np.array([query.head], dtype=np.int64)
    logps = np.zeros(1)
    hidden = initial_hidden(params, 1)
    paths = [()]

    for s in range(steps):
        per_row = [actions_at(int(e)) for e in ents]
        rels, tails, mask = _pad_actions(per_row)
        qrel = np.full(ents.shape[0], query.relation, dtype=np.int64)
        _, log_probs = action_distribution_batch(
            params, hidden, ents, qrel, rels, tails, mask
        )
        cand = logps[:, None] + log_probs
        flat = cand.ravel()
        n_rows, n_cols = cand.shape
        item_idx = np.repeat(np.arange(n_rows), n_cols)
        act_idx = np.tile(np.arange(n_cols), n_rows)
        order = np.lexsort((act_idx, item_idx, -flat))
        n_valid = int(np.isfinite(flat).sum())
        take = order[: min(width, n_valid)]

        sel_items = item_idx[take]
        sel_acts = act_idx[take]
        sel_rels = rels[sel_items, sel_acts]
        sel_tails = tails[sel_items, sel_acts]
        logps = flat[take]
        paths = [
            paths[i] + ((int(r), int(t)),)
            for i, r, t in zip(sel_items, sel_rels, sel_tails)
        ]
        if s < steps - 1:
            hidden = encode_history_batch(
                params, hidden[sel_items], sel_rels, sel_tails
            )
        ents = sel_tails

    entries = _entries_from_terminals(query, ents, logps, paths)
    return PredictionList(
        query=query, entries=entries, universe=np.arange(kg.num_entities)
    )


def embedding_guided_walk(kge_params, kg, query, width, steps, max_out=200):
    """Beam search whose heuristic is single-hop embedding plausibility:
    a partial path is scored by the trained translation model's score of
    (query.head, query.relation, frontier entity), so the graph constrains
    what is reachable while the embedding ranks the frontier.

    Frontier entities are deduplicated every step (all paths reaching an
    entity tie by construction, so one witness per entity suffices); the
    retained witness is the first in parent-then-action order.
    """
    if width < 1:
        raise ValueError("width must be >= 1")
    actions_at = _ActionCache(kg, max_out)

    ents = np.array([query.head], dtype=np.int64)
    paths = [()]

    for _ in range(steps):
        per_row = [actions_at(int(e)) for e in ents]
        rels, tails, mask = _pad_actions(per_row)
        flat_keep = mask.ravel()
        n_rows, n_cols = mask.shape
        item_idx = np.repeat(np.arange(n_rows), n_cols)[flat_keep]
        cand_rels = rels.ravel()[flat_keep]
        cand_tails = tails.ravel()[flat_keep]

        first = {}
        for j in range(cand_tails.shape[0]):
            tail = int(cand_tails[j])
            if tail not in first:
                first[tail] = j
        unique_tails = np.array(sorted(first), dtype=np.int64)
        scores = kge.score_tails(
            kge_params, query.head, query.relation, unique_tails
        )
        order = np.lexsort((unique_tails, -scores))
        take = order[: min(width, unique_tails.shape[0])]
        kept = unique_tails[take]
        paths = [
            paths[item_idx[first[int(t)]]]
            + ((int(cand_rels[first[int(t)]]), int(t)),)
            for t in kept
        ]
        ents = kept

    final_scores = kge.score_tails(kge_params, query.head, query.relation, ents)
    entries = _entries_from_terminals(query, ents, final_scores, paths)
    return PredictionList(
        query=query, entries=entries, universe=np.arange(kg.num_entities)
    )


DUMP_HEADER = "# kgreason predictions v1"


def dump_predictions(prediction_lists, kg, path):
    """Write line-delimited prediction records: query head, relation,
    candidate, score, witness path (NO_OP steps included, so the dump is
    lossless)."""
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(DUMP_HEADER + "\n")
        for plist in prediction_lists:
            head = kg.entity_names[plist.query.head]
            relation = kg.relation_names[plist.query.relation]
            for entry in plist.entries:
                rendered = (
                    render_path(kg, plist.query.head, entry.witness.steps)
                    if entry.witness is not None
                    else kg.entity_names[entry.entity]
                )
                handle.write(
                    f"{head}\t{relation}\t{kg.entity_names[entry.entity]}\t"
                    f"{entry.score!r}\t{rendered}\n"
                )


def load_predictions(path, kg):
    """Read a prediction dump back into PredictionLists keyed by (head,
    relation) ids. All graph entities form the ranking universe, matching
    the pre-pruning convention of walker dumps."""
    from .env import Query
    from .graph import GraphFormatError

    grouped = {}
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 5:
                raise GraphFormatError(
                    f"{path}:{lineno}: expected 5 tab-separated fields, "
                    f"got {len(fields)}"
                )
            head_name, rel_name, cand_name, score_text, rendered = fields
            key = (kg.entity_id(head_name), kg.relation_id(rel_name))
            grouped.setdefault(key, []).append(
                (kg.entity_id(cand_name), float(score_text), rendered)
            )

    lists = {}
    for (head, relation), rows in grouped.items():
        query = Query(
            head=head, relation=relation, answers=frozenset(), target_type=0
        )
        entries = []
        for cand, score_value, rendered in rows:
            witness = parse_path(kg, rendered, query, score_value)
            if witness.terminal != cand:
                witness = None
            entries.append(
                PredictionEntry(entity=cand, score=score_value, witness=witness)
            )
        entries.sort(key=lambda e: (-e.score, e.entity))
        lists[(head, relation)] = PredictionList(
            query=query,
            entries=tuple(entries),
            universe=np.arange(kg.num_entities),
        )
    return lists
