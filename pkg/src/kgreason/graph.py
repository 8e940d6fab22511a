"""Typed multi-relational triple store: loading, validation, inverse
augmentation, adjacency indexing, fold splitting, and structural statistics.

The graph is immutable after construction and safe to share read-only across
any number of concurrent walkers and evaluators.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as _scipy_stats

logger = logging.getLogger(__name__)

NO_OP_RELATION = "__no_op__"
NO_OP_ID = 0
INVERSE_SUFFIX = "__inv"

DEGREE_PERCENTILES = (5, 25, 50, 75, 95)


class GraphFormatError(ValueError):
    """A graph input file is malformed (wrong field count, bad structure)."""


class GraphValidationError(ValueError):
    """Graph contents violate an integrity constraint."""


class KnowledgeGraph:
    """Immutable typed triple store with a deterministic adjacency index.

    Entities, relations and types are registered once and addressed by
    integer id. Relation id 0 is reserved for the NO_OP self-loop action,
    which is never materialized as a stored triple. Triples are kept
    deduplicated and lexicographically sorted, so the adjacency list of an
    entity is automatically ordered by (relation-id, tail-id).
    """

    def __init__(
        self,
        entity_names,
        relation_names,
        type_names,
        entity_types,
        triples,
        num_raw_relations=None,
        augmented=False,
        action_seed=0,
    ):
        self.entity_names = tuple(entity_names)
        self.relation_names = tuple(relation_names)
        self.type_names = tuple(type_names)
        if self.relation_names[:1] != (NO_OP_RELATION,):
            raise GraphValidationError(
                f"relation id {NO_OP_ID} must be reserved for {NO_OP_RELATION!r}"
            )

        self.entity_types = np.ascontiguousarray(entity_types, dtype=np.int64)
        self.entity_types.flags.writeable = False
        if self.entity_types.shape != (len(self.entity_names),):
            raise GraphValidationError("every entity needs exactly one type id")

        triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
        if triples.size:
            triples = np.unique(triples, axis=0)
        self.triples = triples
        self.triples.flags.writeable = False

        self.augmented = bool(augmented)
        if num_raw_relations is None:
            num_raw_relations = len(self.relation_names) - 1
        self.num_raw_relations = int(num_raw_relations)
        self.action_seed = int(action_seed)

        self._entity_index = {name: i for i, name in enumerate(self.entity_names)}
        self._relation_index = {name: i for i, name in enumerate(self.relation_names)}
        self._type_index = {name: i for i, name in enumerate(self.type_names)}
        if len(self._entity_index) != len(self.entity_names):
            raise GraphValidationError("duplicate entity names")
        if len(self._relation_index) != len(self.relation_names):
            raise GraphValidationError("duplicate relation names")

        self._validate_ids()
        self._adj_offsets = None
        self._triple_keys = None

    # -- registry -----------------------------------------------------------

    @property
    def num_entities(self):
        return len(self.entity_names)

    @property
    def num_relations(self):
        """Total relation-id count, including the reserved NO_OP slot."""
        return len(self.relation_names)

    @property
    def num_types(self):
        return len(self.type_names)

    @property
    def num_triples(self):
        return int(self.triples.shape[0])

    def entity_id(self, name):
        return self._entity_index[name]

    def relation_id(self, name):
        return self._relation_index[name]

    def type_id(self, name):
        return self._type_index[name]

    def type_of(self, entity):
        return int(self.entity_types[entity])

    def inverse_relation(self, relation):
        """Id of r^-1 for an augmented graph; NO_OP is self-inverse."""
        if not self.augmented:
            raise GraphValidationError("graph has no inverse relations yet")
        if relation == NO_OP_ID:
            return NO_OP_ID
        r = self.num_raw_relations
        if not 1 <= relation <= 2 * r:
            raise GraphValidationError(f"unknown relation id {relation}")
        return relation + r if relation <= r else relation - r

    # -- adjacency ----------------------------------------------------------

    def _ensure_adjacency(self):
        if self._adj_offsets is None:
            heads = self.triples[:, 0]
            self._adj_offsets = np.searchsorted(
                heads, np.arange(self.num_entities + 1)
            )
        return self._adj_offsets

    def out_edges(self, entity):
        """Outgoing (relation-id, tail-id) pairs sorted by (relation, tail)."""
        if not 0 <= entity < self.num_entities:
            raise GraphValidationError(f"unknown entity id {entity}")
        offsets = self._ensure_adjacency()
        return self.triples[offsets[entity] : offsets[entity + 1], 1:3]

    def out_actions(self, entity, max_out):
        """Action list for a walker at `entity`: NO_OP self-loop first, then
        outgoing edges in sorted order.

        When the out-degree exceeds ``max_out - 1`` a seeded uniform
        subsample (keyed by the graph's action_seed and the entity id, so it
        is identical across calls) is taken instead of truncating, which
        would bias toward low relation ids.
        """
        if max_out < 1:
            raise ValueError("max_out must be >= 1")
        edges = self.out_edges(entity)
        if edges.shape[0] > max_out - 1:
            rng = np.random.default_rng([self.action_seed, int(entity)])
            keep = np.sort(
                rng.choice(edges.shape[0], size=max_out - 1, replace=False)
            )
            edges = edges[keep]
        no_op = np.array([[NO_OP_ID, entity]], dtype=np.int64)
        return np.concatenate([no_op, edges], axis=0)

    def _ensure_triple_keys(self):
        if self._triple_keys is None:
            n_e, n_r = self.num_entities, self.num_relations
            if n_e and n_e * n_r * n_e >= 2**62:
                raise GraphValidationError("graph too large for key encoding")
            t = self.triples
            self._triple_keys = np.sort(
                (t[:, 0] * n_r + t[:, 1]) * n_e + t[:, 2]
            )
        return self._triple_keys

    def has_triple(self, head, relation, tail):
        keys = self._ensure_triple_keys()
        key = (head * self.num_relations + relation) * self.num_entities + tail
        i = np.searchsorted(keys, key)
        return bool(i < keys.size and keys[i] == key)

    def contains_triples(self, triples):
        """Vectorized membership test for an (n, 3) id array."""
        triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
        keys = self._ensure_triple_keys()
        probe = (
            triples[:, 0] * self.num_relations + triples[:, 1]
        ) * self.num_entities + triples[:, 2]
        idx = np.searchsorted(keys, probe)
        idx = np.minimum(idx, keys.size - 1)
        return (keys.size > 0) & (keys[idx] == probe)

    def entities_of_type(self, type_id):
        return np.flatnonzero(self.entity_types == type_id)

    # -- derivation ---------------------------------------------------------

    def with_triples(self, triples):
        """New graph over the same registries but a different triple set."""
        return KnowledgeGraph(
            self.entity_names,
            self.relation_names,
            self.type_names,
            self.entity_types,
            triples,
            num_raw_relations=self.num_raw_relations,
            augmented=self.augmented,
            action_seed=self.action_seed,
        )

    def _validate_ids(self):
        if self.triples.size == 0:
            return
        h, r, t = self.triples[:, 0], self.triples[:, 1], self.triples[:, 2]
        n_e, n_r = self.num_entities, self.num_relations
        if (h < 0).any() or (h >= n_e).any() or (t < 0).any() or (t >= n_e).any():
            raise GraphValidationError("triple references unregistered entity id")
        if (r < 1).any() or (r >= n_r).any():
            raise GraphValidationError(
                "triple references unregistered or reserved relation id"
            )
        if (self.entity_types < 0).any() or (
            self.entity_types >= max(self.num_types, 1)
        ).any():
            raise GraphValidationError("entity type id out of range")

    def __repr__(self):
        return (
            f"KnowledgeGraph(entities={self.num_entities}, "
            f"relations={self.num_relations - 1}, triples={self.num_triples}, "
            f"augmented={self.augmented})"
        )


def _read_tsv(path, n_fields):
    """Yield (lineno, fields) for every non-comment, non-blank line."""
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != n_fields:
                raise GraphFormatError(
                    f"{path}:{lineno}: expected {n_fields} tab-separated "
                    f"fields, got {len(fields)}"
                )
            yield lineno, fields


def load_graph(triples_path, types_path, action_seed=0):
    """Load a graph from a triples TSV (head, relation, tail) and an
    entity-type TSV (entity, type).

    Duplicate triples are dropped with a logged summary count. Every entity
    appearing in the triples file must have a type entry; offenders are
    reported together in one error.
    """
    entity_names = []
    entity_index = {}
    type_names = []
    type_index = {}
    entity_type_ids = []
    for lineno, (entity, type_name) in _read_tsv(types_path, 2):
        tid = type_index.setdefault(type_name, len(type_names))
        if tid == len(type_names):
            type_names.append(type_name)
        known = entity_index.get(entity)
        if known is None:
            entity_index[entity] = len(entity_names)
            entity_names.append(entity)
            entity_type_ids.append(tid)
        elif entity_type_ids[known] != tid:
            raise GraphValidationError(
                f"{types_path}:{lineno}: entity {entity!r} declared with "
                f"conflicting types {type_names[entity_type_ids[known]]!r} "
                f"and {type_name!r}"
            )

    relation_names = [NO_OP_RELATION]
    relation_index = {NO_OP_RELATION: NO_OP_ID}
    rows = []
    missing = {}
    n_lines = 0
    for lineno, (head, relation, tail) in _read_tsv(triples_path, 3):
        n_lines += 1
        rid = relation_index.setdefault(relation, len(relation_names))
        if rid == len(relation_names):
            relation_names.append(relation)
        hid = entity_index.get(head)
        tid = entity_index.get(tail)
        if hid is None:
            missing.setdefault(head, lineno)
        if tid is None:
            missing.setdefault(tail, lineno)
        if hid is None or tid is None:
            continue
        rows.append((hid, rid, tid))

    if missing:
        names = sorted(missing)
        shown = ", ".join(repr(n) for n in names[:20])
        more = "" if len(names) <= 20 else f" (and {len(names) - 20} more)"
        raise GraphValidationError(
            f"{len(names)} entities in {triples_path} have no type entry in "
            f"{types_path}: {shown}{more}"
        )

    triples = np.array(rows, dtype=np.int64).reshape(-1, 3)
    kg = KnowledgeGraph(
        entity_names,
        relation_names,
        type_names,
        np.array(entity_type_ids, dtype=np.int64),
        triples,
        action_seed=action_seed,
    )
    duplicates = n_lines - kg.num_triples
    if duplicates:
        logger.info(
            "load_graph: dropped %d duplicate triple(s) out of %d lines",
            duplicates,
            n_lines,
        )
    return kg


def augment_inverses(kg):
    """Add (t, r^-1, h) for every (h, r, t), doubling triples and relations.

    Inverse relations are named ``<relation>__inv`` and get the id block
    directly after the raw relations, so ``inverse_relation`` is an
    involution. The input graph must not already contain inverse-marked
    relation names.
    """
    tainted = [
        name
        for name in kg.relation_names
        if name != NO_OP_RELATION and name.endswith(INVERSE_SUFFIX)
    ]
    if tainted:
        raise GraphValidationError(
            f"graph already carries inverse-marked relations: {tainted[:5]}"
        )
    raw = list(kg.relation_names[1:])
    generated = [name + INVERSE_SUFFIX for name in raw]
    collisions = set(generated) & set(kg.relation_names)
    if collisions:
        raise GraphValidationError(
            f"generated inverse names collide with existing relations: "
            f"{sorted(collisions)[:5]}"
        )

    n_raw = len(raw)
    forward = kg.triples
    backward = np.empty_like(forward)
    backward[:, 0] = forward[:, 2]
    backward[:, 1] = forward[:, 1] + n_raw
    backward[:, 2] = forward[:, 0]
    return KnowledgeGraph(
        kg.entity_names,
        [NO_OP_RELATION] + raw + generated,
        kg.type_names,
        kg.entity_types,
        np.concatenate([forward, backward], axis=0),
        num_raw_relations=n_raw,
        augmented=True,
        action_seed=kg.action_seed,
    )


@dataclass(frozen=True)
class DatasetSplit:
    """One cross-validation fold.

    ``train`` holds every non-target triple plus the fold's training share
    of the target relation; ``valid`` and ``test`` hold target triples only.
    The target-relation subsets of the three parts partition the target
    triple set of the source graph.
    """

    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray
    target_relation: int
    fold_index: int
    seed: int

    @property
    def target_train_count(self):
        return int((self.train[:, 1] == self.target_relation).sum())


def _sorted_rows(rows):
    rows = np.ascontiguousarray(rows, dtype=np.int64).reshape(-1, 3)
    order = np.lexsort((rows[:, 2], rows[:, 1], rows[:, 0]))
    out = rows[order]
    out.flags.writeable = False
    return out


def split_folds(kg, target_relation, k, seed, valid_fraction=0.2):
    """Seeded k-fold split of the target-relation triples.

    Each target triple lands in exactly one fold's test set; the remaining
    target triples are divided train/valid at ``1 - valid_fraction`` /
    ``valid_fraction``; non-target triples always stay in train.
    """
    if kg.augmented:
        raise GraphValidationError("split folds on the pre-augmentation graph")
    if isinstance(target_relation, str):
        target_relation = kg.relation_id(target_relation)
    if k < 2:
        raise ValueError("k must be >= 2")
    mask = kg.triples[:, 1] == target_relation
    target = kg.triples[mask]
    rest = kg.triples[~mask]
    m = target.shape[0]
    if m < k:
        raise ValueError(
            f"target relation has {m} triples, fewer than k={k} folds"
        )

    rng = np.random.default_rng(seed)
    perm = rng.permutation(m)
    base, extra = divmod(m, k)
    bounds = np.cumsum([0] + [base + (1 if i < extra else 0) for i in range(k)])

    splits = []
    for i in range(k):
        test_idx = perm[bounds[i] : bounds[i + 1]]
        rem_idx = np.concatenate([perm[: bounds[i]], perm[bounds[i + 1] :]])
        n_train = int((1.0 - valid_fraction) * rem_idx.size)
        splits.append(
            DatasetSplit(
                train=_sorted_rows(
                    np.concatenate([rest, target[rem_idx[:n_train]]], axis=0)
                ),
                valid=_sorted_rows(target[rem_idx[n_train:]]),
                test=_sorted_rows(target[test_idx]),
                target_relation=int(target_relation),
                fold_index=i,
                seed=int(seed),
            )
        )
    return splits


@dataclass(frozen=True)
class GraphStats:
    """Structural profile of a raw (pre-augmentation) graph."""

    node_count: int
    edge_count: int
    node_type_count: int
    edge_type_count: int
    mean_degree: float
    degree_percentiles: tuple = field(default_factory=tuple)
    degree_skew: float = 0.0

    def to_dict(self):
        return {
            "node_count": self.node_count,
            "edge_count": self.edge_count,
            "node_type_count": self.node_type_count,
            "edge_type_count": self.edge_type_count,
            "mean_degree": self.mean_degree,
            "degree_percentiles": [list(p) for p in self.degree_percentiles],
            "degree_skew": self.degree_skew,
        }


def _nearest_rank(sorted_values, percentile):
    n = sorted_values.size
    rank = int(np.ceil(percentile / 100.0 * n))
    return float(sorted_values[max(rank, 1) - 1])


def graph_stats(kg):
    """Counts and undirected-degree statistics: mean degree is 2|E|/|V| on
    the raw triple set, percentiles use the nearest-rank method.
    """
    if kg.augmented:
        raise GraphValidationError("statistics are defined on the raw graph")
    if kg.num_triples == 0:
        raise GraphValidationError("statistics are undefined for an empty graph")
    n = kg.num_entities
    degrees = np.bincount(kg.triples[:, 0], minlength=n) + np.bincount(
        kg.triples[:, 2], minlength=n
    )
    ordered = np.sort(degrees)
    return GraphStats(
        node_count=n,
        edge_count=kg.num_triples,
        node_type_count=kg.num_types,
        edge_type_count=kg.num_relations - 1,
        mean_degree=2.0 * kg.num_triples / n,
        degree_percentiles=tuple(
            (p, _nearest_rank(ordered, p)) for p in DEGREE_PERCENTILES
        ),
        degree_skew=float(_scipy_stats.skew(degrees)),
    )


def write_graph_tsv(kg, triples_path, types_path):
    """Emit the graph in the TSV formats load_graph consumes."""
    if kg.augmented:
        raise GraphValidationError("write the raw graph, not the augmented one")
    with open(types_path, "w", encoding="utf-8") as handle:
        for entity, tid in zip(kg.entity_names, kg.entity_types):
            handle.write(f"{entity}\t{kg.type_names[tid]}\n")
    with open(triples_path, "w", encoding="utf-8") as handle:
        for h, r, t in kg.triples:
            handle.write(
                f"{kg.entity_names[h]}\t{kg.relation_names[r]}\t"
                f"{kg.entity_names[t]}\n"
            )
