"""Deterministic generators for test graphs.

The planted-rule graph makes end-to-end learning claims checkable at desk
scale: a treats edge exists exactly when a compound binds some gene that
associates with a disease, so a walker that discovers the rule can recover
held-out treats triples.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graph import NO_OP_RELATION, KnowledgeGraph

COMPOUND, GENE, DISEASE = "Compound", "Gene", "Disease"
PLANTED_TYPES = (COMPOUND, GENE, DISEASE)
RULE_RELATIONS = ("treats", "binds", "associates")

# Fixed distractor menu (name, source type, target type) so metapath tables
# in tests are stable across generator tweaks.
DISTRACTOR_RELATIONS = (
    ("resembles", COMPOUND, COMPOUND),
    ("participates", GENE, GENE),
    ("palliates", COMPOUND, DISEASE),
    ("upregulates", COMPOUND, GENE),
    ("localizes", DISEASE, DISEASE),
)

DEFAULT_RULE = (COMPOUND, "binds", GENE, "associates", DISEASE)


@dataclass(frozen=True)
class PlantedGraphSpec:
    """Parameters of the planted-rule generator.

    ``rule_edge_prob`` is the independent probability of each binds and each
    associates edge; ``distractor_prob`` plays the same role for every
    distractor relation. ``noise`` deletes that fraction of treats edges and
    inserts the same count of spurious ones.
    """

    n_compounds: int = 100
    n_genes: int = 50
    n_diseases: int = 40
    rule: tuple = field(default=DEFAULT_RULE)
    rule_edge_prob: float = 0.05
    distractor_prob: float = 0.05
    noise: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if min(self.n_compounds, self.n_genes, self.n_diseases) < 2:
            raise ValueError("entity counts must be >= 2")
        if not 0.0 <= self.noise < 1.0:
            raise ValueError("noise rate must lie in [0, 1)")


def _sample_pairs(rng, n_src, n_dst, prob, exclude_self=False):
    mask = rng.random((n_src, n_dst)) < prob
    if exclude_self:
        np.fill_diagonal(mask, False)
    return np.argwhere(mask)


def generate_planted(spec):
    """Build the planted-rule graph.

    Returns the graph (treats edges included) and the ground-truth treats
    triple array, which is what fold splitting partitions. With zero noise
    every treats triple has at least one binds/associates witness path by
    construction.
    """
    if spec.rule != DEFAULT_RULE:
        raise ValueError(
            "only the Compound-binds-Gene-associates-Disease rule is supported"
        )
    rng = np.random.default_rng(spec.seed)

    entity_names = (
        [f"compound_{i:03d}" for i in range(spec.n_compounds)]
        + [f"gene_{i:03d}" for i in range(spec.n_genes)]
        + [f"disease_{i:03d}" for i in range(spec.n_diseases)]
    )
    entity_types = np.concatenate(
        [
            np.full(spec.n_compounds, 0),
            np.full(spec.n_genes, 1),
            np.full(spec.n_diseases, 2),
        ]
    )
    gene0 = spec.n_compounds
    disease0 = spec.n_compounds + spec.n_genes

    relation_names = [NO_OP_RELATION] + list(RULE_RELATIONS) + [
        name for name, _, _ in DISTRACTOR_RELATIONS
    ]
    rid = {name: i for i, name in enumerate(relation_names)}

    binds = _sample_pairs(rng, spec.n_compounds, spec.n_genes, spec.rule_edge_prob)
    associates = _sample_pairs(
        rng, spec.n_genes, spec.n_diseases, spec.rule_edge_prob
    )

    # Rule closure: treats(c, d) iff some gene g has binds(c, g) and
    # associates(g, d).
    cg = np.zeros((spec.n_compounds, spec.n_genes), dtype=bool)
    cg[binds[:, 0], binds[:, 1]] = True
    gd = np.zeros((spec.n_genes, spec.n_diseases), dtype=bool)
    gd[associates[:, 0], associates[:, 1]] = True
    closure = np.argwhere(cg @ gd)
    if closure.shape[0] == 0:
        raise ValueError(
            "spec yields zero treats triples; raise rule_edge_prob or sizes"
        )

    treats = closure.copy()
    n_noise = int(round(spec.noise * treats.shape[0]))
    if n_noise:
        drop = rng.choice(treats.shape[0], size=n_noise, replace=False)
        kept = np.delete(treats, drop, axis=0)
        in_closure = np.zeros((spec.n_compounds, spec.n_diseases), dtype=bool)
        in_closure[closure[:, 0], closure[:, 1]] = True
        candidates = np.argwhere(~in_closure)
        spurious = candidates[
            rng.choice(candidates.shape[0], size=n_noise, replace=False)
        ]
        treats = np.concatenate([kept, spurious], axis=0)

    type_offset = {COMPOUND: 0, GENE: gene0, DISEASE: disease0}
    type_count = {
        COMPOUND: spec.n_compounds,
        GENE: spec.n_genes,
        DISEASE: spec.n_diseases,
    }
    rows = [
        np.column_stack(
            [
                treats[:, 0],
                np.full(treats.shape[0], rid["treats"]),
                treats[:, 1] + disease0,
            ]
        ),
        np.column_stack(
            [
                binds[:, 0],
                np.full(binds.shape[0], rid["binds"]),
                binds[:, 1] + gene0,
            ]
        ),
        np.column_stack(
            [
                associates[:, 0] + gene0,
                np.full(associates.shape[0], rid["associates"]),
                associates[:, 1] + disease0,
            ]
        ),
    ]
    for name, src, dst in DISTRACTOR_RELATIONS:
        pairs = _sample_pairs(
            rng,
            type_count[src],
            type_count[dst],
            spec.distractor_prob,
            exclude_self=(src == dst),
        )
        rows.append(
            np.column_stack(
                [
                    pairs[:, 0] + type_offset[src],
                    np.full(pairs.shape[0], rid[name]),
                    pairs[:, 1] + type_offset[dst],
                ]
            )
        )

    kg = KnowledgeGraph(
        entity_names,
        relation_names,
        PLANTED_TYPES,
        entity_types,
        np.concatenate(rows, axis=0),
        action_seed=spec.seed,
    )
    treats_triples = np.column_stack(
        [
            treats[:, 0],
            np.full(treats.shape[0], rid["treats"]),
            treats[:, 1] + disease0,
        ]
    ).astype(np.int64)
    order = np.lexsort(
        (treats_triples[:, 2], treats_triples[:, 1], treats_triples[:, 0])
    )
    return kg, treats_triples[order]


def generate_random(n_entities, n_relations, n_triples, n_types, seed):
    """Uniform random graph with exactly the requested counts of distinct
    triples, uniformly typed entities."""
    if n_entities < 1 or n_relations < 1 or n_types < 1:
        raise ValueError("counts must be positive")
    capacity = n_entities * n_entities * n_relations
    if n_triples > capacity:
        raise ValueError(
            f"cannot place {n_triples} distinct triples in a space of {capacity}"
        )
    rng = np.random.default_rng(seed)
    codes = rng.choice(capacity, size=n_triples, replace=False)
    heads, rem = np.divmod(codes, n_entities * n_relations)
    rels, tails = np.divmod(rem, n_entities)
    triples = np.column_stack([heads, rels + 1, tails])
    return KnowledgeGraph(
        [f"e{i}" for i in range(n_entities)],
        [NO_OP_RELATION] + [f"r{i}" for i in range(n_relations)],
        [f"T{i}" for i in range(n_types)],
        rng.integers(0, n_types, size=n_entities),
        triples,
        action_seed=seed,
    )
