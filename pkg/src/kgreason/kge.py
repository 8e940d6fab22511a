"""Translation and bilinear embedding baselines.

Scores (higher = more plausible):
  translation:  -|| e_h + e_r - e_t ||_2
  bilinear:     sum_i e_r[i] * (e_h[i] * e_t[i])

The bilinear score is written with the head-tail product formed first, so
swapping head and tail performs the identical float operations and the
symmetry invariant holds exactly, not just analytically.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass

import numpy as np

from .env import PredictionEntry, PredictionList
from .training import Adam, TrainingDiverged

logger = logging.getLogger(__name__)

TRANSE = "transe"
DISTMULT = "distmult"

KGE_EMB_SIZES = (128, 256, 512, 1024)
KGE_LEARNING_RATE_RANGE = (0.001, 0.2)
KGE_NEGATIVE_RANGE = (1, 500)
KGE_MAX_STEP_CHOICES = tuple(range(12000, 200001, 10000))


@dataclass
class KgeParams:
    kind: str
    ent_emb: np.ndarray
    rel_emb: np.ndarray

    def __post_init__(self):
        if self.kind not in (TRANSE, DISTMULT):
            raise ValueError(f"unknown embedding model kind {self.kind!r}")

    @property
    def dim(self):
        return self.ent_emb.shape[1]

    def copy(self):
        return KgeParams(self.kind, self.ent_emb.copy(), self.rel_emb.copy())


@dataclass(frozen=True)
class KgeTrainConfig:
    emb_dim: int = 128
    learning_rate: float = 0.01
    negatives_per_positive: int = 8
    max_steps: int = 12000
    margin: float = 1.0
    batch_size: int = 128
    filtered_negatives: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.negatives_per_positive < 1:
            raise ValueError("negatives_per_positive must be >= 1")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")


def init_kge(kind, num_entities, num_relations, emb_dim, seed):
    rng = np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(emb_dim)
    ent = rng.uniform(-bound, bound, size=(num_entities, emb_dim))
    rel = rng.uniform(-bound, bound, size=(num_relations, emb_dim))
    params = KgeParams(kind=kind, ent_emb=ent, rel_emb=rel)
    if kind == TRANSE:
        _renormalize_entities(params)
    return params


def _renormalize_entities(params):
    norms = np.linalg.norm(params.ent_emb, axis=1, keepdims=True)
    np.maximum(norms, 1e-12, out=norms)
    params.ent_emb /= norms


def score(params, head, relation, tail):
    """Plausibility of one triple."""
    eh = params.ent_emb[head]
    er = params.rel_emb[relation]
    et = params.ent_emb[tail]
    if params.kind == TRANSE:
        return float(-np.linalg.norm(eh + er - et))
    return float(np.sum(er * (eh * et)))


def score_tails(params, head, relation, tails):
    """Vector of scores for (head, relation, t) across candidate tails."""
    eh = params.ent_emb[head]
    er = params.rel_emb[relation]
    et = params.ent_emb[np.asarray(tails, dtype=np.int64)]
    if params.kind == TRANSE:
        return -np.linalg.norm((eh + er) - et, axis=1)
    return np.sum(er * (eh * et), axis=1)


def _corrupt(positives, num_entities, negatives_per_positive, rng):
    repeated = np.repeat(positives, negatives_per_positive, axis=0)
    corrupted = repeated.copy()
    corrupt_head = rng.random(corrupted.shape[0]) < 0.5
    replacements = rng.integers(0, num_entities, size=corrupted.shape[0])
    corrupted[corrupt_head, 0] = replacements[corrupt_head]
    corrupted[~corrupt_head, 2] = replacements[~corrupt_head]
    return repeated, corrupted


def _transe_batch(params, grads, triples, sign, active):
    """Accumulate d(loss)/d(params) for the distance term of each triple,
    weighted by sign * active."""
    h, r, t = triples[:, 0], triples[:, 1], triples[:, 2]
    diff = params.ent_emb[h] + params.rel_emb[r] - params.ent_emb[t]
    dist = np.linalg.norm(diff, axis=1)
    coef = sign * active / np.maximum(dist, 1e-12)
    ddiff = coef[:, None] * diff
    np.add.at(grads["ent"], h, ddiff)
    np.add.at(grads["rel"], r, ddiff)
    np.add.at(grads["ent"], t, -ddiff)
    return dist


def train_kge(kg, split, cfg, kind):
    """Stochastic negative-sampling training over the augmented training
    graph's triples.

    The translation model minimizes margin ranking loss and renormalizes
    entity embeddings to unit L2 norm after every update; the bilinear
    model minimizes logistic loss over uniform negatives. Loss is logged
    every 1000 steps; a non-finite loss aborts.
    """
    if not kg.augmented:
        raise ValueError("train_kge expects the inverse-augmented fold graph")
    del split  # the fold graph already carries exactly the training triples
    positives_pool = kg.triples
    if positives_pool.shape[0] == 0:
        raise ValueError("cannot train on an empty graph")
    rng = np.random.default_rng([cfg.seed, 11])
    params = init_kge(
        kind, kg.num_entities, kg.num_relations, cfg.emb_dim, cfg.seed
    )
    arrays = {"ent": params.ent_emb, "rel": params.rel_emb}
    optimizer = Adam(arrays, cfg.learning_rate)
    loss_log = []

    for step in range(cfg.max_steps):
        idx = rng.integers(
            0,
            positives_pool.shape[0],
            size=min(cfg.batch_size, positives_pool.shape[0]),
        )
        pos = positives_pool[idx]
        pos_rep, neg = _corrupt(
            pos, kg.num_entities, cfg.negatives_per_positive, rng
        )
        if cfg.filtered_negatives:
            for _ in range(10):
                clash = kg.contains_triples(neg)
                if not clash.any():
                    break
                neg[clash] = _corrupt(pos_rep[clash], kg.num_entities, 1, rng)[1]

        grads = {"ent": np.zeros_like(params.ent_emb),
                 "rel": np.zeros_like(params.rel_emb)}
        if kind == TRANSE:
            diff_p = (
                params.ent_emb[pos_rep[:, 0]]
                + params.rel_emb[pos_rep[:, 1]]
                - params.ent_emb[pos_rep[:, 2]]
            )
            diff_n = (
                params.ent_emb[neg[:, 0]]
                + params.rel_emb[neg[:, 1]]
                - params.ent_emb[neg[:, 2]]
            )
            dist_p = np.linalg.norm(diff_p, axis=1)
            dist_n = np.linalg.norm(diff_n, axis=1)
            violation = cfg.margin + dist_p - dist_n
            active = (violation > 0).astype(float) / pos_rep.shape[0]
            loss = float(np.mean(np.maximum(violation, 0.0)))
            _transe_batch(params, grads, pos_rep, +1.0, active)
            _transe_batch(params, grads, neg, -1.0, active)
        else:
            s_p = np.sum(
                params.rel_emb[pos[:, 1]]
                * (params.ent_emb[pos[:, 0]] * params.ent_emb[pos[:, 2]]),
                axis=1,
            )
            s_n = np.sum(
                params.rel_emb[neg[:, 1]]
                * (params.ent_emb[neg[:, 0]] * params.ent_emb[neg[:, 2]]),
                axis=1,
            )
            # logistic loss: softplus(-s) for positives, softplus(s) for
            # negatives, averaged over all scored triples
            n_total = s_p.size + s_n.size
            loss = float(
                (np.logaddexp(0.0, -s_p).sum() + np.logaddexp(0.0, s_n).sum())
                / n_total
            )
            dsp = -_sigmoid(-s_p) / n_total
            dsn = _sigmoid(s_n) / n_total
            _distmult_batch(params, grads, pos, dsp)
            _distmult_batch(params, grads, neg, dsn)

        if not np.isfinite(loss):
            raise TrainingDiverged(f"non-finite embedding loss at step {step}")
        optimizer.step(arrays, grads)
        if kind == TRANSE:
            _renormalize_entities(params)
        if step % 1000 == 0:
            loss_log.append((step, loss))
            logger.info("train_kge[%s] step %d loss %.5f", kind, step, loss)
    return params, loss_log


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _distmult_batch(params, grads, triples, dscore):
    h, r, t = triples[:, 0], triples[:, 1], triples[:, 2]
    eh = params.ent_emb[h]
    er = params.rel_emb[r]
    et = params.ent_emb[t]
    np.add.at(grads["ent"], h, dscore[:, None] * er * et)
    np.add.at(grads["rel"], r, dscore[:, None] * eh * et)
    np.add.at(grads["ent"], t, dscore[:, None] * er * eh)


def rank_tails(params, kg, query):
    """Score every entity as the tail of (head, relation, ?) and return the
    full descending list; ties order by entity id."""
    scores = score_tails(params, query.head, query.relation,
                         np.arange(kg.num_entities))
    order = np.lexsort((np.arange(kg.num_entities), -scores))
    entries = tuple(
        PredictionEntry(entity=int(e), score=float(scores[e]), witness=None)
        for e in order
    )
    return PredictionList(
        query=query, entries=entries, universe=np.arange(kg.num_entities)
    )


def save_kge(path, params, extra_meta=None):
    from .checkpoint import save_checkpoint

    meta = {"dim": params.dim}
    if extra_meta:
        meta.update(extra_meta)
    save_checkpoint(
        path,
        params.kind,
        meta,
        {"ent_emb": params.ent_emb, "rel_emb": params.rel_emb},
    )


def load_kge(path):
    from .checkpoint import load_checkpoint

    kind, _, arrays = load_checkpoint(path)
    if kind not in (TRANSE, DISTMULT):
        raise ValueError(f"checkpoint holds a {kind!r} model, not an embedding")
    return KgeParams(kind=kind, **arrays)


def sample_kge_configs(seed, n_draws=8, **overrides):
    """Random search draws: log-uniform learning rate over its continuous
    range, uniform picks over the discrete grids."""
    rng = np.random.default_rng(seed)
    lo, hi = np.log(KGE_LEARNING_RATE_RANGE[0]), np.log(
        KGE_LEARNING_RATE_RANGE[1]
    )
    configs = []
    for i in range(n_draws):
        base = KgeTrainConfig(
            emb_dim=int(rng.choice(KGE_EMB_SIZES)),
            learning_rate=float(np.exp(rng.uniform(lo, hi))),
            negatives_per_positive=int(
                rng.integers(KGE_NEGATIVE_RANGE[0], KGE_NEGATIVE_RANGE[1] + 1)
            ),
            max_steps=int(rng.choice(KGE_MAX_STEP_CHOICES)),
            seed=int(seed) + i,
        )
        configs.append(
            dataclasses.replace(base, **overrides) if overrides else base
        )
    return configs
