"""Stochastic walking policy with exact analytic gradients.

Architecture: entity/relation embedding tables, a single-layer gated
recurrent history encoder, and a two-layer tanh scorer that maps the state
encoding [hidden; current-entity emb; query-relation emb] to a key that is
dotted against per-action keys [relation emb; tail emb] projected by a
shared matrix. Probabilities are a softmax over the legal-action list.

All gradients are hand-derived backpropagation through the episode; there
is no autodiff framework underneath. The same replay code computes the
scalar objective, which keeps finite-difference checks honest: perturbing a
parameter and re-running the loss exercises exactly the path the analytic
gradient differentiates.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

PARAM_NAMES = (
    "ent_emb",
    "rel_emb",
    "w_forget",
    "u_forget",
    "b_forget",
    "w_reset",
    "u_reset",
    "b_reset",
    "w_cand",
    "u_cand",
    "b_cand",
    "w_hidden",
    "b_hidden",
    "w_score",
    "b_score",
    "w_action",
)


@dataclass
class PolicyParams:
    """All trainable arrays plus the shape hyperparameters."""

    emb_dim: int
    hidden_dim: int
    ent_emb: np.ndarray
    rel_emb: np.ndarray
    w_forget: np.ndarray
    u_forget: np.ndarray
    b_forget: np.ndarray
    w_reset: np.ndarray
    u_reset: np.ndarray
    b_reset: np.ndarray
    w_cand: np.ndarray
    u_cand: np.ndarray
    b_cand: np.ndarray
    w_hidden: np.ndarray
    b_hidden: np.ndarray
    w_score: np.ndarray
    b_score: np.ndarray
    w_action: np.ndarray

    def arrays(self):
        return {name: getattr(self, name) for name in PARAM_NAMES}

    @property
    def num_entities(self):
        return self.ent_emb.shape[0]

    @property
    def num_relations(self):
        return self.rel_emb.shape[0]

    @property
    def dtype(self):
        return self.ent_emb.dtype

    def copy(self):
        kept = {f.name: getattr(self, f.name) for f in fields(self)}
        for name in PARAM_NAMES:
            kept[name] = kept[name].copy()
        return PolicyParams(**kept)


def init_policy(
    num_entities, num_relations, emb_dim, hidden_dim, seed, dtype=np.float64
):
    """Uniform init in [-1/sqrt(d), 1/sqrt(d)]; retention-gate bias starts
    at 1.0 so early training keeps history across the episode horizon."""
    rng = np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(emb_dim)
    d, h = emb_dim, hidden_dim

    def uniform(*shape):
        return rng.uniform(-bound, bound, size=shape).astype(dtype)

    return PolicyParams(
        emb_dim=d,
        hidden_dim=h,
        ent_emb=uniform(num_entities, d),
        rel_emb=uniform(num_relations, d),
        w_forget=uniform(h, 2 * d),
        u_forget=uniform(h, h),
        b_forget=np.ones(h, dtype=dtype),
        w_reset=uniform(h, 2 * d),
        u_reset=uniform(h, h),
        b_reset=np.zeros(h, dtype=dtype),
        w_cand=uniform(h, 2 * d),
        u_cand=uniform(h, h),
        b_cand=np.zeros(h, dtype=dtype),
        w_hidden=uniform(h, h + 2 * d),
        b_hidden=np.zeros(h, dtype=dtype),
        w_score=uniform(d, h),
        b_score=np.zeros(d, dtype=dtype),
        w_action=uniform(d, 2 * d),
    )


def zero_gradients(params):
    return {name: np.zeros_like(arr) for name, arr in params.arrays().items()}


def initial_hidden(params, batch_size=None):
    shape = (
        (params.hidden_dim,)
        if batch_size is None
        else (batch_size, params.hidden_dim)
    )
    return np.zeros(shape, dtype=params.dtype)


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# -- recurrent history encoder ------------------------------------------------
#
# Gated cell with a retention (forget) gate f and reset gate r:
#   x      = [rel_emb[rel]; ent_emb[tail]]
#   f      = sigmoid(x Wf' + h Uf' + bf)
#   r      = sigmoid(x Wr' + h Ur' + br)
#   cand   = tanh(x Wc' + (r * h) Uc' + bc)
#   h_new  = f * h + (1 - f) * cand
#
# The full recurrent state is the single H-vector h, and bias bf = 1 makes
# the cell history-preserving at initialization.


def _cell_forward(params, h_prev, rel, tail):
    x = np.concatenate(
        [params.rel_emb[rel], params.ent_emb[tail]], axis=-1
    )
    a_f = x @ params.w_forget.T + h_prev @ params.u_forget.T + params.b_forget
    f = _sigmoid(a_f)
    a_r = x @ params.w_reset.T + h_prev @ params.u_reset.T + params.b_reset
    r = _sigmoid(a_r)
    rh = r * h_prev
    a_c = x @ params.w_cand.T + rh @ params.u_cand.T + params.b_cand
    cand = np.tanh(a_c)
    h_new = f * h_prev + (1.0 - f) * cand
    cache = (x, rel, tail, h_prev, f, r, rh, cand)
    return h_new, cache


def _cell_backward(params, cache, dh_new, grads):
    x, rel, tail, h_prev, f, r, rh, cand = cache
    d = params.emb_dim

    df = dh_new * (h_prev - cand)
    da_f = df * f * (1.0 - f)
    dcand = dh_new * (1.0 - f)
    da_c = dcand * (1.0 - cand * cand)
    dh = dh_new * f

    grads["w_cand"] += da_c.T @ x
    grads["u_cand"] += da_c.T @ rh
    grads["b_cand"] += da_c.sum(axis=0)
    drh = da_c @ params.u_cand
    dr = drh * h_prev
    dh += drh * r
    da_r = dr * r * (1.0 - r)

    grads["w_reset"] += da_r.T @ x
    grads["u_reset"] += da_r.T @ h_prev
    grads["b_reset"] += da_r.sum(axis=0)
    dh += da_r @ params.u_reset

    grads["w_forget"] += da_f.T @ x
    grads["u_forget"] += da_f.T @ h_prev
    grads["b_forget"] += da_f.sum(axis=0)
    dh += da_f @ params.u_forget

    dx = da_f @ params.w_forget + da_r @ params.w_reset + da_c @ params.w_cand
    np.add.at(grads["rel_emb"], rel, dx[..., :d])
    np.add.at(grads["ent_emb"], tail, dx[..., d:])
    return dh


def encode_history(params, prev_hidden, action):
    """One recurrent update for a single taken (relation, entity) action."""
    rel, tail = action
    h_new, _ = _cell_forward(
        params,
        np.asarray(prev_hidden, dtype=params.dtype)[None, :],
        np.array([rel]),
        np.array([tail]),
    )
    return h_new[0]


# -- action scoring -----------------------------------------------------------


@dataclass(frozen=True)
class ActionDistribution:
    probabilities: np.ndarray
    log_probabilities: np.ndarray

    def __post_init__(self):
        total = float(self.probabilities.sum())
        if not np.isfinite(total) or abs(total - 1.0) > 1e-9:
            raise ValueError(f"probabilities sum to {total}, not 1")

    def __len__(self):
        return self.probabilities.shape[0]


def state_encoding(params, hidden, current, query_relation):
    """Concatenated [hidden; current-entity emb; query-relation emb]."""
    return np.concatenate(
        [hidden, params.ent_emb[current], params.rel_emb[query_relation]]
    )


def _score_forward(params, h_prev, cur, qrel, act_rel, act_tail, act_mask):
    v = np.concatenate(
        [h_prev, params.ent_emb[cur], params.rel_emb[qrel]], axis=1
    )
    z1 = v @ params.w_hidden.T + params.b_hidden
    a1 = np.tanh(z1)
    svec = a1 @ params.w_score.T + params.b_score
    u = np.concatenate(
        [params.rel_emb[act_rel], params.ent_emb[act_tail]], axis=2
    )
    keys = u @ params.w_action.T
    logits = np.einsum("bkd,bd->bk", keys, svec)
    logits = np.where(act_mask, logits, -np.inf)

    peak = logits.max(axis=1, keepdims=True)
    shifted = logits - peak
    weights = np.where(act_mask, np.exp(shifted), 0.0)
    denom = weights.sum(axis=1, keepdims=True)
    probs = weights / denom
    with np.errstate(divide="ignore"):
        log_probs = np.where(act_mask, shifted - np.log(denom), -np.inf)
    cache = (v, a1, svec, u, keys, probs, cur, qrel, act_rel, act_tail, act_mask)
    return probs, log_probs, cache


def _score_backward(params, cache, dlogits, grads):
    v, a1, svec, u, keys, _, cur, qrel, act_rel, act_tail, _ = cache
    hdim, d = params.hidden_dim, params.emb_dim

    dsvec = np.einsum("bk,bkd->bd", dlogits, keys)
    dkeys = dlogits[:, :, None] * svec[:, None, :]
    grads["w_action"] += np.einsum("bkd,bke->de", dkeys, u)
    du = dkeys @ params.w_action
    np.add.at(grads["rel_emb"], act_rel, du[:, :, :d])
    np.add.at(grads["ent_emb"], act_tail, du[:, :, d:])

    grads["w_score"] += dsvec.T @ a1
    grads["b_score"] += dsvec.sum(axis=0)
    da1 = dsvec @ params.w_score
    dz1 = da1 * (1.0 - a1 * a1)
    grads["w_hidden"] += dz1.T @ v
    grads["b_hidden"] += dz1.sum(axis=0)
    dv = dz1 @ params.w_hidden

    np.add.at(grads["ent_emb"], cur, dv[:, hdim : hdim + d])
    np.add.at(grads["rel_emb"], qrel, dv[:, hdim + d :])
    return dv[:, :hdim]


def score_actions(params, state_enc, actions):
    """Distribution over an ordered (relation, tail) action list."""
    actions = np.asarray(actions, dtype=np.int64).reshape(-1, 2)
    if actions.shape[0] == 0:
        raise ValueError("action list must be non-empty")
    state_enc = np.asarray(state_enc, dtype=params.dtype)

    a1 = np.tanh(state_enc @ params.w_hidden.T + params.b_hidden)
    svec = a1 @ params.w_score.T + params.b_score
    u = np.concatenate(
        [params.rel_emb[actions[:, 0]], params.ent_emb[actions[:, 1]]], axis=1
    )
    logits = (u @ params.w_action.T) @ svec
    shifted = logits - logits.max()
    weights = np.exp(shifted)
    probs = weights / weights.sum()
    log_probs = shifted - np.log(weights.sum())
    return ActionDistribution(probabilities=probs, log_probabilities=log_probs)


def sample_indices(probs, uniforms, valid_counts=None):
    """Row-wise inverse-CDF sampling: the drawn index is the first one whose
    cumulative probability exceeds the uniform draw."""
    cdf = np.cumsum(probs, axis=1)
    indices = (cdf <= uniforms[:, None]).sum(axis=1)
    limit = (
        probs.shape[1] if valid_counts is None else valid_counts
    )
    return np.minimum(indices, np.asarray(limit) - 1)


def sample_action(dist, rng):
    """Inverse-CDF draw; returns (index, log probability of the index)."""
    index = int(
        sample_indices(
            dist.probabilities[None, :], np.array([rng.random()])
        )[0]
    )
    return index, float(dist.log_probabilities[index])


def action_distribution_batch(
    params, hidden, cur, qrel, act_rel, act_tail, act_mask
):
    """Batched softmax over padded per-row action lists; pad positions get
    probability zero and log probability -inf."""
    probs, log_probs, _ = _score_forward(
        params, hidden, cur, qrel, act_rel, act_tail, act_mask
    )
    return probs, log_probs


def encode_history_batch(params, hidden, rel, tail):
    h_new, _ = _cell_forward(params, hidden, rel, tail)
    return h_new


# -- episodes -----------------------------------------------------------------


@dataclass
class EpisodeRecord:
    """Everything needed to replay one episode's distributions exactly:
    the start entity, the query relation, the ordered legal-action array at
    every step, and the index chosen at every step."""

    start: int
    query_relation: int
    action_lists: list
    chosen: list

    @property
    def num_steps(self):
        return len(self.chosen)


@dataclass
class EpisodeBatch:
    """Column-wise batch of same-horizon episodes, padded per step."""

    start: np.ndarray
    query_relation: np.ndarray
    act_rel: list
    act_tail: list
    act_mask: list
    chosen: list

    @property
    def batch_size(self):
        return self.start.shape[0]

    @property
    def num_steps(self):
        return len(self.chosen)


def batch_from_records(records):
    horizons = {r.num_steps for r in records}
    if len(horizons) != 1:
        raise ValueError("episodes in a batch must share the horizon")
    (steps,) = horizons
    b = len(records)
    act_rel, act_tail, act_mask, chosen = [], [], [], []
    for s in range(steps):
        width = max(r.action_lists[s].shape[0] for r in records)
        rels = np.zeros((b, width), dtype=np.int64)
        tails = np.zeros((b, width), dtype=np.int64)
        mask = np.zeros((b, width), dtype=bool)
        picks = np.zeros(b, dtype=np.int64)
        for i, rec in enumerate(records):
            acts = rec.action_lists[s]
            k = acts.shape[0]
            rels[i, :k] = acts[:, 0]
            tails[i, :k] = acts[:, 1]
            mask[i, :k] = True
            picks[i] = rec.chosen[s]
        act_rel.append(rels)
        act_tail.append(tails)
        act_mask.append(mask)
        chosen.append(picks)
    return EpisodeBatch(
        start=np.array([r.start for r in records], dtype=np.int64),
        query_relation=np.array(
            [r.query_relation for r in records], dtype=np.int64
        ),
        act_rel=act_rel,
        act_tail=act_tail,
        act_mask=act_mask,
        chosen=chosen,
    )


def episode_objective(
    params, batch, advantages, entropy_weight, weights=None, want_grads=True
):
    """Replay a batch of episodes and return (loss, grads, per-step stats).

    The objective is the weighted sum over episodes of
        -advantage * sum_s log pi(a_s)  -  entropy_weight * sum_s H(pi_s),
    with weights defaulting to 1/batch_size. Gradients cover every
    parameter array, including the embedding tables.
    """
    b, steps = batch.batch_size, batch.num_steps
    advantages = np.asarray(advantages, dtype=params.dtype)
    if weights is None:
        weights = np.full(b, 1.0 / b, dtype=params.dtype)
    else:
        weights = np.asarray(weights, dtype=params.dtype)

    rows = np.arange(b)
    hidden = initial_hidden(params, b)
    cur = batch.start.copy()
    score_caches, cell_caches = [], []
    log_probs = np.zeros((b, steps), dtype=params.dtype)
    entropies = np.zeros((b, steps), dtype=params.dtype)
    chosen_probs_cache = []

    for s in range(steps):
        probs, logp, cache = _score_forward(
            params,
            hidden,
            cur,
            batch.query_relation,
            batch.act_rel[s],
            batch.act_tail[s],
            batch.act_mask[s],
        )
        picks = batch.chosen[s]
        log_probs[:, s] = logp[rows, picks]
        entropies[:, s] = -np.where(
            batch.act_mask[s], probs * np.where(probs > 0, logp, 0.0), 0.0
        ).sum(axis=1)
        score_caches.append(cache)
        chosen_probs_cache.append((probs, logp))
        rel = batch.act_rel[s][rows, picks]
        tail = batch.act_tail[s][rows, picks]
        if s < steps - 1:
            hidden, ccache = _cell_forward(params, hidden, rel, tail)
            cell_caches.append(ccache)
        cur = tail

    per_episode = (
        -advantages * log_probs.sum(axis=1)
        - entropy_weight * entropies.sum(axis=1)
    )
    loss = float(np.dot(weights, per_episode))
    if not want_grads:
        return loss, None, (log_probs, entropies)

    grads = zero_gradients(params)
    dh = np.zeros((b, params.hidden_dim), dtype=params.dtype)
    for s in reversed(range(steps)):
        dh_prev = np.zeros_like(dh)
        if s < steps - 1:
            dh_prev += _cell_backward(params, cell_caches[s], dh, grads)
        probs, logp = chosen_probs_cache[s]
        mask = batch.act_mask[s]
        onehot = np.zeros_like(probs)
        onehot[rows, batch.chosen[s]] = 1.0
        coef = weights[:, None]
        dlogits = coef * (
            advantages[:, None] * (probs - onehot)
            + entropy_weight
            * probs
            * (np.where(mask, logp, 0.0) + entropies[:, s][:, None])
        )
        dlogits = np.where(mask, dlogits, 0.0)
        dh_prev += _score_backward(params, score_caches[s], dlogits, grads)
        dh = dh_prev
    return loss, grads, (log_probs, entropies)


def save_policy(path, params, extra_meta=None):
    """Write a bit-exact checkpoint of all parameter arrays plus the shape
    hyperparameters."""
    from .checkpoint import save_checkpoint

    meta = {
        "emb_dim": params.emb_dim,
        "hidden_dim": params.hidden_dim,
        "num_entities": params.num_entities,
        "num_relations": params.num_relations,
        "dtype": str(params.dtype),
    }
    if extra_meta:
        meta.update(extra_meta)
    save_checkpoint(path, "policy", meta, params.arrays())


def load_policy(path):
    from .checkpoint import load_checkpoint

    kind, meta, arrays = load_checkpoint(path)
    if kind != "policy":
        raise ValueError(f"checkpoint holds a {kind!r} model, not a policy")
    return PolicyParams(
        emb_dim=meta["emb_dim"], hidden_dim=meta["hidden_dim"], **arrays
    )


def episode_loss(params, record, advantage, entropy_weight):
    """Scalar REINFORCE-with-entropy objective for a single replayed
    episode; the finite-difference oracle differentiates this."""
    batch = batch_from_records([record])
    loss, _, _ = episode_objective(
        params,
        batch,
        np.array([advantage]),
        entropy_weight,
        weights=np.array([1.0]),
        want_grads=False,
    )
    return loss


def policy_gradients(params, record, advantage, entropy_weight):
    """Analytic gradients of the single-episode objective for every
    parameter array."""
    batch = batch_from_records([record])
    _, grads, _ = episode_objective(
        params,
        batch,
        np.array([advantage]),
        entropy_weight,
        weights=np.array([1.0]),
        want_grads=True,
    )
    return grads
