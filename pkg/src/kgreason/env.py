"""Deterministic walking environment over an augmented graph.

States, legal actions, fixed-horizon termination, and the terminal reward
with optional metapath shaping. The environment holds no mutable state of
its own; each episode owns its WalkState values, so any number of episodes
can run concurrently against the shared immutable graph.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graph import NO_OP_ID, GraphFormatError, GraphValidationError


@dataclass(frozen=True)
class Query:
    """A (head, relation, ?) question with its hidden answer set."""

    head: int
    relation: int
    answers: frozenset
    target_type: int

    def __post_init__(self):
        object.__setattr__(self, "answers", frozenset(self.answers))


@dataclass(frozen=True)
class WalkState:
    query: Query
    current: int
    step: int
    history: tuple = ()

    def __post_init__(self):
        if self.step != len(self.history):
            raise ValueError("step counter must equal history length")


@dataclass(frozen=True)
class Metapath:
    """Type-level pattern: (type, relation, type, ..., type)."""

    pattern: tuple
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "pattern", tuple(self.pattern))


@dataclass(frozen=True)
class Rollout:
    """A finished walk: (relation, entity) steps with the summed log
    probability of the actions that produced it."""

    query: Query
    steps: tuple
    log_probability: float
    terminal: int

    def __post_init__(self):
        object.__setattr__(
            self, "steps", tuple((int(r), int(e)) for r, e in self.steps)
        )


@dataclass(frozen=True)
class PredictionEntry:
    entity: int
    score: float
    witness: Rollout | None = None


@dataclass(frozen=True)
class PredictionList:
    """Scored, deduplicated candidate answers for one query.

    ``entries`` hold only candidates the producer actually scored (for a
    walker: entities some path reached), sorted by score descending.
    ``universe`` is the full set of entities eligible for ranking; universe
    members absent from the entries are failed walks and rank behind every
    listed candidate.
    """

    query: Query
    entries: tuple
    universe: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        universe = np.asarray(self.universe, dtype=np.int64)
        universe.flags.writeable = False
        object.__setattr__(self, "universe", universe)
        scores = [e.score for e in self.entries]
        if any(a < b for a, b in zip(scores, scores[1:])):
            raise ValueError("entries must be sorted by score descending")
        seen = {e.entity for e in self.entries}
        if len(seen) != len(self.entries):
            raise ValueError("entries must be deduplicated per entity")

    @property
    def entities(self):
        return np.array([e.entity for e in self.entries], dtype=np.int64)


@dataclass(frozen=True)
class EpisodeConfig:
    max_steps: int = 3
    metapath_bonus: float = 0.0
    terminal_reward: float = 1.0

    def __post_init__(self):
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if self.metapath_bonus < 0:
            raise ValueError("metapath_bonus must be >= 0")


class WalkEnvironment:
    """Fixed-horizon MDP over the augmented graph.

    ``mask_query_edges`` removes each direct edge (query.relation, a) for
    a in query.answers whenever the walker stands at the query head (a
    step-0-only mask leaks: NO_OP defers the hop by one step and the direct
    edge becomes visible again). Training environments enable it so the
    policy cannot collapse onto the one-hop answer edge; evaluation
    environments leave it off, since test edges are absent from the walking
    graph anyway.
    """

    def __init__(self, kg, max_steps, mask_query_edges=False, max_out=200):
        if not kg.augmented:
            raise GraphValidationError("walk environments need inverse edges")
        if max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        self.kg = kg
        self.max_steps = int(max_steps)
        self.mask_query_edges = bool(mask_query_edges)
        self.max_out = int(max_out)
        self._action_cache = {}

    def _actions_at(self, entity):
        cached = self._action_cache.get(entity)
        if cached is None:
            cached = self.kg.out_actions(entity, self.max_out)
            cached.flags.writeable = False
            self._action_cache[entity] = cached
        return cached

    def reset(self, query):
        if not 0 <= query.head < self.kg.num_entities:
            raise GraphValidationError(f"unknown query head {query.head}")
        return WalkState(query=query, current=query.head, step=0)

    def legal_actions(self, state):
        """Ordered (relation, tail) action array for a non-terminal state."""
        if state.step >= self.max_steps:
            raise ValueError("episode is terminal; no legal actions")
        actions = self._actions_at(state.current)
        if self.mask_query_edges and state.current == state.query.head:
            q = state.query
            drop = (actions[:, 0] == q.relation) & np.isin(
                actions[:, 1], sorted(q.answers)
            )
            if drop.any():
                actions = actions[~drop]
        return actions

    def step(self, state, action_index):
        actions = self.legal_actions(state)
        if not 0 <= action_index < actions.shape[0]:
            raise IndexError(
                f"action index {action_index} out of range for "
                f"{actions.shape[0]} legal actions"
            )
        relation, tail = (int(x) for x in actions[action_index])
        return WalkState(
            query=state.query,
            current=tail,
            step=state.step + 1,
            history=state.history + ((relation, tail),),
        )

    def rollout_from(self, state, log_probability=0.0):
        """Package a terminal state as a Rollout."""
        if state.step != self.max_steps:
            raise ValueError("rollout requires a terminal state")
        return Rollout(
            query=state.query,
            steps=state.history,
            log_probability=float(log_probability),
            terminal=state.current,
        )


def path_pattern(kg, query_head, steps):
    """Abstract a walk to its type-level pattern, deleting NO_OP steps.

    An all-NO_OP walk degenerates to the single-element pattern holding just
    the head's type id.
    """
    pattern = [kg.type_of(query_head)]
    for relation, entity in steps:
        if relation == NO_OP_ID:
            continue
        pattern.append(int(relation))
        pattern.append(kg.type_of(entity))
    return tuple(pattern)


def match_metapath(kg, path, metapath):
    """True iff the NO_OP-stripped walk matches the pattern exactly; partial
    or substring matches do not count."""
    return path_pattern(kg, path.query.head, path.steps) == metapath.pattern


def terminal_reward(kg, path, query, metapaths, cfg):
    """Hit indicator scaled by the terminal reward, plus the metapath bonus
    if any pattern matches (granted once, not per pattern)."""
    reward = cfg.terminal_reward if path.terminal in query.answers else 0.0
    if cfg.metapath_bonus and any(
        match_metapath(kg, path, mp) for mp in metapaths
    ):
        reward += cfg.metapath_bonus
    return reward


def load_metapaths(path, kg):
    """Read one tab-separated pattern per line: Type, relation, Type, ...

    Patterns must alternate registered type and relation names, start and
    end with a type, span at least one relation, and never use NO_OP.
    Inverse relations are written with the ``__inv`` suffix.
    """
    metapaths = []
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line or line.startswith("#"):
                continue
            tokens = line.split("\t")
            if len(tokens) < 3 or len(tokens) % 2 == 0:
                raise GraphFormatError(
                    f"{path}:{lineno}: pattern needs an odd token count >= 3"
                )
            pattern = []
            try:
                for i, token in enumerate(tokens):
                    if i % 2 == 0:
                        pattern.append(kg.type_id(token))
                    else:
                        rid = kg.relation_id(token)
                        if rid == NO_OP_ID:
                            raise GraphFormatError(
                                f"{path}:{lineno}: NO_OP cannot appear in a "
                                f"metapath"
                            )
                        pattern.append(rid)
            except KeyError as exc:
                raise GraphValidationError(
                    f"{path}:{lineno}: unknown type or relation {exc.args[0]!r}"
                ) from None
            metapaths.append(Metapath(pattern=tuple(pattern), name=line))
    return metapaths


def render_metapath(kg, metapath):
    """Human-readable ``Type -rel-> Type`` form of a pattern."""
    pattern = metapath.pattern
    parts = [kg.type_names[pattern[0]]]
    for i in range(1, len(pattern), 2):
        parts.append(f"-{kg.relation_names[pattern[i]]}->")
        parts.append(kg.type_names[pattern[i + 1]])
    return " ".join(parts)


def strip_no_ops(rollout):
    """The same walk with NO_OP steps deleted."""
    return Rollout(
        query=rollout.query,
        steps=tuple(s for s in rollout.steps if s[0] != NO_OP_ID),
        log_probability=rollout.log_probability,
        terminal=rollout.terminal,
    )


def render_path(kg, head, steps):
    """Serialize a walk as ``e0 -r1-> e1 -r2-> e2`` using display names."""
    parts = [kg.entity_names[head]]
    for relation, entity in steps:
        parts.append(f"-{kg.relation_names[relation]}->")
        parts.append(kg.entity_names[entity])
    return " ".join(parts)


def parse_path(kg, text, query, log_probability=0.0):
    """Parse a rendered walk back into a Rollout.

    Requires relation names free of whitespace (the TSV loaders never
    produce any, since fields are tab-separated and names rarely carry
    ``' -'``/``'-> '`` delimiters).
    """
    tokens = text.split(" ")
    if len(tokens) % 2 == 0:
        raise GraphFormatError(f"malformed path {text!r}")
    head = kg.entity_id(tokens[0])
    if head != query.head:
        raise GraphValidationError(
            f"path starts at {tokens[0]!r}, not the query head"
        )
    steps = []
    for i in range(1, len(tokens), 2):
        arrow = tokens[i]
        if not (arrow.startswith("-") and arrow.endswith("->")):
            raise GraphFormatError(f"malformed arrow {arrow!r} in {text!r}")
        steps.append(
            (kg.relation_id(arrow[1:-2]), kg.entity_id(tokens[i + 1]))
        )
    terminal = steps[-1][1] if steps else head
    return Rollout(
        query=query,
        steps=tuple(steps),
        log_probability=log_probability,
        terminal=terminal,
    )


def validate_witness(kg, rollout):
    """Check every non-NO_OP step is a graph edge and NO_OP steps stay in
    place; raises on the first violation."""
    current = rollout.query.head
    for relation, entity in rollout.steps:
        if relation == NO_OP_ID:
            if entity != current:
                raise GraphValidationError(
                    f"NO_OP step moved from {current} to {entity}"
                )
        elif not kg.has_triple(current, relation, entity):
            raise GraphValidationError(
                f"edge ({current}, {relation}, {entity}) not in the graph"
            )
        current = entity
    if current != rollout.terminal:
        raise GraphValidationError("terminal does not match the path end")
