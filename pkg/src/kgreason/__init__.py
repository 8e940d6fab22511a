"""Explainable multi-hop link prediction on heterogeneous knowledge graphs.

A reinforcement-learning walker (with optional metapath reward shaping) and
embedding baselines, evaluated under one standardized filtered/pruned
ranking protocol, with human-readable reasoning paths and metapath
statistics.
"""

from .graph import (
    DatasetSplit,
    GraphFormatError,
    GraphStats,
    GraphValidationError,
    KnowledgeGraph,
    NO_OP_ID,
    NO_OP_RELATION,
    augment_inverses,
    graph_stats,
    load_graph,
    split_folds,
    write_graph_tsv,
)
from .env import (
    EpisodeConfig,
    Metapath,
    PredictionEntry,
    PredictionList,
    Query,
    Rollout,
    WalkEnvironment,
    WalkState,
    load_metapaths,
    match_metapath,
    render_metapath,
    terminal_reward,
)
from .policy import (
    ActionDistribution,
    PolicyParams,
    encode_history,
    init_policy,
    policy_gradients,
    sample_action,
    score_actions,
    state_encoding,
)
from .training import (
    BaselineState,
    TrainConfig,
    TrainingDiverged,
    grid_search,
    metapath_match_rate,
    minerva_grid,
    polo_grid,
    train,
    update_baseline,
)
from .beam import beam_search, dump_predictions, embedding_guided_walk, load_predictions
from .kge import KgeParams, KgeTrainConfig, rank_tails, score, train_kge
from .evaluation import (
    AggregateMetrics,
    FilterSet,
    FoldMetrics,
    aggregate_folds,
    compute_metrics,
    filtered_rank,
    prune_by_type,
    rank_test_triples,
)
from .explain import (
    Explanation,
    MetapathStat,
    abstract_path,
    export_explanations,
    metapath_frequencies,
)
from .synth import PlantedGraphSpec, generate_planted, generate_random

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
