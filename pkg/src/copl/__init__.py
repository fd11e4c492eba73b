"""Collaborative preference learning at desk scale.

Learn per-user embeddings from sparse pairwise annotations via signed
bipartite message passing, condition a reward model on them through
routed low-rank experts, and adapt to new users without optimization.
"""

__version__ = "0.1.0"

from .adapt import (
    AdaptConfig,
    UnseenUser,
    adapt_embedding,
    adaptation_weights,
    alignment_score,
    khop_positive_users,
    naive_average,
    user_opt,
)
from .gcf import (
    EmbeddingTable,
    GcfHyperparams,
    GcfModel,
    gcf_loss,
    predict_pair,
    propagate,
    score,
    train_gcf,
)
from .graph import SignedBipartiteGraph, build_graph, norm_factor
from .harness import (
    ExperimentConfig,
    MetricsReport,
    breakdown_common_controversial,
    eval_gnn_testacc,
    group_oracle_baseline,
    imbalance_sweep,
    run_experiment,
    uniform_baseline,
)
from .mole import (
    MoleConfig,
    MoleLayer,
    MoleRewardModel,
    RewardTrainConfig,
    adapted_matrix,
    expert_allocation,
    gate_weights,
    reward,
    train_reward,
)
from .prefdata import (
    Annotation,
    DirichletSpec,
    GeneratorConfig,
    GroupSpec,
    PreferenceDataset,
    Regime,
    ResponseFeatures,
    SurveyItem,
    UserProfile,
    annotate,
    generate_dataset,
    generate_survey,
    generate_users,
    sample_annotations,
    tag_pairs,
)
