"""Hierarchical latent class regression (HLCR) and its federated variant."""
from hlcr.errors import (
    CheckpointError,
    DatasetFormatError,
    DowndateSingular,
    HLCRError,
    InvalidParameter,
    InvalidShape,
    NonPositiveDefinite,
)
from hlcr.federated import (
    AgentUpdate,
    GlobalModel,
    RoundConfig,
    agent_local_round,
    run_federated,
    server_aggregate,
)
from hlcr.inference import (
    LabelPosterior,
    add_entity,
    choose_label,
    label_posterior,
    label_prior,
    predict,
    predict_entity,
    remove_entity,
    sample_label,
    sequential_predictive,
    sweep,
    train_centralized,
)
from hlcr.linalg import invert, rank1_downdate_inverse, rank1_update_inverse
from hlcr.model import (
    Agent,
    ClusterStats,
    Entity,
    GroundTruth,
    HierDataset,
    Hyperparams,
    LabelAssignment,
    compute_cluster_stats,
    generate_synthetic,
    recount,
    split_heldout,
)

__version__ = "0.1.0"
