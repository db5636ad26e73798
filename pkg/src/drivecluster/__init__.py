"""Longitudinal driving-behavior discovery from intersection trajectories.

The pipeline compares trajectory pairs with an EKF over a kinematic bicycle
model, turns the time series of chi-squared membership probabilities into a
scalar negative log-likelihood, and clusters samples with an EM-style hard
clustering whose cluster count adapts through KL-divergence split and merge
tests.
"""

from .config import RunConfig
from .ekfsim import EkfConfig, MembershipSeries, chi2_4_survival, compare
from .emcluster import (
    Cluster,
    ClusterReport,
    Clustering,
    NllCache,
    allocate,
    em_loop,
    full_pipeline,
    kl_divergence_series,
    maximize_centroid,
    try_merge,
    try_split,
)
from .estimator import BehaviorClustering
from .initializers import (
    FeatureMatrix,
    agglomerative,
    feature_matrix,
    initial_clustering,
    pairwise_distance,
    pam,
    spectral,
    sweep,
)
from .semantics import (
    AssertivenessFeatures,
    BehaviorProfile,
    InteractionFeatures,
    assertiveness_features,
    behavior_profiles,
    count_infinite_nll,
    davies_bouldin,
    group_assertiveness,
    group_interaction,
    interaction_features,
)
from .trajdata import (
    ColumnSchema,
    Gate,
    ManeuverSet,
    ScenarioSpec,
    Trajectory,
    TrajectoryPoint,
    load_csv,
    load_maneuver_json,
    rectify,
    resample_profile,
    save_maneuver_json,
    synthesize,
    write_csv,
)

__all__ = [
    "AssertivenessFeatures",
    "BehaviorClustering",
    "BehaviorProfile",
    "Cluster",
    "ClusterReport",
    "Clustering",
    "ColumnSchema",
    "EkfConfig",
    "FeatureMatrix",
    "Gate",
    "InteractionFeatures",
    "ManeuverSet",
    "MembershipSeries",
    "NllCache",
    "RunConfig",
    "ScenarioSpec",
    "Trajectory",
    "TrajectoryPoint",
    "agglomerative",
    "allocate",
    "assertiveness_features",
    "behavior_profiles",
    "chi2_4_survival",
    "compare",
    "count_infinite_nll",
    "davies_bouldin",
    "em_loop",
    "feature_matrix",
    "full_pipeline",
    "group_assertiveness",
    "group_interaction",
    "initial_clustering",
    "interaction_features",
    "kl_divergence_series",
    "load_csv",
    "load_maneuver_json",
    "maximize_centroid",
    "pairwise_distance",
    "pam",
    "rectify",
    "resample_profile",
    "save_maneuver_json",
    "spectral",
    "sweep",
    "synthesize",
    "try_merge",
    "try_split",
    "write_csv",
]
