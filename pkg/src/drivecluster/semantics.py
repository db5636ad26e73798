"""Semantic grouping of final clusters and clustering-quality metrics.

Clusters are grouped twice over their centroid trajectories: by
assertiveness (initial speed plus hard-braking and strong-acceleration
durations) and by interaction (velocity-reduction ratio and time spent
almost stopped). Groups come from average-linkage clustering of the
z-scored features; assertiveness classes are named by descending mean
velocity from aggressive through normal grades to conservative.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.cluster.hierarchy as sch
from scipy.spatial.distance import pdist

from .emcluster import Clustering, NllCache, report_stats
from .initializers import FeatureMatrix
from .trajdata import DATA_DT, Trajectory

BRAKE_THRESHOLD = -2.0   # m/s^2
ACCEL_THRESHOLD = 1.5    # m/s^2
SLOW_THRESHOLD = 1.0     # m/s


class FeatureError(ValueError):
    """A trajectory cannot produce well-defined behavior features."""


class MetricError(ValueError):
    """A clustering metric is undefined for the given input."""


@dataclass(frozen=True)
class AssertivenessFeatures:
    v0: float        # initial longitudinal velocity, m/s
    t_brake: float   # seconds with a_lon below -2 m/s^2
    t_accel: float   # seconds with a_lon above 1.5 m/s^2


@dataclass(frozen=True)
class InteractionFeatures:
    v_reduction: float  # min(v) / v0, dimensionless
    t_slow: float       # seconds with v below 1 m/s


@dataclass(frozen=True)
class BehaviorProfile:
    cluster_id: str
    assertiveness_class: str
    interaction_class: str


def assertiveness_features(centroid: Trajectory) -> AssertivenessFeatures:
    v0 = centroid.points[0].v_lon
    if v0 <= 0:
        raise FeatureError(f"trajectory {centroid.id!r} starts stopped (v0 = 0)")
    accs = centroid.accs
    t_brake = float(np.sum(accs < BRAKE_THRESHOLD)) * DATA_DT
    t_accel = float(np.sum(accs > ACCEL_THRESHOLD)) * DATA_DT
    return AssertivenessFeatures(v0, t_brake, t_accel)


def interaction_features(centroid: Trajectory) -> InteractionFeatures:
    v0 = centroid.points[0].v_lon
    if v0 <= 0:
        raise FeatureError(f"trajectory {centroid.id!r} starts stopped (v0 = 0)")
    vs = centroid.vs
    v_reduction = float(np.min(vs)) / v0
    t_slow = float(np.sum(vs < SLOW_THRESHOLD)) * DATA_DT
    return InteractionFeatures(min(max(v_reduction, 0.0), 1.0), t_slow)


def _zscore(rows: np.ndarray) -> np.ndarray:
    mean = rows.mean(axis=0)
    std = rows.std(axis=0)
    std[std == 0.0] = 1.0
    return (rows - mean) / std


def _group(rows: np.ndarray, n_groups: int) -> np.ndarray:
    """Average-linkage grouping of feature rows; duplicate rows collapse, so
    the effective group count may be lower than requested."""
    n_distinct = len({tuple(r) for r in rows.tolist()})
    n_eff = min(n_groups, n_distinct, len(rows))
    if n_eff < n_groups:
        warnings.warn(f"only {n_eff} distinct feature rows; "
                      f"requested {n_groups} groups collapsed")
    if n_eff == 1:
        return np.zeros(len(rows), dtype=int)
    z = _zscore(rows)
    link = sch.linkage(pdist(z), method="average")
    return np.asarray(sch.fcluster(link, t=n_eff, criterion="maxclust")) - 1


def _assertiveness_names(n: int) -> list[str]:
    if n == 1:
        return ["normal 0"]
    return ["aggressive"] + [f"normal {i}" for i in range(n - 2)] + ["conservative"]


def group_assertiveness(centroids: Sequence[Trajectory], n_k_a: int) -> list[str]:
    """Assertiveness class per centroid; classes are ordered by descending
    mean longitudinal velocity (aggressive first, conservative last)."""
    feats = [assertiveness_features(c) for c in centroids]
    rows = np.array([[f.v0, f.t_brake, f.t_accel] for f in feats])
    groups = _group(rows, n_k_a)
    mean_v = np.array([float(c.vs.mean()) for c in centroids])
    order = sorted(set(groups.tolist()),
                   key=lambda g: -float(mean_v[groups == g].mean()))
    names = _assertiveness_names(len(order))
    name_of = {g: names[i] for i, g in enumerate(order)}
    return [name_of[g] for g in groups]


def group_interaction(centroids: Sequence[Trajectory], n_k_i: int) -> list[str]:
    """Interaction class per centroid; classes are numbered by descending
    mean velocity-reduction ratio (least yielding first)."""
    feats = [interaction_features(c) for c in centroids]
    rows = np.array([[f.v_reduction, f.t_slow] for f in feats])
    groups = _group(rows, n_k_i)
    red = rows[:, 0]
    order = sorted(set(groups.tolist()),
                   key=lambda g: -float(red[groups == g].mean()))
    name_of = {g: f"interaction {i}" for i, g in enumerate(order)}
    return [name_of[g] for g in groups]


def davies_bouldin(features: FeatureMatrix, clustering: Clustering) -> float:
    """Davies-Bouldin index over the feature matrix with medoid centers;
    lower is better. Coincident centers with non-zero scatter diverge."""
    if clustering.n_clusters < 2:
        raise MetricError("Davies-Bouldin needs at least 2 clusters")
    index_of = {sid: i for i, sid in enumerate(features.ids)}
    centers = []
    scatters = []
    for c in sorted(clustering.clusters, key=lambda c: c.centroid_id):
        rows = features.values[[index_of[m] for m in c.sorted_members]]
        center = features.values[index_of[c.centroid_id]]
        centers.append(center)
        scatters.append(float(np.mean(np.linalg.norm(rows - center, axis=1))))
    k = len(centers)
    db = 0.0
    for i in range(k):
        worst = 0.0
        for j in range(k):
            if i == j:
                continue
            sep = float(np.linalg.norm(centers[i] - centers[j]))
            if sep == 0.0:
                worst = math.inf
                break
            worst = max(worst, (scatters[i] + scatters[j]) / sep)
        db += worst
    return db / k


def count_infinite_nll(clustering: Clustering, cache: NllCache) -> int:
    """Members whose NLL to their own centroid is +inf."""
    return report_stats(clustering, cache)[2]


def behavior_profiles(clustering: Clustering, trajectories: dict[str, Trajectory],
                      n_k_a: int, n_k_i: int) -> list[BehaviorProfile]:
    """Attach one (assertiveness, interaction) label pair to every cluster."""
    clusters = sorted(clustering.clusters, key=lambda c: c.centroid_id)
    centroids = [trajectories[c.centroid_id] for c in clusters]
    assertive = group_assertiveness(centroids, n_k_a)
    interact = group_interaction(centroids, n_k_i)
    return [BehaviorProfile(c.centroid_id, a, i)
            for c, a, i in zip(clusters, assertive, interact)]


def profile_report(clustering: Clustering, trajectories: dict[str, Trajectory],
                   n_k_a: int, n_k_i: int, n_profile_points: int = 50) -> dict:
    """JSON-ready report: per-cluster features, class labels, and the
    class-ordered centroid velocity profiles."""
    from .trajdata import resample_profile

    profiles = behavior_profiles(clustering, trajectories, n_k_a, n_k_i)
    clusters = sorted(clustering.clusters, key=lambda c: c.centroid_id)
    entries = []
    for c, p in zip(clusters, profiles):
        traj = trajectories[c.centroid_id]
        af = assertiveness_features(traj)
        itf = interaction_features(traj)
        entries.append({
            "cluster_id": c.centroid_id,
            "n_members": len(c.member_ids),
            "assertiveness_class": p.assertiveness_class,
            "interaction_class": p.interaction_class,
            "features": {
                "v0": af.v0, "t_brake": af.t_brake, "t_accel": af.t_accel,
                "v_reduction": itf.v_reduction, "t_slow": itf.t_slow,
            },
            "centroid_velocity_profile": list(resample_profile(traj, n_profile_points)),
        })
    entries.sort(key=lambda e: (e["assertiveness_class"], e["interaction_class"],
                                e["cluster_id"]))
    n_k = clustering.n_clusters
    return {
        "n_k": n_k,
        "n_k_assertiveness": n_k_a,
        "n_k_interaction": n_k_i,
        "pairing_adjustment": n_k - n_k_a * n_k_i,
        "clusters": entries,
    }
