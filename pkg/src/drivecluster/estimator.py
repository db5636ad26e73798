"""Scikit-learn style estimator wrapping the full clustering pipeline.

BehaviorClustering accepts a ManeuverSet or any sequence of Trajectory
objects (variable-length inputs, so the usual array checks do not apply;
validation helpers below take their place) and exposes the familiar
fit / fit_predict / predict surface with get_params round-tripping.
"""

from __future__ import annotations

import math
from typing import Iterable

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin

from .ekfsim import EkfConfig
from .emcluster import NllCache, full_pipeline
from .initializers import INIT_METHODS, initial_clustering
from .trajdata import ManeuverSet, Trajectory


def as_trajectories(X) -> list[Trajectory]:
    """Validate estimator input: a ManeuverSet or an iterable of Trajectory
    with unique ids."""
    if isinstance(X, ManeuverSet):
        trajs = list(X.samples)
    elif isinstance(X, Trajectory):
        raise TypeError("X must be a collection of trajectories, not a single one")
    elif isinstance(X, Iterable):
        trajs = list(X)
        if not all(isinstance(t, Trajectory) for t in trajs):
            raise TypeError("X must contain Trajectory objects")
    else:
        raise TypeError(f"cannot interpret {type(X).__name__} as trajectories")
    if len(trajs) < 2:
        raise ValueError("need at least 2 trajectories")
    ids = [t.id for t in trajs]
    if len(set(ids)) != len(ids):
        raise ValueError("trajectory ids must be unique")
    return trajs


class BehaviorClustering(ClusterMixin, BaseEstimator):
    """Discover longitudinal driving-behavior clusters in one maneuver.

    Parameters mirror the pipeline configuration: the EKF comparison noise
    and cadence, the feature-space initializer, and the KL split/merge
    threshold t_kl (maneuver-specific, hence no default).

    Attributes after fit: labels_ (aligned with the input order),
    centroid_ids_, clustering_, report_, n_clusters_.
    """

    def __init__(self, t_kl, init="pam", n_clusters_init=5, n_resample=50,
                 r_diag=(0.01, 0.01, 0.005, 0.01), q_diag=(0.05, 0.05, 0.01, 0.1),
                 dt_predict=0.010, update_period=0.080, k_gain=2.5,
                 p_floor=1e-15, phi_max=0.61, v_floor=0.1,
                 max_em_iters=50, max_outer_iters=100, seed=0, n_jobs=1):
        self.t_kl = t_kl
        self.init = init
        self.n_clusters_init = n_clusters_init
        self.n_resample = n_resample
        self.r_diag = r_diag
        self.q_diag = q_diag
        self.dt_predict = dt_predict
        self.update_period = update_period
        self.k_gain = k_gain
        self.p_floor = p_floor
        self.phi_max = phi_max
        self.v_floor = v_floor
        self.max_em_iters = max_em_iters
        self.max_outer_iters = max_outer_iters
        self.seed = seed
        self.n_jobs = n_jobs

    def _ekf_config(self) -> EkfConfig:
        return EkfConfig(
            r_diag=tuple(self.r_diag), q_diag=tuple(self.q_diag),
            dt_predict=self.dt_predict, update_period=self.update_period,
            k_gain=self.k_gain, p_floor=self.p_floor,
            phi_max=self.phi_max, v_floor=self.v_floor,
        )

    def fit(self, X, y=None):
        """Run initialization plus the EM / split / merge loop on X."""
        trajs = as_trajectories(X)
        if self.init not in INIT_METHODS:
            raise ValueError(f"init must be one of {INIT_METHODS}")
        if not 1 <= self.n_clusters_init <= len(trajs):
            raise ValueError("n_clusters_init out of range")
        t_kl = float(self.t_kl)
        mset = X if isinstance(X, ManeuverSet) else ManeuverSet("fit", tuple(trajs))
        cfg = self._ekf_config()
        cache = NllCache(mset, cfg, n_jobs=self.n_jobs)
        init = initial_clustering(mset, self.init, self.n_clusters_init,
                                  seed=self.seed, n_resample=self.n_resample)
        clustering, report = full_pipeline(
            mset, init, cfg, t_kl, cache=cache,
            max_em_iters=self.max_em_iters, max_outer_iters=self.max_outer_iters)
        self.clustering_ = clustering
        self.report_ = report
        self.centroid_ids_ = clustering.centroid_ids
        self.labels_ = clustering.labels_for([t.id for t in trajs])
        self.n_clusters_ = clustering.n_clusters
        self._cache = cache
        self._centroid_trajs = {cid: mset.sample_by_id(cid)
                                for cid in self.centroid_ids_}
        return self

    def predict(self, X) -> np.ndarray:
        """Assign new trajectories to the fitted clusters by minimal NLL;
        -1 marks trajectories infinitely far from every centroid."""
        if not hasattr(self, "clustering_"):
            raise RuntimeError("fit the estimator before calling predict")
        from .ekfsim import compare

        trajs = as_trajectories(X) if not isinstance(X, Trajectory) else [X]
        cfg = self._ekf_config()
        order = sorted(self.centroid_ids_)
        labels = np.empty(len(trajs), dtype=int)
        for i, traj in enumerate(trajs):
            best, best_nll = -1, math.inf
            for j, cid in enumerate(order):
                nll = compare(traj, self._centroid_trajs[cid], cfg).nll
                if nll < best_nll:
                    best, best_nll = j, nll
            labels[i] = best
        return labels
