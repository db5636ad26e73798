"""Initial clusterings over a cheap velocity-profile feature space.

The EKF clustering loop needs a starting partition. Following common
practice, it comes from classic clustering (agglomerative, PAM or spectral)
of fixed-length resampled velocity profiles; the loop itself corrects any
rough edges. Cluster centroids are always medoids under the feature
distance.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.cluster.hierarchy as sch
import scipy.linalg
from scipy.spatial.distance import squareform
from sklearn.cluster import KMeans

from .ekfsim import EkfConfig
from .emcluster import Cluster, Clustering, ClusterReport, NllCache, full_pipeline
from .trajdata import ManeuverSet, resample_profile

INIT_METHODS = ("agglomerative", "pam", "spectral")


@dataclass(frozen=True)
class FeatureMatrix:
    """Per-sample z-scored velocity profile rows, ordered by sample id."""

    ids: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise ValueError("feature matrix contains non-finite values")


def feature_matrix(mset: ManeuverSet, n_resample: int = 50) -> FeatureMatrix:
    ids = tuple(sorted(mset.sample_ids))
    rows = np.array([resample_profile(mset.sample_by_id(i), n_resample) for i in ids])
    mean = rows.mean(axis=0)
    std = rows.std(axis=0)
    std[std == 0.0] = 1.0
    return FeatureMatrix(ids, (rows - mean) / std)


def pairwise_distance(f: FeatureMatrix) -> np.ndarray:
    """Euclidean distances between feature rows; symmetric, zero diagonal."""
    diff = f.values[:, None, :] - f.values[None, :, :]
    d = np.sqrt(np.sum(diff * diff, axis=2))
    np.fill_diagonal(d, 0.0)
    return 0.5 * (d + d.T)


def _medoid(distances: np.ndarray, idx: Sequence[int]) -> int:
    sub = distances[np.ix_(idx, idx)]
    return idx[int(np.argmin(sub.sum(axis=1)))]


def _labels_to_clustering(labels: np.ndarray, ids: Sequence[str],
                          distances: np.ndarray) -> Clustering:
    clusters = []
    for lab in sorted(set(labels.tolist())):
        idx = [i for i, l in enumerate(labels) if l == lab]
        centroid = ids[_medoid(distances, idx)]
        clusters.append(Cluster(frozenset(ids[i] for i in idx), centroid))
    clusters.sort(key=lambda c: c.centroid_id)
    return Clustering(tuple(clusters))


def agglomerative(distances: np.ndarray, ids: Sequence[str], n_k: int) -> Clustering:
    """Average-linkage hierarchical clustering cut at n_k clusters."""
    _check_nk(distances, n_k)
    if n_k == len(ids):
        labels = np.arange(len(ids))
    else:
        link = sch.linkage(squareform(distances, checks=False), method="average")
        labels = sch.fcluster(link, t=n_k, criterion="maxclust")
    return _labels_to_clustering(np.asarray(labels), ids, distances)


def pam(distances: np.ndarray, ids: Sequence[str], n_k: int, seed: int = 0) -> Clustering:
    """Partition around medoids: greedy BUILD then best-improvement SWAP.

    Both phases are deterministic (ties resolved by lowest index), so the
    seed does not influence the result; it is accepted for interface
    symmetry with the other initializers.
    """
    _check_nk(distances, n_k)
    n = distances.shape[0]
    medoids = [int(np.argmin(distances.sum(axis=1)))]
    while len(medoids) < n_k:
        current = np.min(distances[:, medoids], axis=1)
        best_gain, best_cand = -np.inf, None
        for cand in range(n):
            if cand in medoids:
                continue
            gain = float(np.sum(np.maximum(current - distances[:, cand], 0.0)))
            if gain > best_gain:
                best_gain, best_cand = gain, cand
        medoids.append(best_cand)
    medoids.sort()

    def cost(meds: list[int]) -> float:
        return float(np.sum(np.min(distances[:, meds], axis=1)))

    best_cost = cost(medoids)
    improved = True
    while improved:
        improved = False
        best_swap = None
        for mi, m in enumerate(medoids):
            for h in range(n):
                if h in medoids:
                    continue
                trial = sorted(medoids[:mi] + [h] + medoids[mi + 1:])
                c = cost(trial)
                if c < best_cost - 1e-12:
                    best_cost, best_swap = c, trial
        if best_swap is not None:
            medoids = best_swap
            improved = True
    labels = np.argmin(distances[:, medoids], axis=1)
    return _labels_to_clustering(labels, ids, distances)


def spectral(distances: np.ndarray, ids: Sequence[str], n_k: int,
             seed: int = 0) -> Clustering:
    """Spectral clustering: Gaussian affinity with the median off-diagonal
    distance as bandwidth, normalized Laplacian, k smallest eigenvectors,
    then seeded k-means (10 restarts) on the embedding rows.

    Falls back to PAM with a warning if the eigendecomposition fails.
    """
    _check_nk(distances, n_k)
    n = distances.shape[0]
    off = distances[~np.eye(n, dtype=bool)]
    sigma = float(np.median(off))
    if sigma <= 0:
        sigma = 1.0
    affinity = np.exp(-(distances ** 2) / (2.0 * sigma * sigma))
    affinity = 0.5 * (affinity + affinity.T)
    degree = affinity.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(degree)
    laplacian = np.eye(n) - inv_sqrt[:, None] * affinity * inv_sqrt[None, :]
    try:
        _, vecs = scipy.linalg.eigh(laplacian, subset_by_index=(0, n_k - 1))
    except scipy.linalg.LinAlgError:
        warnings.warn("spectral embedding failed, falling back to PAM")
        return pam(distances, ids, n_k, seed)
    km = KMeans(n_clusters=n_k, n_init=10, random_state=seed)
    labels = km.fit_predict(vecs)
    return _labels_to_clustering(labels, ids, distances)


def _check_nk(distances: np.ndarray, n_k: int) -> None:
    n = distances.shape[0]
    if not 1 <= n_k <= n:
        raise ValueError(f"n_k must be in [1, {n}], got {n_k}")


def initial_clustering(mset: ManeuverSet, method: str, n_k: int, seed: int = 0,
                       n_resample: int = 50) -> Clustering:
    """Build the starting partition for the EKF clustering loop."""
    f = feature_matrix(mset, n_resample)
    d = pairwise_distance(f)
    if method == "agglomerative":
        return agglomerative(d, f.ids, n_k)
    if method == "pam":
        return pam(d, f.ids, n_k, seed)
    if method == "spectral":
        return spectral(d, f.ids, n_k, seed)
    raise ValueError(f"unknown initializer {method!r}; expected one of {INIT_METHODS}")


@dataclass(frozen=True)
class SweepRow:
    n_k_init: int
    mu_ll: float
    sigma_ll: float
    n_k_final: int
    best: bool


@dataclass(frozen=True)
class SweepResult:
    rows: tuple[SweepRow, ...]
    clusterings: tuple[tuple[Clustering, ClusterReport], ...]

    @property
    def best_index(self) -> int:
        return next(i for i, r in enumerate(self.rows) if r.best)

    @property
    def best(self) -> tuple[Clustering, ClusterReport]:
        return self.clusterings[self.best_index]

    def to_csv(self) -> str:
        lines = ["n_k_init,mu_ll,sigma_ll,n_k_final,best"]
        for r in self.rows:
            lines.append(f"{r.n_k_init},{r.mu_ll:.17g},{r.sigma_ll:.17g},"
                         f"{r.n_k_final},{int(r.best)}")
        return "\n".join(lines) + "\n"


def sweep(mset: ManeuverSet, method: str, n_k_range: Sequence[int], cfg: EkfConfig,
          t_kl: float, seed: int = 0, n_resample: int = 50,
          cache: NllCache | None = None, n_jobs: int = 1,
          max_em_iters: int = 50, max_outer_iters: int = 100) -> SweepResult:
    """Run the full clustering once per initial n_k; the row minimizing
    mu_ll + sigma_ll is marked best (first such row on ties)."""
    n_k_values = sorted(set(int(k) for k in n_k_range))
    if not n_k_values:
        raise ValueError("empty n_k sweep range")
    if cache is None:
        cache = NllCache(mset, cfg, n_jobs=n_jobs)
    outcomes = []
    for n_k in n_k_values:
        init = initial_clustering(mset, method, n_k, seed=seed, n_resample=n_resample)
        clustering, report = full_pipeline(
            mset, init, cfg, t_kl, cache=cache,
            max_em_iters=max_em_iters, max_outer_iters=max_outer_iters)
        outcomes.append((n_k, clustering, report))
    scores = [r.mu_ll + r.sigma_ll for _, _, r in outcomes]
    best_i = int(np.argmin(scores))
    rows = tuple(
        SweepRow(n_k, rep.mu_ll, rep.sigma_ll, rep.n_k, i == best_i)
        for i, (n_k, _, rep) in enumerate(outcomes)
    )
    return SweepResult(rows, tuple((c, r) for _, c, r in outcomes))
