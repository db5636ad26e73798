"""EM-style hard clustering with infinite-NLL reallocation and KL split/merge.

The loop alternates sample allocation (to the centroid of minimal NLL,
creating singleton clusters for samples infinitely far from everything) with
centroid maximization (the member minimizing the summed NLL of the cluster
against it). After EM convergence, cluster pairs are tested for merging and
clusters for splitting with an averaged KL-style divergence over the
time-resolved membership probabilities; any accepted change restarts the EM.
Termination happens when a merge+split pass changes nothing, when a
previously seen partition recurs (the best visited state is then returned),
or at the iteration cap.
"""

from __future__ import annotations

import json
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .ekfsim import EkfConfig, MembershipSeries, compare
from .trajdata import ManeuverSet, Trajectory
from . import serialize

CENTROID_CANDIDATE_FRACTION = 0.3
CENTROID_RESTRICTION_THRESHOLD = 100


@dataclass(frozen=True)
class Cluster:
    """One cluster: member sample ids and the member acting as centroid."""

    member_ids: frozenset[str]
    centroid_id: str

    def __post_init__(self):
        if not self.member_ids:
            raise ValueError("empty cluster")
        if self.centroid_id not in self.member_ids:
            raise ValueError(f"centroid {self.centroid_id!r} is not a member")

    @property
    def sorted_members(self) -> list[str]:
        return sorted(self.member_ids)


@dataclass(frozen=True)
class Clustering:
    """A partition of the sample ids into clusters."""

    clusters: tuple[Cluster, ...]
    generation: int = 0

    def __post_init__(self):
        seen: set[str] = set()
        for c in self.clusters:
            overlap = seen & c.member_ids
            if overlap:
                raise ValueError(f"samples {sorted(overlap)} appear in two clusters")
            seen |= c.member_ids
        if not self.clusters:
            raise ValueError("clustering has no clusters")

    @property
    def sample_ids(self) -> set[str]:
        return set().union(*(c.member_ids for c in self.clusters))

    @property
    def centroid_ids(self) -> list[str]:
        return sorted(c.centroid_id for c in self.clusters)

    @property
    def n_clusters(self) -> int:
        return len(self.clusters)

    def labels_for(self, sample_ids: list[str]) -> np.ndarray:
        """Integer labels aligned with sample_ids; clusters are numbered by
        sorted centroid id."""
        order = {c.centroid_id: i for i, c in
                 enumerate(sorted(self.clusters, key=lambda c: c.centroid_id))}
        by_member = {}
        for c in self.clusters:
            for m in c.member_ids:
                by_member[m] = order[c.centroid_id]
        return np.array([by_member[s] for s in sample_ids])

    def cluster_of(self, sample_id: str) -> Cluster:
        for c in self.clusters:
            if sample_id in c.member_ids:
                return c
        raise KeyError(sample_id)

    def partition_key(self) -> tuple:
        """Canonical hashable form of the partition (ignores centroids)."""
        return tuple(sorted(tuple(c.sorted_members) for c in self.clusters))


@dataclass(frozen=True)
class ClusterReport:
    """Summary statistics of a clustering against its own centroids."""

    mu_ll: float
    sigma_ll: float
    n_k: int
    n_inf: int
    history: tuple[tuple[int, float, float], ...]
    converged: bool = True
    loop_detected: bool = False


class NllCache:
    """Memoized compare() results keyed by (sample id, centroid id).

    compare() is pure, so entries computed in any order or thread count are
    identical. Reads are lock-free after a pass completes; inserts happen on
    the driving thread after the worker pool joins.
    """

    def __init__(self, samples: ManeuverSet | dict[str, Trajectory],
                 cfg: EkfConfig, n_jobs: int = 1):
        if isinstance(samples, ManeuverSet):
            self.trajectories = {s.id: s for s in samples.samples}
        else:
            self.trajectories = dict(samples)
        self.cfg = cfg
        self.n_jobs = max(1, int(n_jobs))
        self._series: dict[tuple[str, str], MembershipSeries] = {}
        self._lock = threading.Lock()

    def _compute(self, key: tuple[str, str]) -> tuple[tuple[str, str], MembershipSeries]:
        sid, cid = key
        return key, compare(self.trajectories[sid], self.trajectories[cid], self.cfg)

    def ensure(self, pairs) -> None:
        """Compute any missing pairs, in parallel when n_jobs > 1."""
        with self._lock:
            missing = sorted({p for p in pairs if p not in self._series})
        if not missing:
            return
        if self.n_jobs == 1 or len(missing) == 1:
            results = map(self._compute, missing)
        else:
            with ThreadPoolExecutor(max_workers=self.n_jobs) as pool:
                results = list(pool.map(self._compute, missing))
        with self._lock:
            for key, series in results:
                self._series[key] = series

    def series(self, sample_id: str, centroid_id: str) -> MembershipSeries:
        key = (sample_id, centroid_id)
        got = self._series.get(key)
        if got is None:
            self.ensure([key])
            got = self._series[key]
        return got

    def nll(self, sample_id: str, centroid_id: str) -> float:
        return self.series(sample_id, centroid_id).nll

    def __len__(self) -> int:
        return len(self._series)


# ---------------------------------------------------------------------------
# EM core


def allocate(sample_ids, centroid_ids, cache: NllCache) -> Clustering:
    """Assign every sample to the centroid of minimal NLL.

    Current centroids stay in their own cluster. A sample with infinite NLL
    against every centroid becomes a new singleton cluster. Ties break on the
    lowest centroid id.
    """
    sample_ids = sorted(sample_ids)
    centroid_ids = sorted(set(centroid_ids))
    if not centroid_ids:
        raise ValueError("allocate needs at least one centroid")
    cache.ensure([(s, c) for s in sample_ids for c in centroid_ids])
    members: dict[str, set[str]] = {c: {c} for c in centroid_ids}
    singletons: list[str] = []
    for s in sample_ids:
        if s in members:
            continue
        best, best_nll = None, math.inf
        for c in centroid_ids:
            v = cache.nll(s, c)
            if v < best_nll:
                best, best_nll = c, v
        if best is None:
            singletons.append(s)
        else:
            members[best].add(s)
    clusters = [Cluster(frozenset(v), c) for c, v in members.items()]
    clusters.extend(Cluster(frozenset({s}), s) for s in singletons)
    clusters.sort(key=lambda c: c.centroid_id)
    return Clustering(tuple(clusters))


def maximize_centroid(cluster: Cluster, cache: NllCache) -> str:
    """The member minimizing the summed NLL of all members against it.

    Large clusters restrict the candidate set to the 30% of members closest
    (by NLL) to the current centroid. Infinite sums rank last; ties break on
    the lowest id.
    """
    members = cluster.sorted_members
    if len(members) == 1:
        return members[0]
    candidates = members
    if len(members) > CENTROID_RESTRICTION_THRESHOLD:
        cache.ensure([(m, cluster.centroid_id) for m in members])
        ranked = sorted(members, key=lambda m: (cache.nll(m, cluster.centroid_id), m))
        candidates = ranked[: int(len(members) * CENTROID_CANDIDATE_FRACTION)]
    cache.ensure([(m, c) for c in candidates for m in members])
    best, best_sum = None, math.inf
    for c in sorted(candidates):
        total = 0.0
        for m in members:
            total += cache.nll(m, c)
            if math.isinf(total):
                break
        if total < best_sum:
            best, best_sum = c, total
    return best if best is not None else cluster.centroid_id


def _assigned_nll_sum(clustering: Clustering, cache: NllCache) -> float:
    return sum(cache.nll(m, c.centroid_id)
               for c in clustering.clusters for m in c.member_ids)


def em_loop(init: Clustering, cache: NllCache, max_em_iters: int = 50,
            objective_trace: list | None = None) -> Clustering:
    """Alternate allocation and centroid maximization to a fixed point."""
    current = init
    prev_obj = math.inf
    for _ in range(max_em_iters):
        allocated = allocate(current.sample_ids, current.centroid_ids, cache)
        obj = _assigned_nll_sum(allocated, cache)
        assert obj <= prev_obj + 1e-9, "allocation increased the EM objective"
        if objective_trace is not None:
            objective_trace.append(("allocate", obj))
        maximized = Clustering(
            tuple(Cluster(c.member_ids, maximize_centroid(c, cache))
                  for c in allocated.clusters),
            generation=current.generation + 1,
        )
        obj2 = _assigned_nll_sum(maximized, cache)
        assert obj2 <= obj + 1e-9, "maximization increased the EM objective"
        if objective_trace is not None:
            objective_trace.append(("maximize", obj2))
        prev_obj = obj2
        if (maximized.partition_key() == current.partition_key()
                and maximized.centroid_ids == current.centroid_ids):
            return maximized
        current = maximized
    return current


# ---------------------------------------------------------------------------
# KL split / merge


def kl_divergence_series(member_ids, p_centroid: str, q_centroid: str,
                         cache: NllCache) -> float:
    """Average over update steps of sum_members p * ln(p / q), where p and q
    are the time-resolved membership probabilities of each member against
    the two centroids. Series are truncated to the shortest length involved.

    Zero p contributes nothing; q at or below the probability floor with
    p > 0 makes the divergence infinite.
    """
    members = sorted(member_ids)
    if not members:
        return 0.0
    cache.ensure([(m, c) for m in members for c in (p_centroid, q_centroid)])
    p_rows = [cache.series(m, p_centroid).probs for m in members]
    q_rows = [cache.series(m, q_centroid).probs for m in members]
    t_min = min(min(len(r) for r in p_rows), min(len(r) for r in q_rows))
    if t_min == 0:
        return 0.0
    floor = cache.cfg.p_floor
    total = np.zeros(t_min)
    for p, q in zip(p_rows, q_rows):
        p = p[:t_min]
        q = q[:t_min]
        if np.any((q <= floor) & (p > 0.0)):
            return math.inf
        mask = p > 0.0
        contrib = np.zeros(t_min)
        contrib[mask] = p[mask] * np.log(p[mask] / q[mask])
        total += contrib
    return float(np.mean(total))


def _assign_to_medoids(members, medoids, cache: NllCache) -> tuple[list[str], list[str]]:
    halves: tuple[list[str], list[str]] = ([], [])
    for m in members:
        d0 = cache.nll(m, medoids[0])
        d1 = cache.nll(m, medoids[1])
        halves[0 if d0 <= d1 else 1].append(m)
    return halves


def _split_halves(cluster: Cluster, cache: NllCache,
                  max_iters: int = 20) -> tuple[list[str], list[str]] | None:
    """2-medoids over the pairwise NLL matrix, seeded with the most
    dissimilar member pair.

    Infinite dissimilarity outranks any finite value (an infinite pair is by
    definition maximally separated); among finite pairs the maximal NLL wins.
    Ties break on the lowest ids.
    """
    members = cluster.sorted_members
    cache.ensure([(a, b) for a in members for b in members])
    best_pair = None
    best_rank: tuple[int, float] = (-1, -math.inf)
    for i, a in enumerate(members):
        for b in members[i + 1:]:
            v = max(cache.nll(a, b), cache.nll(b, a))
            rank = (1, 0.0) if math.isinf(v) else (0, v)
            if rank > best_rank:
                best_pair, best_rank = [a, b], rank
    if best_pair is None:
        return None
    medoids = best_pair
    halves = _assign_to_medoids(members, medoids, cache)
    for _ in range(max_iters):
        if not halves[0] or not halves[1]:
            return None
        new_medoids = [
            maximize_centroid(Cluster(frozenset(h), med if med in h else h[0]), cache)
            for h, med in zip(halves, medoids)
        ]
        new_halves = _assign_to_medoids(members, new_medoids, cache)
        if new_medoids == medoids:
            break
        medoids, halves = new_medoids, new_halves
    if not halves[0] or not halves[1]:
        return None
    return halves


def try_split(cluster: Cluster, cache: NllCache, t_kl: float) -> tuple[Cluster, Cluster] | None:
    """Test splitting a cluster in two; returns the halves when the absolute
    difference of the halves' averaged divergences reaches the threshold.

    Each half's divergence weights the memberships under its new centroid
    against those under the parent centroid, so the half that genuinely
    improves dominates the difference.
    """
    if len(cluster.member_ids) < 4:
        return None
    halves = _split_halves(cluster, cache)
    if halves is None:
        return None
    halves = sorted(halves, key=lambda h: min(h))
    new_clusters = []
    divergences = []
    for h in halves:
        c = Cluster(frozenset(h), maximize_centroid(Cluster(frozenset(h), h[0]), cache))
        new_clusters.append(c)
        divergences.append(
            kl_divergence_series(h, c.centroid_id, cluster.centroid_id, cache))
    diff = abs(divergences[0] - divergences[1])
    if math.isnan(diff):  # both halves infinitely diverged
        diff = math.inf
    if diff >= t_kl:
        return new_clusters[0], new_clusters[1]
    return None


def try_merge(cluster_a: Cluster, cluster_b: Cluster, cache: NllCache,
              t_kl: float) -> Cluster | None:
    """Test merging two clusters; accepted when the divergence difference
    stays below the threshold.

    Each side's divergence weights the memberships under its own centroid
    against those under the merged candidate centroid, so a cluster that the
    merged centroid cannot represent blocks the merge.
    """
    union = cluster_a.member_ids | cluster_b.member_ids
    merged_centroid = maximize_centroid(
        Cluster(frozenset(union), cluster_a.centroid_id), cache)
    d_a = kl_divergence_series(cluster_a.member_ids, cluster_a.centroid_id,
                               merged_centroid, cache)
    d_b = kl_divergence_series(cluster_b.member_ids, cluster_b.centroid_id,
                               merged_centroid, cache)
    diff = abs(d_a - d_b)
    if math.isnan(diff):
        diff = math.inf
    if diff < t_kl:
        return Cluster(frozenset(union), merged_centroid)
    return None


# ---------------------------------------------------------------------------
# Full pipeline


def report_stats(clustering: Clustering, cache: NllCache) -> tuple[float, float, int]:
    """(mu_ll, sigma_ll, n_inf) of per-sample NLL to the own centroid; the
    mean and standard deviation cover finite entries only."""
    values = [cache.nll(m, c.centroid_id)
              for c in clustering.clusters for m in c.sorted_members]
    finite = [v for v in values if math.isfinite(v)]
    n_inf = len(values) - len(finite)
    if not finite:
        return math.inf, math.inf, n_inf
    return float(np.mean(finite)), float(np.std(finite)), n_inf


def _check_partition(clustering: Clustering, sample_ids: set[str]) -> None:
    assert clustering.sample_ids == sample_ids, "clustering is not a partition"


def full_pipeline(mset: ManeuverSet, init: Clustering, cfg: EkfConfig, t_kl: float,
                  cache: NllCache | None = None, max_em_iters: int = 50,
                  max_outer_iters: int = 100,
                  n_jobs: int = 1) -> tuple[Clustering, ClusterReport]:
    """Run EM + merge/split passes to convergence, loop detection or the
    iteration cap; always returns a valid clustering with its report."""
    if cache is None:
        cache = NllCache(mset, cfg, n_jobs=n_jobs)
    all_ids = set(mset.sample_ids)
    _check_partition(init, all_ids)

    current = init
    history: list[tuple[int, float, float]] = []
    visited: list[tuple[tuple, Clustering, float, float]] = []
    seen_keys: set[tuple] = set()
    converged = False
    loop_detected = False

    for _ in range(max_outer_iters):
        current = em_loop(current, cache, max_em_iters=max_em_iters)
        _check_partition(current, all_ids)
        mu, sigma, _ = report_stats(current, cache)
        history.append((current.n_clusters, mu, sigma))
        key = current.partition_key()
        if key in seen_keys:
            loop_detected = True
            best = min(visited, key=lambda v: (v[2] + v[3], v[1].generation))
            current = best[1]
            break
        seen_keys.add(key)
        visited.append((key, current, mu, sigma))

        changed = False
        # Merge pass: most similar centroid pair first, one change per pass.
        clusters = sorted(current.clusters, key=lambda c: c.centroid_id)
        pair_rank = []
        for i, a in enumerate(clusters):
            for b in clusters[i + 1:]:
                cache.ensure([(a.centroid_id, b.centroid_id),
                              (b.centroid_id, a.centroid_id)])
                sym = 0.5 * (cache.nll(a.centroid_id, b.centroid_id)
                             + cache.nll(b.centroid_id, a.centroid_id))
                pair_rank.append((sym, a.centroid_id, b.centroid_id, a, b))
        pair_rank.sort(key=lambda r: (r[0], r[1], r[2]))
        for _, _, _, a, b in pair_rank:
            merged = try_merge(a, b, cache, t_kl)
            if merged is not None:
                rest = [c for c in clusters if c not in (a, b)]
                current = Clustering(tuple(sorted(rest + [merged],
                                                  key=lambda c: c.centroid_id)),
                                     generation=current.generation)
                changed = True
                break
        if not changed:
            # Split pass: first accepted split restarts the EM.
            for c in sorted(current.clusters, key=lambda c: c.centroid_id):
                split = try_split(c, cache, t_kl)
                if split is not None:
                    rest = [k for k in current.clusters if k is not c]
                    current = Clustering(tuple(sorted(rest + list(split),
                                                      key=lambda k: k.centroid_id)),
                                         generation=current.generation)
                    changed = True
                    break
        if not changed:
            converged = True
            break
        _check_partition(current, all_ids)

    mu, sigma, n_inf = report_stats(current, cache)
    report = ClusterReport(mu, sigma, current.n_clusters, n_inf,
                           tuple(history), converged=converged,
                           loop_detected=loop_detected)
    return current, report


# ---------------------------------------------------------------------------
# Serialization


def clustering_to_json(clustering: Clustering, report: ClusterReport | None = None) -> str:
    doc: dict = {
        "generation": clustering.generation,
        "clusters": [
            {"centroid_id": c.centroid_id, "member_ids": c.sorted_members}
            for c in sorted(clustering.clusters, key=lambda c: c.centroid_id)
        ],
    }
    if report is not None:
        doc["report"] = {
            "mu_ll": report.mu_ll,
            "sigma_ll": report.sigma_ll,
            "n_k": report.n_k,
            "n_inf": report.n_inf,
            "converged": report.converged,
            "loop_detected": report.loop_detected,
            "history": [[n, mu, sigma] for n, mu, sigma in report.history],
        }
    return serialize.dumps(doc) + "\n"


def clustering_from_json(text: str) -> Clustering:
    doc = json.loads(text)
    clusters = tuple(
        Cluster(frozenset(c["member_ids"]), c["centroid_id"])
        for c in doc["clusters"]
    )
    return Clustering(clusters, generation=int(doc.get("generation", 0)))
