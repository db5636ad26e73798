import math

import numpy as np
import pytest
from sklearn.metrics import adjusted_rand_score

import drivecluster.emcluster as emcluster
from drivecluster.ekfsim import EkfConfig, MembershipSeries
from drivecluster.emcluster import (
    Cluster,
    Clustering,
    NllCache,
    allocate,
    clustering_from_json,
    clustering_to_json,
    em_loop,
    full_pipeline,
    kl_divergence_series,
    maximize_centroid,
    report_stats,
    try_merge,
    try_split,
)
from conftest import by_archetype


class StubCache:
    """In-memory stand-in for NllCache with hand-specified values."""

    def __init__(self, nll=None, probs=None, p_floor=1e-15):
        self._nll = dict(nll or {})
        self._probs = {k: np.asarray(v, dtype=float) for k, v in (probs or {}).items()}
        self.cfg = EkfConfig(p_floor=p_floor)
        self.queried: list[tuple[str, str]] = []

    def ensure(self, pairs):
        pass

    def nll(self, s, c):
        self.queried.append((s, c))
        if (s, c) in self._nll:
            return self._nll[(s, c)]
        if (s, c) in self._probs:
            p = self._probs[(s, c)]
            return math.inf if np.any(p <= self.cfg.p_floor) else float(-np.sum(np.log(p)))
        return 0.0 if s == c else 1.0

    def series(self, s, c):
        p = self._probs[(s, c)]
        return MembershipSeries(np.arange(len(p)) * 0.08, np.zeros(len(p)), p,
                                self.nll(s, c), len(p))


class TestAllocate:
    def test_single_centroid_takes_all(self):
        cache = StubCache({(s, "a"): 1.0 for s in "abcd"} | {("a", "a"): 0.0})
        out = allocate(list("abcd"), ["a"], cache)
        assert out.n_clusters == 1
        assert out.clusters[0].member_ids == frozenset("abcd")

    def test_argmin_assignment(self):
        nll = {("x", "c0"): 5.0, ("x", "c1"): 3.0,
               ("c0", "c0"): 0.0, ("c0", "c1"): 9.0,
               ("c1", "c1"): 0.0, ("c1", "c0"): 9.0}
        out = allocate(["c0", "c1", "x"], ["c0", "c1"], StubCache(nll))
        assert out.cluster_of("x").centroid_id == "c1"

    def test_all_infinite_becomes_singleton(self):
        nll = {("x", "c0"): math.inf, ("x", "c1"): math.inf,
               ("c0", "c0"): 0.0, ("c0", "c1"): 9.0,
               ("c1", "c1"): 0.0, ("c1", "c0"): 9.0}
        out = allocate(["c0", "c1", "x"], ["c0", "c1"], StubCache(nll))
        assert out.n_clusters == 3
        assert out.cluster_of("x").centroid_id == "x"
        assert out.cluster_of("x").member_ids == frozenset({"x"})

    def test_ties_break_to_lowest_centroid_id(self):
        nll = {("x", "c0"): 2.0, ("x", "c1"): 2.0,
               ("c0", "c0"): 0.0, ("c0", "c1"): 9.0,
               ("c1", "c1"): 0.0, ("c1", "c0"): 9.0}
        out = allocate(["c0", "c1", "x"], ["c0", "c1"], StubCache(nll))
        assert out.cluster_of("x").centroid_id == "c0"

    def test_centroids_stay_in_their_cluster(self):
        # c1 would prefer c0's cluster, but centroids are pinned
        nll = {("c1", "c0"): 0.1, ("c1", "c1"): 0.5,
               ("c0", "c0"): 0.0, ("c0", "c1"): 9.0}
        out = allocate(["c0", "c1"], ["c0", "c1"], StubCache(nll))
        assert out.cluster_of("c1").centroid_id == "c1"

    def test_needs_a_centroid(self):
        with pytest.raises(ValueError):
            allocate(["a"], [], StubCache())


class TestMaximizeCentroid:
    def test_singleton_returns_member(self):
        assert maximize_centroid(Cluster(frozenset({"a"}), "a"), StubCache()) == "a"

    def test_column_sum_argmin(self):
        members = ["a", "b", "c"]
        sums = {"a": [1.0, 1.0, 2.0], "b": [0.5, 0.5, 1.0], "c": [3.0, 3.0, 3.0]}
        nll = {(m, c): sums[c][i] for c in members for i, m in enumerate(members)}
        out = maximize_centroid(Cluster(frozenset(members), "a"), StubCache(nll))
        assert out == "b"

    def test_infinite_sums_rank_last(self):
        members = ["a", "b"]
        nll = {("a", "a"): 0.0, ("b", "a"): math.inf,
               ("a", "b"): 5.0, ("b", "b"): 0.0}
        out = maximize_centroid(Cluster(frozenset(members), "a"), StubCache(nll))
        assert out == "b"

    def test_large_cluster_restricts_candidates(self):
        members = [f"m{i:03d}" for i in range(150)]
        nll = {}
        for i, m in enumerate(members):
            for c in members:
                nll[(m, c)] = 0.0 if m == c else 1.0 + i * 0.01
        cache = StubCache(nll)
        maximize_centroid(Cluster(frozenset(members), "m000"), cache)
        candidate_cols = {c for _, c in cache.queried} - {"m000"}
        assert len(candidate_cols) <= 45


class TestEmLoop:
    def test_converged_input_unchanged(self, zero_noise_set, zero_noise_cache):
        mset, labels = zero_noise_set
        groups = by_archetype(mset, labels)
        clusters = tuple(
            Cluster(frozenset(ids), sorted(ids)[0]) for ids in groups.values())
        init = Clustering(tuple(sorted(clusters, key=lambda c: c.centroid_id)))
        out = em_loop(init, zero_noise_cache)
        assert out.partition_key() == init.partition_key()

    def test_objective_monotone(self, small_set, small_cache):
        mset, _ = small_set
        ids = sorted(mset.sample_ids)
        init = allocate(ids, [ids[0], ids[5]], small_cache)
        trace = []
        em_loop(init, small_cache, objective_trace=trace)
        values = [v for _, v in trace]
        assert all(b <= a + 1e-9 for a, b in zip(values, values[1:]))

    def test_recovers_planted_partition_from_any_two_seeds(self, zero_noise_set,
                                                           zero_noise_cache):
        mset, labels = zero_noise_set
        ids = sorted(mset.sample_ids)
        truth = [labels[i] for i in ids]
        for seeds in (["direct-00", "stop-00"], ["yield-01", "yield-02"]):
            init = allocate(ids, seeds, zero_noise_cache)
            out = em_loop(init, zero_noise_cache)
            # every resulting cluster is archetype-pure
            for c in out.clusters:
                assert len({labels[m] for m in c.member_ids}) == 1


class TestKlDivergence:
    def test_same_centroid_is_zero(self):
        probs = {("a", "c"): [0.9, 0.8, 0.7]}
        assert kl_divergence_series(["a"], "c", "c", StubCache(probs=probs)) == 0.0

    def test_single_member_constant_probabilities(self):
        probs = {("a", "old"): [0.8] * 5, ("a", "new"): [0.4] * 5}
        d = kl_divergence_series(["a"], "old", "new", StubCache(probs=probs))
        assert d == pytest.approx(0.8 * math.log(2.0), rel=1e-12)

    def test_zero_new_probability_is_infinite(self):
        probs = {("a", "old"): [0.8, 0.8], ("a", "new"): [0.4, 0.0]}
        assert math.isinf(kl_divergence_series(["a"], "old", "new",
                                               StubCache(probs=probs)))

    def test_zero_old_probability_contributes_nothing(self):
        probs = {("a", "old"): [0.0, 0.0], ("a", "new"): [0.4, 0.5]}
        assert kl_divergence_series(["a"], "old", "new",
                                    StubCache(probs=probs)) == 0.0

    def test_series_truncated_to_shortest(self):
        probs = {("a", "old"): [0.8] * 10, ("a", "new"): [0.4] * 3,
                 ("b", "old"): [0.8] * 7, ("b", "new"): [0.4] * 7}
        d = kl_divergence_series(["a", "b"], "old", "new", StubCache(probs=probs))
        assert d == pytest.approx(2 * 0.8 * math.log(2.0), rel=1e-12)


class TestSplitMerge:
    def test_split_needs_four_members(self, small_cache):
        c = Cluster(frozenset({"direct-00", "direct-01", "direct-02"}), "direct-00")
        assert try_split(c, small_cache, t_kl=3.0) is None

    def test_identical_copies_do_not_split(self, default_cfg):
        import dataclasses

        from drivecluster.trajdata import ScenarioSpec, synthesize
        from conftest import ZERO_NOISE

        spec = ScenarioSpec(noise=ZERO_NOISE)
        spec = dataclasses.replace(spec, archetypes=(
            dataclasses.replace(spec.archetypes[0], count=6),))
        mset, _ = synthesize(spec, seed=0)
        cache = NllCache(mset, default_cfg, n_jobs=4)
        members = frozenset(mset.sample_ids)
        cluster = Cluster(members, sorted(members)[0])
        assert try_split(cluster, cache, t_kl=3.0) is None

    def test_mixed_cluster_splits_along_archetypes(self, synth_set, synth_cache):
        mset, labels = synth_set
        groups = by_archetype(mset, labels)
        members = frozenset(groups["direct"] + groups["stop"])
        base = Cluster(members, groups["direct"][0])
        cluster = Cluster(members, maximize_centroid(base, synth_cache))
        halves = try_split(cluster, synth_cache, t_kl=3.0)
        assert halves is not None
        got = sorted(frozenset(labels[m] for m in h.member_ids) for h in halves)
        assert got == [frozenset({"direct"}), frozenset({"stop"})]

    def test_split_monotone_in_threshold(self, synth_set, synth_cache):
        mset, labels = synth_set
        groups = by_archetype(mset, labels)
        members = frozenset(groups["direct"] + groups["yield"])
        base = Cluster(members, groups["direct"][0])
        cluster = Cluster(members, maximize_centroid(base, synth_cache))
        accepted_at_3 = try_split(cluster, synth_cache, t_kl=3.0)
        assert accepted_at_3 is not None
        accepted_at_1 = try_split(cluster, synth_cache, t_kl=1.0)
        assert accepted_at_1 is not None
        assert [h.member_ids for h in accepted_at_1] == \
               [h.member_ids for h in accepted_at_3]

    def test_clone_clusters_merge(self, synth_set, synth_cache):
        mset, labels = synth_set
        ids = by_archetype(mset, labels)["direct"]
        a = Cluster(frozenset(ids[:5]),
                    maximize_centroid(Cluster(frozenset(ids[:5]), ids[0]), synth_cache))
        b = Cluster(frozenset(ids[5:]),
                    maximize_centroid(Cluster(frozenset(ids[5:]), ids[5]), synth_cache))
        merged = try_merge(a, b, synth_cache, t_kl=3.0)
        assert merged is not None
        assert merged.member_ids == frozenset(ids)

    def test_different_archetypes_do_not_merge(self, synth_set, synth_cache):
        mset, labels = synth_set
        groups = by_archetype(mset, labels)
        a = Cluster(frozenset(groups["direct"]),
                    maximize_centroid(Cluster(frozenset(groups["direct"]),
                                              groups["direct"][0]), synth_cache))
        b = Cluster(frozenset(groups["stop"]),
                    maximize_centroid(Cluster(frozenset(groups["stop"]),
                                              groups["stop"][0]), synth_cache))
        assert try_merge(a, b, synth_cache, t_kl=3.0) is None

    def test_merge_then_split_hysteresis(self, synth_set, synth_cache):
        mset, labels = synth_set
        ids = by_archetype(mset, labels)["yield"]
        a = Cluster(frozenset(ids[:5]),
                    maximize_centroid(Cluster(frozenset(ids[:5]), ids[0]), synth_cache))
        b = Cluster(frozenset(ids[5:]),
                    maximize_centroid(Cluster(frozenset(ids[5:]), ids[5]), synth_cache))
        merged = try_merge(a, b, synth_cache, t_kl=3.0)
        assert merged is not None
        assert try_split(merged, synth_cache, t_kl=3.0) is None


class TestFullPipeline:
    def test_single_archetype_collapses_to_one_cluster(self, default_cfg):
        import dataclasses

        from drivecluster.trajdata import ScenarioSpec, synthesize

        spec = ScenarioSpec()
        spec = dataclasses.replace(spec, archetypes=(
            dataclasses.replace(spec.archetypes[0], count=8),))
        mset, _ = synthesize(spec, seed=5)
        ids = sorted(mset.sample_ids)
        cache = NllCache(mset, default_cfg, n_jobs=4)
        init = allocate(ids, [ids[0], ids[3], ids[6]], cache)
        clustering, report = full_pipeline(mset, init, default_cfg, t_kl=3.0,
                                           cache=cache)
        assert report.n_k == 1
        assert report.converged

    def test_recovery_and_report(self, synth_set, synth_cache, default_cfg):
        mset, labels = synth_set
        ids = sorted(mset.sample_ids)
        init = allocate(ids, [ids[0], ids[10]], synth_cache)
        clustering, report = full_pipeline(mset, init, default_cfg, t_kl=3.0,
                                           cache=synth_cache)
        ari = adjusted_rand_score([labels[i] for i in ids],
                                  clustering.labels_for(ids))
        assert ari == 1.0
        assert report.n_inf == 0
        assert report.n_k == 3
        assert len(report.history) >= 1
        assert report.history[-1][0] == 3

    def test_rerun_bitwise_identical(self, small_set, default_cfg):
        mset, _ = small_set
        ids = sorted(mset.sample_ids)
        outputs = []
        for n_jobs in (1, 8):
            cache = NllCache(mset, default_cfg, n_jobs=n_jobs)
            init = allocate(ids, [ids[0], ids[4], ids[8]], cache)
            clustering, report = full_pipeline(mset, init, default_cfg, t_kl=3.0,
                                               cache=cache)
            outputs.append(clustering_to_json(clustering, report))
        assert outputs[0] == outputs[1]

    def test_loop_detection_returns_best_state(self, small_set, small_cache,
                                               default_cfg, monkeypatch):
        mset, _ = small_set
        ids = sorted(mset.sample_ids)
        init = allocate(ids, [ids[0], ids[4], ids[8]], small_cache)

        # Force an A -> B -> A oscillation: merges always accepted, splits
        # always undo the merge.
        def fake_merge(a, b, cache, t_kl):
            union = a.member_ids | b.member_ids
            return Cluster(union, maximize_centroid(Cluster(union, a.centroid_id),
                                                    cache))

        state = {"halves": None}

        def fake_split(cluster, cache, t_kl):
            if state["halves"] is None:
                members = sorted(cluster.member_ids)
                h1, h2 = members[: len(members) // 2], members[len(members) // 2:]
                state["halves"] = (Cluster(frozenset(h1), h1[0]),
                                   Cluster(frozenset(h2), h2[0]))
            return state["halves"]

        monkeypatch.setattr(emcluster, "try_merge", fake_merge)
        monkeypatch.setattr(emcluster, "try_split", fake_split)
        clustering, report = full_pipeline(mset, init, default_cfg, t_kl=3.0,
                                           cache=small_cache, max_outer_iters=20)
        assert report.loop_detected
        assert not report.converged
        assert clustering.sample_ids == set(ids)

    def test_partition_always_valid(self, synth_set, synth_cache, default_cfg):
        mset, _ = synth_set
        ids = sorted(mset.sample_ids)
        init = allocate(ids, ids[:6], synth_cache)
        clustering, _ = full_pipeline(mset, init, default_cfg, t_kl=3.0,
                                      cache=synth_cache)
        assert clustering.sample_ids == set(ids)
        for c in clustering.clusters:
            assert c.centroid_id in c.member_ids


class TestClusteringType:
    def test_partition_validation(self):
        a = Cluster(frozenset({"x", "y"}), "x")
        b = Cluster(frozenset({"y", "z"}), "z")
        with pytest.raises(ValueError):
            Clustering((a, b))

    def test_centroid_membership_validation(self):
        with pytest.raises(ValueError):
            Cluster(frozenset({"x"}), "y")

    def test_json_roundtrip(self):
        clustering = Clustering((
            Cluster(frozenset({"a", "b"}), "a"),
            Cluster(frozenset({"c"}), "c"),
        ), generation=4)
        text = clustering_to_json(clustering)
        again = clustering_from_json(text)
        assert again.partition_key() == clustering.partition_key()
        assert again.generation == 4
        assert clustering_to_json(again) == text

    def test_labels_for(self):
        clustering = Clustering((
            Cluster(frozenset({"a", "b"}), "a"),
            Cluster(frozenset({"c"}), "c"),
        ))
        labels = clustering.labels_for(["a", "b", "c"])
        assert labels[0] == labels[1] != labels[2]


class TestNllCache:
    def test_cache_matches_fresh_compare(self, small_set, default_cfg):
        from drivecluster.ekfsim import compare

        mset, _ = small_set
        cache = NllCache(mset, default_cfg)
        a, b = sorted(mset.sample_ids)[:2]
        cached = cache.series(a, b)
        fresh = compare(mset.sample_by_id(a), mset.sample_by_id(b), default_cfg)
        assert np.array_equal(cached.probs, fresh.probs)
        assert cached.nll == fresh.nll

    def test_parallel_fill_matches_serial(self, small_set, default_cfg):
        mset, _ = small_set
        ids = sorted(mset.sample_ids)[:6]
        pairs = [(a, b) for a in ids for b in ids]
        serial = NllCache(mset, default_cfg, n_jobs=1)
        serial.ensure(pairs)
        parallel = NllCache(mset, default_cfg, n_jobs=8)
        parallel.ensure(pairs)
        for p in pairs:
            assert serial.nll(*p) == parallel.nll(*p)
        assert len(serial) == len(pairs)
