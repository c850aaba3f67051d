"""Tests for k-means fitting, assignment, and centroid search."""

from __future__ import annotations

import itertools

import numpy as np
import pytest

from rsforge.cluster import (
    ClusterModel,
    assign,
    kmeans_fit,
    load_model,
    model_paths,
    nearest_centroids,
    save_model,
)
from rsforge.store import EmbeddingStore


def unit_store(ids, vecs):
    arr = np.asarray(vecs, dtype=np.float64)
    arr = arr / np.linalg.norm(arr, axis=1, keepdims=True)
    return EmbeddingStore(tuple(ids), arr.astype(np.float32), normalized=True)


def random_unit_store(n, dim, seed):
    rng = np.random.default_rng(seed)
    return unit_store([f"p{i:04d}" for i in range(n)], rng.normal(size=(n, dim)))


def manual_model():
    return ClusterModel(
        k=2,
        centroids=np.array([[1.0, 0.0], [0.0, 1.0]]),
        assignments={"a": 0, "b": 1},
        members=(("a",), ("b",)),
        inertia=0.0,
        spherical=True,
    )


class TestKmeansFit:
    def test_single_cluster_mean_euclidean(self):
        store = EmbeddingStore(
            ("p", "q"),
            np.array([[0.0, 0.0], [0.0, 2.0]], dtype=np.float32),
            normalized=False,
        )
        model = kmeans_fit(store, k=1, seed=0, spherical=False)
        np.testing.assert_allclose(model.centroids[0], [0.0, 1.0], atol=1e-12)
        assert model.assignments == {"p": 0, "q": 0}
        assert model.inertia == pytest.approx(2.0)  # two points at distance 1

    def test_two_clusters_reach_optimal_inertia(self):
        # oracle: enumerate every 2-partition of four points and compute
        # the best achievable inertia with mean centroids
        store = EmbeddingStore(
            tuple("abcd"),
            np.array(
                [[0.0, 0.0], [0.2, 0.0], [10.0, 10.0], [10.2, 10.0]],
                dtype=np.float32,
            ),
            normalized=False,
        )
        pts = store.vectors.astype(np.float64)  # what the fit actually sees
        best = np.inf
        for labels in itertools.product([0, 1], repeat=4):
            if len(set(labels)) < 2:
                continue
            total = 0.0
            for c in (0, 1):
                group = pts[[i for i in range(4) if labels[i] == c]]
                centroid = group.mean(axis=0)
                total += float(((group - centroid) ** 2).sum())
            best = min(best, total)
        model = kmeans_fit(store, k=2, seed=3, spherical=False)
        assert model.inertia == pytest.approx(best, abs=1e-9)

    def test_spherical_centroids_unit_norm(self):
        store = random_unit_store(60, 6, seed=1)
        model = kmeans_fit(store, k=5, seed=1)
        norms = np.linalg.norm(model.centroids, axis=1)
        np.testing.assert_allclose(norms, 1.0, atol=1e-9)

    def test_fixed_seed_bit_identical(self):
        store = random_unit_store(80, 5, seed=2)
        a = kmeans_fit(store, k=6, seed=42)
        b = kmeans_fit(store, k=6, seed=42)
        assert np.array_equal(a.centroids, b.centroids)
        assert a.assignments == b.assignments
        assert a.inertia == b.inertia

    def test_different_seeds_allowed_to_differ(self):
        store = random_unit_store(80, 5, seed=2)
        a = kmeans_fit(store, k=6, seed=1)
        b = kmeans_fit(store, k=6, seed=2)
        # not asserting inequality (they may coincide), only validity
        assert a.k == b.k == 6

    def test_inertia_history_non_increasing(self):
        for seed in range(4):
            store = random_unit_store(120, 8, seed=seed)
            model = kmeans_fit(store, k=7, seed=seed)
            hist = model.inertia_history
            assert len(hist) >= 2
            for earlier, later in zip(hist, hist[1:]):
                assert later <= earlier + 1e-9

    def test_membership_partition(self):
        store = random_unit_store(50, 4, seed=5)
        model = kmeans_fit(store, k=4, seed=5)
        flat = [rid for group in model.members for rid in group]
        assert sorted(flat) == sorted(store.ids)
        assert len(flat) == len(set(flat))

    def test_converged_model_is_stable(self):
        store = random_unit_store(90, 6, seed=7)
        model = kmeans_fit(store, k=5, seed=7, max_iters=200)
        assert assign(store, model) == model.assignments

    def test_no_empty_clusters_with_duplicates(self):
        # 12 points but only 3 distinct values: repair must still fill k=4
        base = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])
        vecs = np.vstack([base] * 4)
        store = EmbeddingStore(
            tuple(f"d{i}" for i in range(12)),
            vecs.astype(np.float32),
            normalized=True,
        )
        model = kmeans_fit(store, k=4, seed=0)
        assert all(len(group) >= 1 for group in model.members)
        assert sum(len(g) for g in model.members) == 12

    def test_k_equals_count(self):
        store = random_unit_store(6, 3, seed=9)
        model = kmeans_fit(store, k=6, seed=9)
        assert sorted(len(g) for g in model.members) == [1] * 6

    def test_bad_k_rejected(self):
        store = random_unit_store(5, 3, seed=0)
        with pytest.raises(ValueError):
            kmeans_fit(store, k=0)
        with pytest.raises(ValueError):
            kmeans_fit(store, k=6)

    def test_spherical_needs_normalized_store(self):
        store = EmbeddingStore(
            ("a", "b"),
            np.array([[2.0, 0.0], [0.0, 3.0]], dtype=np.float32),
            normalized=False,
        )
        with pytest.raises(ValueError, match="normalized"):
            kmeans_fit(store, k=1, spherical=True)


class TestAssign:
    def test_centroid_points_map_to_their_cluster(self):
        model = manual_model()
        store = unit_store(["x", "y"], [[1, 0], [0, 1]])
        assert assign(store, model) == {"x": 0, "y": 1}

    def test_equidistant_tie_lowest_index(self):
        model = manual_model()
        store = unit_store(["mid"], [[1, 1]])
        assert assign(store, model) == {"mid": 0}

    def test_matches_per_point_scan(self):
        store = random_unit_store(100, 6, seed=11)
        model = kmeans_fit(store, k=8, seed=11)
        got = assign(store, model)
        for i, rid in enumerate(store.ids):
            point = store.vectors[i].astype(np.float64)
            dists = [
                float(((point - model.centroids[c]) ** 2).sum())
                for c in range(model.k)
            ]
            best = min(range(model.k), key=lambda c: (dists[c], c))
            assert got[rid] == best

    def test_dim_mismatch(self):
        model = manual_model()
        store = random_unit_store(3, 5, seed=0)
        with pytest.raises(ValueError, match="dim"):
            assign(store, model)


class TestNearestCentroids:
    def test_query_on_centroid(self):
        model = manual_model()
        out = nearest_centroids(np.array([0.0, 1.0]), model, 1)
        assert out[0][0] == 1
        assert out[0][1] == pytest.approx(1.0)

    def test_full_ranking(self):
        store = random_unit_store(40, 4, seed=13)
        model = kmeans_fit(store, k=5, seed=13)
        rng = np.random.default_rng(99)
        for _ in range(20):
            q = rng.normal(size=4)
            out = nearest_centroids(q, model, model.k)
            # oracle: full sort of cosine scores with index tie-break
            qn = q / np.linalg.norm(q)
            scores = model.centroids @ qn
            expect = sorted(range(model.k), key=lambda c: (-scores[c], c))
            assert [c for c, _ in out] == expect

    def test_tie_breaks_to_lowest_index(self):
        model = manual_model()
        out = nearest_centroids(np.array([1.0, 1.0]), model, 2)
        assert [c for c, _ in out] == [0, 1]

    def test_m_out_of_range(self):
        model = manual_model()
        with pytest.raises(ValueError):
            nearest_centroids(np.array([1.0, 0.0]), model, 3)
        with pytest.raises(ValueError):
            nearest_centroids(np.array([1.0, 0.0]), model, 0)


class TestPersistence:
    def test_round_trip(self, tmp_path):
        store = random_unit_store(60, 8, seed=17)
        model = kmeans_fit(store, k=5, seed=17)
        cpath, apath = model_paths(tmp_path)
        save_model(model, cpath, apath)
        loaded = load_model(cpath, apath)
        assert loaded.k == model.k
        assert loaded.spherical == model.spherical
        assert loaded.assignments == model.assignments
        np.testing.assert_allclose(loaded.centroids, model.centroids, atol=1e-6)
        assert sorted(map(sorted, loaded.members)) == sorted(
            map(sorted, model.members)
        )

    def test_loaded_model_ranks_like_original(self, tmp_path):
        store = random_unit_store(50, 6, seed=19)
        model = kmeans_fit(store, k=4, seed=19)
        cpath, apath = model_paths(tmp_path)
        save_model(model, cpath, apath)
        loaded = load_model(cpath, apath)
        rng = np.random.default_rng(7)
        for _ in range(10):
            q = rng.normal(size=6)
            assert [c for c, _ in nearest_centroids(q, model, 4)] == [
                c for c, _ in nearest_centroids(q, loaded, 4)
            ]


class TestModelValidation:
    def test_inconsistent_members_rejected(self):
        with pytest.raises(ValueError):
            ClusterModel(
                k=2,
                centroids=np.eye(2),
                assignments={"a": 0, "b": 1},
                members=(("a", "b"), ()),
                inertia=0.0,
                spherical=False,
            )

    def test_out_of_range_assignment_rejected(self):
        with pytest.raises(ValueError):
            ClusterModel(
                k=1,
                centroids=np.eye(1),
                assignments={"a": 3},
                members=((),),
                inertia=0.0,
                spherical=False,
            )

    def test_non_unit_spherical_centroids_rejected(self):
        with pytest.raises(ValueError, match="unit"):
            ClusterModel(
                k=1,
                centroids=np.array([[2.0, 0.0]]),
                assignments={"a": 0},
                members=(("a",),),
                inertia=0.0,
                spherical=True,
            )
