#!/usr/bin/env python
# -*- coding: utf-8 -*-

import json
import struct

import numpy as np
import pytest
from sklearn.metrics import adjusted_rand_score

from conftest import make_map
from reliscope.utils.embed_cluster import (
    ClusterModel, PcaBasis, affinity, assign_knn, assign_knn_batch, embed_maps, fit_cluster_model, fit_pca,
    load_cluster_model, normalize_map, project, project_vector, save_cluster_model, spectral_cluster, vectorize,
)
from reliscope.utils.errors import (
    CheckpointError, InsufficientSamples, InvalidInputError, IsolatedSample, NumericalError, ShapeMismatchError,
    TruncatedCheckpoint,
)


def _random_maps(count: int, side: int = 6, seed: int = 0):
    rng = np.random.default_rng(seed)
    return [make_map(f"m_{i:03d}", rng.uniform(size=(side, side))) for i in range(count)]


def _grouped_maps(per_group: int = 10, side: int = 8, seed: int = 0, prefix: str = "g"):
    """三组显著性图：热点分别位于左上、右上、下方中部"""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:side, 0:side]
    centers = [(1.5, 1.5), (1.5, side - 2.5), (side - 2.0, side / 2.0)]
    maps, groups = [], []
    for group, (cy, cx) in enumerate(centers):
        blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / 3.0)
        for _ in range(per_group):
            values = blob + rng.normal(0.0, 0.02, size=blob.shape)
            maps.append(make_map(f"{prefix}_{len(maps):03d}", values))
            groups.append(group)
    return maps, np.array(groups)


def _blobs(seed: int):
    rng = np.random.default_rng(seed)
    centers = np.array([[0.0, 0.0], [5.0, 0.0], [0.0, 5.0]])
    points = np.concatenate([center + rng.normal(0.0, 0.3, size=(20, 2)) for center in centers])
    truth = np.repeat(np.arange(3), 20)
    return points, truth


# ---------------------------------------------------------------------------
# PCA
# ---------------------------------------------------------------------------

class TestPca:
    def test_normalize_map(self):
        assert np.array_equal(normalize_map(np.full((2, 2), 3.0)), np.zeros((2, 2)))
        assert normalize_map(np.array([[2.0, 4.0], [3.0, 6.0]])).tolist() == [[0.0, 0.5], [0.25, 1.0]]

    def test_orthonormal_components(self):
        basis = fit_pca(_random_maps(60), dim=10)
        gram = basis.components @ basis.components.T
        assert np.allclose(gram, np.eye(10), atol=1e-6)
        assert np.all(np.diff(basis.explained_variance_ratios) <= 1e-12)

    def test_full_rank_reconstruction(self):
        maps = _random_maps(20)
        basis = fit_pca(maps, dim=19)
        data = vectorize(maps)
        reconstructed = project_vector(basis, data) @ basis.components + basis.mean
        assert np.allclose(reconstructed, data, atol=1e-5)

    def test_exact_subspace_variance(self):
        rng = np.random.default_rng(4)
        base = rng.uniform(0.3, 0.7, size=36)
        base[0], base[1] = 0.0, 1.0
        patterns = rng.uniform(-0.03, 0.03, size=(3, 36))
        patterns[:, :2] = 0.0
        maps = [
            make_map(f"s_{i}", (base + rng.uniform(-1.0, 1.0, size=3) @ patterns).reshape(6, 6))
            for i in range(30)
        ]
        basis = fit_pca(maps, dim=3)
        assert basis.explained_variance_ratios.sum() == pytest.approx(1.0, abs=1e-9)
        assert fit_pca(maps, variance_target=0.999).dim == 3

    def test_sign_convention(self):
        basis = fit_pca(_random_maps(30), dim=5)
        for component in basis.components:
            assert component[np.argmax(np.abs(component))] > 0

    def test_insufficient_samples(self):
        with pytest.raises(InsufficientSamples) as info:
            fit_pca(_random_maps(5), dim=10)
        assert info.value.exit_code == 3

    def test_project_checks_shape(self):
        basis = fit_pca(_random_maps(10), dim=3)
        with pytest.raises(ShapeMismatchError):
            project(basis, make_map("x", np.zeros((4, 4))))

    def test_project_of_mean_and_first_component(self):
        basis = fit_pca(_random_maps(12), dim=4)
        assert np.allclose(project_vector(basis, basis.mean), np.zeros(4))
        expected = np.eye(4)[0]
        assert np.allclose(project_vector(basis, basis.mean + basis.components[0]), expected, atol=1e-6)

    def test_non_finite_map(self):
        maps = _random_maps(10)
        values = maps[4].values.copy()
        values[2, 3] = np.nan
        maps[4] = make_map(maps[4].image_id, values)
        with pytest.raises(NumericalError) as info:
            fit_pca(maps, dim=3)
        assert info.value.exit_code == 4

    def test_project_matches_batch(self):
        maps = _random_maps(12)
        basis = fit_pca(maps, dim=4)
        batch = embed_maps(basis, maps)
        assert np.allclose(project(basis, maps[3]).vector, batch[3], atol=1e-6)


# ---------------------------------------------------------------------------
# 相似度与谱聚类
# ---------------------------------------------------------------------------

class TestSpectral:
    def test_affinity_at_sigma(self):
        matrix = affinity(np.array([[0.0, 0.0], [0.2, 0.0]]), sigma=0.2)
        assert matrix[0, 1] == pytest.approx(np.exp(-0.5))
        assert np.array_equal(np.diag(matrix), [1.0, 1.0])
        assert np.array_equal(matrix, matrix.T)

    def test_affinity_decreases_with_distance(self):
        points = np.array([[0.0], [0.05], [0.1], [0.2], [0.4], [0.8]])
        row = affinity(points, sigma=0.2)[0]
        assert np.all(np.diff(row) < 0)
        assert np.all(row > 0)

    @pytest.mark.parametrize("seed", range(10))
    def test_recovers_three_blobs(self, seed):
        points, truth = _blobs(seed)
        result = spectral_cluster(affinity(points, sigma=1.0), q=3, seed=seed)
        assert adjusted_rand_score(truth, result.labels) == 1.0
        assert result.labels[0] == 1
        assert set(result.labels.tolist()) == {1, 2, 3}

    def test_eigen_residuals(self):
        points, _ = _blobs(0)
        result = spectral_cluster(affinity(points, sigma=1.0), q=3, seed=0)
        for index in range(3):
            vector = result.eigenvectors[:, index]
            residual = result.laplacian @ vector - result.eigenvalues[index] * vector
            assert np.linalg.norm(residual) < 1e-8
        assert len(result.eigenvalues) == 4

    def test_permutation_equivariance(self):
        points, _ = _blobs(3)
        permutation = np.random.default_rng(3).permutation(len(points))
        original = spectral_cluster(affinity(points, sigma=1.0), q=3, seed=1).labels
        permuted = spectral_cluster(affinity(points[permutation], sigma=1.0), q=3, seed=1).labels
        assert adjusted_rand_score(original[permutation], permuted) == 1.0

    def test_fewer_samples_than_clusters(self):
        with pytest.raises(InsufficientSamples):
            spectral_cluster(np.ones((2, 2)), q=3)

    def test_isolated_sample(self):
        points = np.array([[0.0, 0.0], [0.1, 0.0], [1000.0, 0.0]])
        with pytest.raises(IsolatedSample) as info:
            spectral_cluster(affinity(points, sigma=0.1), q=2)
        assert info.value.exit_code == 4


# ---------------------------------------------------------------------------
# kNN传递
# ---------------------------------------------------------------------------

def _line_model(positions, labels, q: int = 3) -> ClusterModel:
    basis = PcaBasis(mean=np.zeros(1), components=np.ones((1, 1)), explained_variance_ratios=np.ones(1),
                     height=1, width=1)
    return ClusterModel(
        basis=basis, image_ids=[f"t{i}" for i in range(len(positions))],
        embeddings=np.asarray(positions, dtype=np.float64)[:, None], labels=np.asarray(labels), q=q,
    )


class TestKnn:
    def test_majority_vote(self):
        model = _line_model([0.1, 0.2, 0.3, 0.4, 0.5], [1, 1, 2, 2, 2])
        assert assign_knn(model, np.array([0.0]), k=5) == 2

    def test_count_tie_broken_by_mean_distance(self):
        model = _line_model([0.1, 0.3, 0.35, 0.6], [1, 2, 2, 1])
        assert assign_knn(model, np.array([0.0]), k=4) == 2

    def test_full_tie_broken_by_smaller_id(self):
        model = _line_model([0.5, -0.5], [3, 1])
        assert assign_knn(model, np.array([0.0]), k=2) == 1

    def test_k_larger_than_training_set(self):
        model = _line_model([0.1, 0.2], [1, 2])
        with pytest.raises(InsufficientSamples):
            assign_knn_batch(model, np.zeros((1, 1)), k=3)

    def test_training_points_keep_their_cluster(self):
        maps, _ = _grouped_maps()
        model = fit_cluster_model(maps, dim=5, q=3, sigma=0.2, seed=1)
        assert assign_knn_batch(model, model.embeddings, k=1) == model.labels.tolist()


# ---------------------------------------------------------------------------
# 聚类模型
# ---------------------------------------------------------------------------

class TestClusterModel:
    def test_grouped_maps_recovered(self):
        maps, groups = _grouped_maps()
        model = fit_cluster_model(maps, dim=5, q=3, sigma=0.2, seed=2)
        assert adjusted_rand_score(groups, model.labels) == 1.0
        assert model.cluster_sizes() == {1: 10, 2: 10, 3: 10}
        assert len(model.eigengaps) == 3

    def test_deterministic(self):
        maps, _ = _grouped_maps()
        first = fit_cluster_model(maps, dim=5, q=3, seed=6)
        second = fit_cluster_model(maps, dim=5, q=3, seed=6)
        assert first.labels.tolist() == second.labels.tolist()
        assert np.array_equal(first.embeddings, second.embeddings)

    def test_duplicate_ids(self):
        maps, _ = _grouped_maps()
        maps[1] = make_map(maps[0].image_id, maps[1].values)
        with pytest.raises(InvalidInputError):
            fit_cluster_model(maps, dim=5, q=3)

    def test_file_round_trip(self, tmp_path):
        maps, groups = _grouped_maps()
        model = fit_cluster_model(maps, dim=5, q=3, sigma=0.2, seed=2)
        model.cluster_stats = [{"cluster_id": 1, "r": 0.5}]
        path = tmp_path / "gradcam.cmodel"
        save_cluster_model(model, path)
        loaded = load_cluster_model(path)

        assert loaded.image_ids == model.image_ids
        assert loaded.labels.tolist() == model.labels.tolist()
        assert np.array_equal(loaded.embeddings, model.embeddings)
        assert np.array_equal(loaded.basis.components, model.basis.components)
        assert loaded.scale == model.scale
        assert loaded.cluster_stats == model.cluster_stats

        queries, query_groups = _grouped_maps(per_group=4, seed=9, prefix="q")
        original = assign_knn_batch(model, embed_maps(model.basis, queries), k=5)
        reloaded = assign_knn_batch(loaded, embed_maps(loaded.basis, queries), k=5)
        assert original == reloaded
        label_of_group = {g: model.labels[groups == g][0] for g in range(3)}
        assert original == [label_of_group[g] for g in query_groups]

    def test_truncated_file(self, tmp_path):
        maps, _ = _grouped_maps()
        path = tmp_path / "m.cmodel"
        save_cluster_model(fit_cluster_model(maps, dim=5, q=3), path)
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(TruncatedCheckpoint):
            load_cluster_model(path)

    def test_short_file(self, tmp_path):
        path = tmp_path / "m.cmodel"
        path.write_bytes(b"RS")
        with pytest.raises(TruncatedCheckpoint):
            load_cluster_model(path)

    def test_wrong_magic(self, tmp_path):
        path = tmp_path / "m.cmodel"
        path.write_bytes(b"XXXX" + bytes(12))
        with pytest.raises(CheckpointError):
            load_cluster_model(path)

    def test_header_missing_field(self, tmp_path):
        maps, _ = _grouped_maps()
        path = tmp_path / "m.cmodel"
        save_cluster_model(fit_cluster_model(maps, dim=5, q=3), path)
        data = path.read_bytes()
        version, length = struct.unpack("<HI", data[4:10])
        header = json.loads(data[10:10 + length].decode("utf-8"))
        del header["assignments"]
        header_bytes = json.dumps(header).encode("utf-8")
        path.write_bytes(data[:4] + struct.pack("<HI", version, len(header_bytes)) + header_bytes + data[10 + length:])
        with pytest.raises(CheckpointError, match="assignments") as info:
            load_cluster_model(path)
        assert info.value.exit_code == 2
