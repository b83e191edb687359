import numpy as np
import pytest

from resbrnet.data import LabeledDataset
from resbrnet.embedding import (
    TsneConfig,
    conditional_probabilities,
    extract_features,
    joint_probabilities,
    squared_distances,
    tsne,
)
from resbrnet.errors import InputError, TsneConfigError
from resbrnet.model import build_res_brnet, canonical_config, desk_config


def two_clusters(n_per=40, d=10, spread=0.1, gap=10.0, seed=0):
    rng = np.random.default_rng(seed)
    a = rng.normal(0, spread, size=(n_per, d))
    b = rng.normal(0, spread, size=(n_per, d))
    b[:, 0] += gap
    return np.vstack([a, b]), np.repeat([0, 1], n_per)


def one_nn_agreement(y, labels):
    d = squared_distances(y)
    np.fill_diagonal(d, np.inf)
    return float(np.mean(labels[d.argmin(axis=1)] == labels))


class TestAffinities:
    def test_squared_distances(self):
        x = np.random.default_rng(0).normal(size=(6, 3))
        ref = ((x[:, None, :] - x[None, :, :]) ** 2).sum(-1)
        np.testing.assert_allclose(squared_distances(x), ref, atol=1e-12)

    @pytest.mark.parametrize("perplexity", [2.0, 5.0, 15.0])
    def test_perplexity_calibration(self, perplexity):
        x = np.random.default_rng(1).normal(size=(60, 5))
        p, perps = conditional_probabilities(squared_distances(x), perplexity)
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(np.diag(p) == 0)
        h = -np.sum(np.where(p > 0, p * np.log2(np.where(p > 0, p, 1)), 0), axis=1)
        np.testing.assert_allclose(2**h, perplexity, atol=1e-3)
        np.testing.assert_allclose(perps, perplexity, atol=1e-3)

    def test_widely_scaled_inputs(self):
        x = np.random.default_rng(2).normal(size=(40, 3)) * 1e4
        _, perps = conditional_probabilities(squared_distances(x), 8.0)
        assert np.max(np.abs(perps - 8.0)) < 1e-3

    def test_joint_is_symmetric_distribution(self):
        x = np.random.default_rng(3).normal(size=(50, 4))
        p, _ = joint_probabilities(x, 10.0)
        np.testing.assert_allclose(p, p.T, atol=1e-15)
        assert np.all(p >= 0)
        assert abs(p.sum() - 1.0) < 1e-6


class TestTsne:
    def test_two_clusters(self):
        x, labels = two_clusters()
        res = tsne(x, TsneConfig(perplexity=10.0, iterations=500, seed=0))
        assert res.embedding.shape == (80, 2)
        assert one_nn_agreement(res.embedding, labels) >= 0.95
        assert res.kl_at(500) < res.kl_at(250)

    def test_centred(self):
        x, _ = two_clusters(20)
        res = tsne(x, TsneConfig(perplexity=5.0, iterations=300))
        np.testing.assert_allclose(res.embedding.mean(axis=0), 0.0, atol=1e-10)

    def test_seeded(self):
        x, _ = two_clusters(15)
        a = tsne(x, TsneConfig(perplexity=5.0, iterations=100, seed=1)).embedding
        b = tsne(x, TsneConfig(perplexity=5.0, iterations=100, seed=1)).embedding
        c = tsne(x, TsneConfig(perplexity=5.0, iterations=100, seed=2)).embedding
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_perplexity_too_large(self):
        with pytest.raises(TsneConfigError):
            tsne(np.zeros((89, 3)), TsneConfig(perplexity=30.0))

    def test_bad_iterations(self):
        with pytest.raises(TsneConfigError):
            tsne(np.random.default_rng(0).normal(size=(12, 2)), TsneConfig(perplexity=2.0, iterations=0))

    def test_non_finite(self):
        x = np.random.default_rng(0).normal(size=(12, 2))
        x[3, 1] = np.nan
        with pytest.raises(InputError):
            tsne(x, TsneConfig(perplexity=2.0))


class TestFeatures:
    def test_rows_and_duplicates(self):
        model = build_res_brnet(desk_config(), seed=0)
        img = np.random.default_rng(0).random((3, 1, 64, 64)).astype(np.float32)
        images = np.concatenate([img, img[:1]])
        ds = LabeledDataset(images, [0, 1, 2, 0], ["a", "b", "c", "d"])
        fm = extract_features(model, ds, batch_size=2)
        assert fm.features.shape == (4, 64)
        np.testing.assert_array_equal(fm.features[0], fm.features[3])
        np.testing.assert_array_equal(fm.labels, [0, 1, 2, 0])

    def test_canonical_width(self):
        model = build_res_brnet(canonical_config(), seed=0)
        ds = LabeledDataset(np.zeros((1, 1, 227, 227), np.float32), [0], ["a", "b", "c", "d"])
        assert extract_features(model, ds).features.shape == (1, 256)
