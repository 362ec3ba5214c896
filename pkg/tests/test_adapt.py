import numpy as np
import pytest

from episodic_nca.adapt import (
    AdaptationError,
    AdaptConfig,
    MahalanobisMetric,
    finetune_on_support,
    learn_mahalanobis,
    support_nca,
)
from episodic_nca.embed import ModelConfig, init_mlp
from episodic_nca.evaluation import classify
from episodic_nca.losses import nca_loss
from episodic_nca.numerics import RngStream


def support(rng, w=5, n=5, d=6):
    y = np.repeat(np.arange(w), n)
    return rng.normal(size=(w, d))[y] + 0.8 * rng.normal(size=(w * n, d)), y


class TestFinetune:
    def test_one_shot_rejected(self, rng):
        params = init_mlp(6, ModelConfig((8,), 4), RngStream(0))
        X, y = support(rng, n=1)
        with pytest.raises(AdaptationError, match="insufficient positives for support adaptation"):
            finetune_on_support(params, X, y)

    def test_zero_lr(self, rng):
        params = init_mlp(6, ModelConfig((8,), 4), RngStream(0))
        X, y = support(rng)
        out = finetune_on_support(params, X, y, AdaptConfig(learning_rate=0.0))
        for a, b in zip(out.arrays(), params.arrays()):
            np.testing.assert_array_equal(a, b)

    def test_does_not_mutate_input(self, rng):
        params = init_mlp(6, ModelConfig((8,), 4, projection_dim=3), RngStream(0))
        before = [a.copy() for a in params.arrays()]
        X, y = support(rng)
        out = finetune_on_support(params, X, y)
        for a, b in zip(params.arrays(), before):
            np.testing.assert_array_equal(a, b)
        assert out.projection is None

    def test_loss_decreases(self, rng):
        params = init_mlp(6, ModelConfig((16,), 4), RngStream(0))
        X, y = support(rng)
        tuned = finetune_on_support(params, X, y, AdaptConfig(epochs=5))
        assert support_nca(tuned, X, y) < support_nca(params, X, y)

    @pytest.mark.parametrize("kwargs", [{"epochs": 0}, {"learning_rate": -1.0}])
    def test_config(self, kwargs):
        with pytest.raises(ValueError):
            AdaptConfig(**kwargs)


class TestMahalanobis:
    def test_zero_steps_identity(self, rng):
        Z, y = support(rng, d=3)
        m = learn_mahalanobis(Z, y, steps=0)
        np.testing.assert_array_equal(m.matrix, np.eye(3))
        np.testing.assert_array_equal(m.transform(Z), Z)

    def test_psd(self, rng):
        for seed in range(10):
            Z, y = support(np.random.default_rng(seed), d=4)
            A = learn_mahalanobis(Z, y, steps=50, lr=0.05).matrix
            np.testing.assert_allclose(A, A.T, atol=1e-14)
            assert np.linalg.eigvalsh(A).min() >= -1e-10

    def test_loss_decreases(self, rng):
        Z = np.concatenate([rng.normal([-1, 0], [0.5, 3], size=(5, 2)), rng.normal([1, 0], [0.5, 3], size=(5, 2))])
        y = np.repeat([0, 1], 5)
        m = learn_mahalanobis(Z, y, steps=100, lr=0.01)
        assert nca_loss(m.transform(Z), y).value < nca_loss(Z, y).value

    def test_identity_keeps_predictions(self, rng):
        S, Q = rng.normal(size=(10, 3)), rng.normal(size=(20, 3))
        y = np.repeat(np.arange(5), 2)
        m = MahalanobisMetric(np.eye(3))
        for name in ("centroid", "knn", "soft"):
            np.testing.assert_array_equal(classify(name, m.transform(S), y, m.transform(Q)), classify(name, S, y, Q))

    def test_one_shot_rejected(self, rng):
        with pytest.raises(AdaptationError):
            learn_mahalanobis(rng.normal(size=(3, 2)), [0, 1, 2])
