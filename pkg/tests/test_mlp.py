import numpy as np
import pytest

from shockmaint.mlp import MLP, DegenerateDataError, init_mlp, loss_and_grads, train_classifier


def test_gradients_match_finite_differences(rng):
    net = init_mlp(5, rng, widths=(7, 6, 4))
    net.mu = rng.normal(size=5)
    net.sd = rng.uniform(0.5, 2.0, size=5)
    X = rng.normal(size=(10, 5))
    y = rng.integers(0, 2, size=10)
    _, gW, gb = loss_and_grads(net, X, y)
    h = 1e-6
    for params, grads in ((net.Ws, gW), (net.bs, gb)):
        for p, g in zip(params, grads):
            num = np.zeros_like(p)
            for idx in np.ndindex(p.shape):
                old = p[idx]
                p[idx] = old + h
                up = loss_and_grads(net, X, y)[0]
                p[idx] = old - h
                dn = loss_and_grads(net, X, y)[0]
                p[idx] = old
                num[idx] = (up - dn) / (2 * h)
            assert np.max(np.abs(num - g)) <= 1e-5 * max(1.0, np.max(np.abs(g)))


def test_learns_a_separable_rule(rng):
    X = rng.normal(size=(3000, 4)) * [1.0, 10.0, 0.1, 3.0]
    y = (X[:, 0] + 0.1 * X[:, 1] - 5 * X[:, 2] > 0).astype(int)
    net, rep = train_classifier(X, y, seed=1, widths=(32, 16, 16), max_epochs=60)
    Xt = rng.normal(size=(2000, 4)) * [1.0, 10.0, 0.1, 3.0]
    yt = (Xt[:, 0] + 0.1 * Xt[:, 1] - 5 * Xt[:, 2] > 0).astype(int)
    assert np.mean(net.predict(Xt) == yt) >= 0.99
    assert rep.val_accuracy >= 0.98 and rep.epochs <= 60


def test_shuffled_labels_are_not_learned(rng):
    X = rng.normal(size=(2000, 4))
    y = (X[:, 0] > 0).astype(int)
    y = rng.permutation(y)
    net, rep = train_classifier(X, y, seed=2, widths=(32, 16, 16), max_epochs=30)
    Xt = rng.normal(size=(2000, 4))
    yt = rng.integers(0, 2, size=2000)
    assert abs(np.mean(net.predict(Xt) == yt) - 0.5) < 0.05
    assert rep.val_accuracy < 0.6


def test_degenerate_data():
    with pytest.raises(DegenerateDataError):
        train_classifier(np.zeros((10, 3)), np.zeros(10, dtype=int))
    with pytest.raises(DegenerateDataError):
        train_classifier(np.zeros((1, 3)), np.ones(1, dtype=int))


def test_constant_features_are_standardized_safely(rng):
    X = np.column_stack([rng.normal(size=400), np.full(400, 3.0)])
    y = (X[:, 0] > 0).astype(int)
    net, _ = train_classifier(X, y, seed=0, widths=(16, 8, 8), max_epochs=40)
    assert np.all(np.isfinite(net.logits(X)))
    assert net.sd[1] == 1.0


def test_bytes_roundtrip(rng):
    net = init_mlp(6, rng)
    net.mu = rng.normal(size=6)
    net.sd = rng.uniform(1, 2, size=6)
    back, end = MLP.from_bytes(b"xx" + net.to_bytes(), 2)
    assert end == 2 + len(net.to_bytes())
    X = rng.normal(size=(20, 6))
    assert np.array_equal(back.logits(X), net.logits(X))
    with pytest.raises(ValueError):
        MLP.from_bytes(b"nonsense" * 4)
    with pytest.raises(ValueError):
        init_mlp(6, rng, widths=(4, 4)).kernel_weights()
