"""Metric learning tests: standardization, LDML training, MI diagnostic."""

import numpy as np
import pytest

from sensorprint.metric import (
    MetricModel,
    feature_mutual_information,
    load_metric_model,
    save_metric_model,
    standardize_fit,
    train_ldml,
    transform,
)


def toy_data(n_dev=4, n_per=6, d=10, gap=3.0, seed=0):
    """Separable clusters: one device per corner of a scaled simplex plus noise."""
    rng = np.random.default_rng(seed)
    X = []
    y = []
    for dev in range(n_dev):
        center = np.zeros(d)
        center[dev % d] = gap
        X.append(center + rng.normal(size=(n_per, d)))
        y += [f"dev{dev}"] * n_per
    return np.vstack(X), np.array(y)


def loo_1nn_accuracy(Z, y):
    d2 = np.sum((Z[:, None, :] - Z[None, :, :]) ** 2, axis=-1)
    np.fill_diagonal(d2, np.inf)
    return np.mean(y[np.argmin(d2, axis=1)] == y)


def test_standardize_symmetric_vectors():
    v = np.array([1.0, -2.0, 3.0])
    means, stds = standardize_fit(np.stack([v, -v]))
    np.testing.assert_allclose(means, 0.0, atol=1e-15)


def test_standardize_hand_case():
    means, stds = standardize_fit(np.array([[0.0], [2.0]]))
    assert means[0] == 1.0
    assert stds[0] == 1.0  # population std of {0, 2}


def test_standardize_constant_dimension_gets_unit_std():
    X = np.array([[1.0, 5.0], [2.0, 5.0], [3.0, 5.0]])
    means, stds = standardize_fit(X)
    assert stds[1] == 1.0
    assert means[1] == 5.0


def test_standardize_rejects_single_vector():
    with pytest.raises(ValueError, match=">= 2"):
        standardize_fit(np.array([[1.0, 2.0]]))


def test_zero_iterations_gives_identity_transform():
    X, y = toy_data()
    model = train_ldml(X, y, iterations=0)
    np.testing.assert_array_equal(model.L, np.eye(X.shape[1]))
    Z = transform(model, X)
    np.testing.assert_allclose(Z, (X - model.means) / model.stds, atol=1e-12)


def test_training_is_deterministic():
    X, y = toy_data()
    m1 = train_ldml(X, y, iterations=30, seed=5)
    m2 = train_ldml(X, y, iterations=30, seed=5)
    np.testing.assert_array_equal(m1.L, m2.L)
    assert m1.bias == m2.bias


def test_objective_monotone_over_accepted_steps():
    X, y = toy_data()
    _, history = train_ldml(X, y, iterations=50, return_history=True)
    assert len(history) > 1  # training actually moved
    diffs = np.diff(history)
    assert np.all(diffs >= 0)


def test_training_improves_objective_and_psd():
    X, y = toy_data()
    model, history = train_ldml(X, y, iterations=50, return_history=True)
    assert history[-1] > history[0]
    M = model.L.T @ model.L
    eigvals = np.linalg.eigvalsh(M)
    assert np.all(eigvals >= -1e-10)


def test_ldml_not_worse_than_identity_on_noisy_dimension():
    # dimension 0 separates the devices by a gap of 10, dimension 1 is pure
    # noise with std 100; learned metric must not lose to the identity
    rng = np.random.default_rng(1)
    n_per = 20
    X = np.zeros((2 * n_per, 2))
    X[:n_per, 0] = rng.normal(0.0, 1.0, n_per)
    X[n_per:, 0] = rng.normal(10.0, 1.0, n_per)
    X[:, 1] = rng.normal(0.0, 100.0, 2 * n_per)
    y = np.array(["a"] * n_per + ["b"] * n_per)
    base = train_ldml(X, y, iterations=0)
    model = train_ldml(X, y, iterations=200, step=1e-3)
    acc_base = loo_1nn_accuracy(transform(base, X), y)
    acc_ldml = loo_1nn_accuracy(transform(model, X), y)
    assert acc_ldml >= acc_base


def test_train_rejects_insufficient_devices():
    X = np.random.default_rng(0).normal(size=(5, 3))
    y = np.array(["a", "a", "a", "a", "b"])  # only one device has >= 2 samples
    with pytest.raises(ValueError, match="devices"):
        train_ldml(X, y)


def test_transform_at_means_is_zero():
    X, y = toy_data()
    model = train_ldml(X, y, iterations=10)
    out = transform(model, model.means)
    np.testing.assert_allclose(out, 0.0, atol=1e-12)


def test_transform_rejects_dimension_mismatch():
    X, y = toy_data(d=10)
    model = train_ldml(X, y, iterations=0)
    with pytest.raises(ValueError, match="dimension"):
        transform(model, np.zeros(7))


def test_transform_distances_are_a_metric():
    X, y = toy_data(seed=2)
    model = train_ldml(X, y, iterations=30)
    Z = transform(model, X[:6])
    d = lambda a, b: np.linalg.norm(a - b)
    for i in range(6):
        for j in range(6):
            assert d(Z[i], Z[j]) == pytest.approx(d(Z[j], Z[i]))
            for k in range(6):
                assert d(Z[i], Z[k]) <= d(Z[i], Z[j]) + d(Z[j], Z[k]) + 1e-9


def test_standardization_absorbs_global_scaling():
    X, y = toy_data(seed=3)
    m1 = train_ldml(X, y, iterations=20, seed=7)
    m2 = train_ldml(X * 10.0, y, iterations=20, seed=7)
    np.testing.assert_allclose(transform(m1, X), transform(m2, X * 10.0), atol=1e-8)


def test_reduced_projection_dimension():
    X, y = toy_data(d=10)
    model = train_ldml(X, y, d_prime=4, iterations=20)
    assert model.L.shape == (4, 10)
    assert model.d_prime == 4
    assert transform(model, X).shape == (len(X), 4)


def test_model_json_round_trip(tmp_path):
    X, y = toy_data()
    model = train_ldml(X, y, iterations=15, seed=9)
    p = tmp_path / "model.json"
    save_metric_model(model, p)
    import json

    payload = json.loads(p.read_text())
    for key in ("means", "stds", "L", "bias", "d_prime", "seed"):
        assert key in payload
    loaded = load_metric_model(p)
    np.testing.assert_array_equal(loaded.L, model.L)
    np.testing.assert_array_equal(loaded.means, model.means)
    assert loaded.bias == model.bias
    assert loaded.trained_on == model.trained_on


def test_metric_model_rejects_nonpositive_std():
    with pytest.raises(ValueError, match="stds"):
        MetricModel(np.zeros(3), np.array([1.0, 0.0, 1.0]), np.eye(3), 0.0, 0)


def test_mi_perfectly_informative_binary_feature():
    X = np.array([[0.0]] * 50 + [[1.0]] * 50)
    y = np.array(["a"] * 50 + ["b"] * 50)
    mi = feature_mutual_information(X, y, bins=2)
    assert mi[0] == pytest.approx(1.0, abs=1e-12)


def test_mi_independent_feature_near_zero():
    rng = np.random.default_rng(4)
    n = 10_000
    X = rng.uniform(size=(n, 1))
    y = rng.choice(["a", "b"], size=n)
    mi = feature_mutual_information(X, y, bins=10)
    assert mi[0] < 0.05


def test_mi_constant_feature_is_zero():
    X = np.column_stack([np.full(40, 2.5), np.arange(40.0)])
    y = np.array(["a", "b"] * 20)
    mi = feature_mutual_information(X, y, bins=4)
    assert mi[0] == 0.0


def test_mi_rejects_single_label():
    X = np.random.default_rng(0).normal(size=(10, 2))
    with pytest.raises(ValueError, match="labels"):
        feature_mutual_information(X, np.array(["a"] * 10))


def test_mi_informative_beats_noise_on_ranking():
    rng = np.random.default_rng(6)
    n = 400
    y = np.repeat(["a", "b", "c", "d"], n // 4)
    informative = np.repeat([0.0, 3.0, 6.0, 9.0], n // 4) + rng.normal(0, 0.3, n)
    noise = rng.normal(0, 1.0, n)
    mi = feature_mutual_information(np.column_stack([informative, noise]), y, bins=10)
    assert mi[0] > mi[1] + 0.5
