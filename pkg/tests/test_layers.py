import numpy as np
import pytest
from censurv import backend as B
from censurv.layers import AttentionPooling, Dense, MLP, Model, SAGEConv, get_initializer
from censurv.exceptions import ShapeError, ValidationError
from conftest import check_gradients


def test_dense_builds_on_first_call():
    layer = Dense(3, activation='relu', name='Encoder', seed=0)
    out = layer(B.constant(np.ones((4, 5))))
    assert out.shape == (4, 3)
    assert [w.name for w in layer.weights] == ['Encoder/kernel', 'Encoder/bias']
    assert np.all(out.values >= 0)


def test_dense_rejects_wrong_width():
    layer = Dense(2, seed=0)
    layer.build((None, 3))
    with pytest.raises(ShapeError):
        layer(B.constant(np.ones((1, 4))))


def test_same_seed_same_weights():
    a, b = MLP(4, 1, seed=11), MLP(4, 1, seed=11)
    a.build((None, 6))
    b.build((None, 6))
    for wa, wb in zip(a.weights, b.weights):
        np.testing.assert_array_equal(wa.values, wb.values)


def test_unknown_initializer():
    with pytest.raises(ValidationError):
        get_initializer('lecun_normal')


def test_sage_isolated_node_uses_zero_neighbour_mean():
    layer = SAGEConv(2, seed=3)
    h = np.array([[0.5, -1.0, 2.0]])
    out = layer([B.constant(h), B.constant(np.zeros((1, 1)))])
    expected = np.maximum(np.concatenate([h, np.zeros_like(h)], axis=1) @ layer.kernel.values, 0)
    np.testing.assert_allclose(out.values, expected)


def test_attention_pooling_single_node():
    pooling = AttentionPooling(seed=0)
    v = np.array([[1.5, -2.0, 0.3, 4.0]])
    np.testing.assert_allclose(pooling(B.constant(v)).values, v[0])


def test_attention_pooling_convex_combination(rng):
    pooling = AttentionPooling(seed=1)
    for _ in range(20):
        v = rng.normal(size=(6, 4))
        out = pooling(B.constant(v)).values
        assert np.all(out >= v.min(axis=0) - 1e-12)
        assert np.all(out <= v.max(axis=0) + 1e-12)


def test_attention_pooling_gradient(rng):
    pooling = AttentionPooling(seed=2)
    pooling.build((None, 4))
    w = rng.normal(size=4)
    for _ in range(20):
        check_gradients(lambda x: B.reduce_sum(pooling(x) * B.constant(w)),
                        [rng.normal(size=(5, 4))])


def test_model_weights_snapshot_and_file(tmp_path):
    model = Model(name='Stack')
    first = model.track(Dense(3, name='First', seed=0))
    second = model.track(Dense(1, name='Second', seed=1))
    first.build((None, 2))
    second.build((None, 3))
    snapshot = model.get_weights()
    path = str(tmp_path / 'weights.npz')
    model.save_weights(path)

    for w in model.weights:
        w.assign(np.zeros(w.shape))
    model.load_weights(path)
    for w, v in zip(model.weights, snapshot):
        np.testing.assert_array_equal(w.values, v)

    model.set_weights([np.ones_like(v) for v in snapshot])
    assert all(np.all(w.values == 1.) for w in model.weights)
    with pytest.raises(ValidationError):
        model.set_weights(snapshot[:1])


def test_model_duplicate_parameter_names():
    model = Model()
    for seed in (0, 1):
        layer = model.track(Dense(2, seed=seed))
        layer.build((None, 2))
    with pytest.raises(ValidationError, match='Dense/kernel'):
        model.weights


def test_parameter_assign_checks_shape():
    layer = Dense(2, seed=0)
    layer.build((None, 2))
    with pytest.raises(ShapeError):
        layer.kernel.assign(np.zeros((3, 2)))
