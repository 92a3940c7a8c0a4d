"""Tests for the tabular softmax language model."""

import json

import numpy as np
import pytest

from specfair import PAD_TOKEN, TabularSoftmaxModel, context_key, cross_entropy
from specfair.rng import substream


def small_model():
    m = TabularSoftmaxModel(vocab_size=3, order=1)
    m.set_row((0,), [np.log(3.0), 0.0, 0.0])
    m.set_row((1,), [0.0, 0.0, 0.0])
    return m


def test_context_key_pads_short_prefix():
    assert context_key([], 2) == (PAD_TOKEN, PAD_TOKEN)
    assert context_key([7], 2) == (PAD_TOKEN, 7)
    assert context_key([3, 7], 2) == (3, 7)
    assert context_key([1, 3, 7], 2) == (3, 7)


def test_context_key_order_zero():
    assert context_key([1, 2, 3], 0) == ()


def test_predict_softmax_frozen():
    m = small_model()
    # softmax([ln 3, 0, 0]) = [3/5, 1/5, 1/5]
    np.testing.assert_allclose(m.predict([0]), [0.6, 0.2, 0.2], atol=1e-15)
    np.testing.assert_allclose(m.predict([1]), np.full(3, 1.0 / 3.0), atol=1e-15)


def test_predict_missing_row_is_uniform():
    m = small_model()
    np.testing.assert_allclose(m.predict([2]), np.full(3, 1.0 / 3.0), atol=1e-15)


def test_predict_uses_last_order_tokens():
    m = small_model()
    np.testing.assert_array_equal(m.predict([2, 1, 0]), m.predict([0]))


def test_predict_shift_invariance():
    # softmax is invariant to adding a constant to the logit row
    rng = substream(21, "models", "shift")
    m = TabularSoftmaxModel(vocab_size=5, order=1)
    row = rng.normal(size=5)
    m.set_row((0,), row)
    base = m.predict([0])
    m.set_row((0,), row + 123.25)
    np.testing.assert_allclose(m.predict([0]), base, atol=1e-12)


def test_ce_gradient_frozen():
    m = TabularSoftmaxModel(vocab_size=2, order=1)
    m.set_row((0,), [0.0, 0.0])
    g = m.ce_gradient([0], [1.0, 0.0])
    np.testing.assert_allclose(g, [-0.5, 0.5], atol=1e-15)


def test_ce_gradient_sums_to_zero():
    rng = substream(21, "models", "gradsum")
    m = TabularSoftmaxModel(vocab_size=6, order=1)
    for _ in range(50):
        m.set_row((0,), rng.normal(size=6))
        target = rng.dirichlet(np.ones(6))
        g = m.ce_gradient([0], target)
        assert abs(g.sum()) <= 1e-12


def test_ce_gradient_matches_finite_difference():
    # spot check; the acceptance suite runs the bigger sweep
    rng = substream(21, "models", "fd")
    h = 1e-5
    for _ in range(10):
        v = int(rng.integers(2, 9))
        row = rng.normal(size=v)
        target = rng.dirichlet(np.ones(v))
        m = TabularSoftmaxModel(vocab_size=v, order=0)
        m.set_row((), row)
        analytic = m.ce_gradient([], target)
        fd = np.empty(v)
        for j in range(v):
            bump = np.zeros(v)
            bump[j] = h
            m.set_row((), row + bump)
            hi = cross_entropy(target, m.predict([]))
            m.set_row((), row - bump)
            lo = cross_entropy(target, m.predict([]))
            fd[j] = (hi - lo) / (2.0 * h)
        m.set_row((), row)
        rel = np.linalg.norm(analytic - fd) / max(np.linalg.norm(fd), 1e-12)
        assert rel <= 1e-6


def test_add_to_row_creates_and_accumulates():
    m = TabularSoftmaxModel(vocab_size=3, order=1)
    m.add_to_row((0,), np.array([1.0, 0.0, 0.0]))
    m.add_to_row((0,), np.array([0.5, 0.5, 0.0]))
    np.testing.assert_allclose(dict(m.items())[(0,)], [1.5, 0.5, 0.0], atol=1e-15)


def test_set_row_validates():
    m = TabularSoftmaxModel(vocab_size=3, order=1)
    with pytest.raises(ValueError):
        m.set_row((0,), [0.0, 0.0])
    with pytest.raises(ValueError):
        m.set_row((0, 1), [0.0, 0.0, 0.0])
    with pytest.raises(ValueError):
        m.set_row((0,), [np.nan, 0.0, 0.0])


def test_clone_is_independent():
    m = small_model()
    c = m.clone()
    assert c.fingerprint() == m.fingerprint()
    c.set_row((0,), [0.0, 0.0, 0.0])
    assert c.fingerprint() != m.fingerprint()
    np.testing.assert_allclose(m.predict([0]), [0.6, 0.2, 0.2], atol=1e-15)


def test_fingerprint_ignores_insertion_order():
    a = TabularSoftmaxModel(vocab_size=2, order=1)
    a.set_row((0,), [0.1, 0.2])
    a.set_row((1,), [0.3, 0.4])
    b = TabularSoftmaxModel(vocab_size=2, order=1)
    b.set_row((1,), [0.3, 0.4])
    b.set_row((0,), [0.1, 0.2])
    assert a.fingerprint() == b.fingerprint()


def test_json_round_trip():
    m = small_model()
    blob = m.to_json()
    back = TabularSoftmaxModel.from_json(blob)
    assert back.vocab_size == 3
    assert back.order == 1
    assert back.fingerprint() == m.fingerprint()
    np.testing.assert_array_equal(back.predict([0]), m.predict([0]))


def test_json_schema_is_stable():
    blob = json.loads(small_model().to_json())
    assert sorted(blob.keys()) == ["order", "rows", "vocab_size"]
    assert all(sorted(r.keys()) == ["key", "logits"] for r in blob["rows"])


def test_from_dict_rejects_garbage():
    with pytest.raises(ValueError):
        TabularSoftmaxModel.from_dict({"order": 1, "vocab_size": 2})
    with pytest.raises(ValueError):
        TabularSoftmaxModel.from_dict(
            {"order": 1, "vocab_size": 2, "rows": [{"key": [0], "logits": [1.0]}]}
        )
