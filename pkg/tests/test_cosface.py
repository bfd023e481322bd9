import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from facetf.cosface import DegenerateInputError, MarginHead, cosface_logits, cosface_loss, cross_entropy
from facetf.gradcheck import numerical_grad, relative_error
from facetf.tensor import Tape, Tensor


def head(w, s=64.0, m=0.35):
    return MarginHead(Tensor(np.asarray(w, dtype=np.float64), requires_grad=True), s, m)


def test_aligned_embedding_default_constants():
    logits = cosface_logits(Tensor([2.0, 0.0]), head([[1.0, 0.0], [0.0, 3.0]]), 0)
    np.testing.assert_allclose(logits.data, [64 * (1 - 0.35), 0.0], atol=1e-12)
    assert logits.data[0] == pytest.approx(41.6)


def test_zero_margin_unit_scale_gives_cosines():
    rng = np.random.default_rng(0)
    e, w = rng.normal(size=4), rng.normal(size=(3, 4))
    logits = cosface_logits(Tensor(e), head(w, s=1.0, m=0.0), 1).data
    want = [np.dot(e, wj) / np.linalg.norm(e) / np.linalg.norm(wj) for wj in w]
    np.testing.assert_allclose(logits, want, atol=1e-12)


def test_single_class_loss_is_zero():
    loss, _ = cosface_loss(Tensor([0.3, -1.0]), head([[1.0, 2.0]]), 0)
    assert loss.data == 0.0


def test_margin_only_at_label():
    rng = np.random.default_rng(1)
    e, w = Tensor(rng.normal(size=(2, 5))), rng.normal(size=(4, 5))
    with_m = cosface_logits(e, head(w, m=0.35), [1, 3]).data
    no_m = cosface_logits(e, head(w, m=0.0), [1, 3]).data
    diff = no_m - with_m
    expected = np.zeros((2, 4))
    expected[0, 1] = expected[1, 3] = 64 * 0.35
    np.testing.assert_allclose(diff, expected, atol=1e-12)


def test_zero_norm_is_an_error_in_strict_mode():
    with pytest.raises(DegenerateInputError):
        cosface_logits(Tensor([0.0, 0.0]), head([[1.0, 0.0]]), 0)
    with pytest.raises(DegenerateInputError):
        cosface_logits(Tensor([1.0, 0.0]), head([[1.0, 0.0], [0.0, 0.0]]), 0)
    # training mode tolerates it
    out = cosface_logits(Tensor([0.0, 0.0]), head([[1.0, 0.0]]), 0, strict=False)
    assert np.all(np.isfinite(out.data))


def test_invalid_head_constants():
    with pytest.raises(ValueError):
        head([[1.0]], s=0.0)
    with pytest.raises(ValueError):
        head([[1.0]], m=1.0)


def test_label_out_of_range():
    with pytest.raises(ValueError):
        cosface_logits(Tensor([1.0, 0.0]), head([[1.0, 0.0]]), 1)


# ------------------------------------------------------------- cross entropy


def test_uniform_logits_loss_is_log_n():
    assert cross_entropy(Tensor(np.zeros(7)), 3).data == pytest.approx(math.log(7), abs=1e-15)


def test_confident_logits_softplus():
    loss = cross_entropy(Tensor([41.6, 0.0]), 0).data
    assert loss == pytest.approx(math.log1p(math.exp(-41.6)), rel=1e-6)
    assert loss < 1e-17


def test_cross_entropy_gradient():
    rng = np.random.default_rng(2)
    logits = Tensor(rng.normal(size=(3, 5)) * 3, requires_grad=True)
    labels = [0, 4, 2]
    with Tape() as tape:
        loss = cross_entropy(logits, labels)
    tape.backward(loss)
    num = numerical_grad(lambda: float(cross_entropy(logits, labels).data), logits)
    assert relative_error(logits.grad, num) < 1e-6


def test_cosface_loss_gradient():
    rng = np.random.default_rng(3)
    e = Tensor(rng.normal(size=(3, 6)), requires_grad=True)
    h = head(rng.normal(size=(4, 6)), s=8.0)
    labels = [1, 0, 3]
    with Tape() as tape:
        loss, _ = cosface_loss(e, h, labels)
    tape.backward(loss)
    for t in (e, h.class_weights):
        num = numerical_grad(lambda: float(cosface_loss(e, h, labels)[0].data), t)
        assert relative_error(t.grad, num) < 1e-6


# ---------------------------------------------------------------- properties

vec = arrays(np.float64, 6, elements=st.floats(-5, 5)).filter(lambda v: np.linalg.norm(v) > 1e-3)


@settings(max_examples=50, deadline=None)
@given(vec, st.floats(1e-3, 1e3), st.integers(0, 3))
def test_scale_invariance(e, c, label):
    w = np.random.default_rng(4).normal(size=(4, 6))
    a = cosface_loss(Tensor(e), head(w), label)[0].data
    b = cosface_loss(Tensor(e * c), head(w), label)[0].data
    assert a == pytest.approx(b, rel=1e-9, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(vec, st.floats(0, 0.98), st.floats(0, 0.98), st.integers(0, 3))
def test_margin_monotonicity(e, m1, m2, label):
    lo, hi = sorted((m1, m2))
    w = np.random.default_rng(5).normal(size=(4, 6))
    a = cosface_loss(Tensor(e), head(w, m=lo), label)[0].data
    b = cosface_loss(Tensor(e), head(w, m=hi), label)[0].data
    assert a <= b + 1e-12
    assert a >= 0
