import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from midss.exceptions import DimensionError, TrainingIntegrityError
from midss.grid import argmax_channels, make_rng, one_hot
from midss.objective import (
    confidence_weight,
    ensemble_weight,
    intermediate_losses,
    lambda_schedule,
    segmentation_loss,
    segmentation_loss_grad,
    supervised_loss,
    symmetric_loss,
    total_loss,
    weighted_ce,
    weighted_ce_grad,
    weighted_ce_logit_grad,
    weighted_dice,
    weighted_dice_grad,
)
from midss.ucp import unified_copy_paste


def rand_case(seed, h=3, w=4, c=3):
    rng = make_rng(seed)
    y = one_hot(rng.integers(0, c, size=(h, w)), c)
    p = rng.dirichlet(np.ones(c), size=(h, w))
    wt = (rng.random((h, w)) < 0.6).astype(float)
    return y, p, wt


def test_confidence_weight_threshold():
    p = np.array([[[0.03, 0.97], [0.05, 0.95], [0.5, 0.5]]])
    assert confidence_weight(p, 0.95).tolist() == [[1.0, 1.0, 0.0]]


def test_ce_examples():
    y = one_hot(np.array([[1]]), 2)
    assert weighted_ce(y, np.array([[[0.5, 0.5]]])) == pytest.approx(math.log(2))
    assert weighted_ce(y, np.array([[[0.5, 0.5]]]), np.zeros((1, 1))) == 0
    y2 = one_hot(np.array([[1, 0]]), 2)
    p2 = np.array([[[0.2, 0.8], [0.9, 0.1]]])
    assert weighted_ce(y2, p2) == pytest.approx(-(math.log(0.8) + math.log(0.9)) / 2, abs=1e-12)
    assert weighted_ce(y2, p2) == pytest.approx(0.16425, abs=1e-5)


def test_ce_clips_zero_probability():
    y = one_hot(np.array([[1]]), 2)
    assert weighted_ce(y, np.array([[[1.0, 0.0]]])) == pytest.approx(-math.log(1e-7))


def test_dice_examples():
    fg = np.array([1, 0, 1, 1], float)
    pf = np.array([0.8, 0.1, 0.6, 0.9])
    y = np.stack([1 - fg, fg], -1).reshape(2, 2, 2)
    p = np.stack([1 - pf, pf], -1).reshape(2, 2, 2)
    expected = 1 - (4.6 + 1e-5) / (4.82 + 1e-5)
    assert weighted_dice(y, p) == pytest.approx(expected, abs=1e-12)
    assert weighted_dice(y, p) == pytest.approx(0.04564, abs=1e-5)
    assert weighted_dice(y, y) < 1e-4
    assert weighted_dice(y, p, np.zeros((2, 2))) == 0.0


@given(st.integers(0, 10**6), st.integers(1, 4), st.integers(1, 4), st.integers(2, 4))
def test_losses_match_loop_oracle(seed, h, w, c):
    y, p, wt = rand_case(seed, h, w, c)
    assert abs(weighted_ce(y, p, wt) - oracles.ce(y.tolist(), p.tolist(), wt.tolist())) <= 1e-9
    assert abs(weighted_dice(y, p, wt) - oracles.dice(y.tolist(), p.tolist(), wt.tolist())) <= 1e-9


def test_batched_is_mean_of_elements():
    cases = [rand_case(s) for s in range(3)]
    y, p, w = (np.stack([c[i] for c in cases]) for i in range(3))
    expected = np.mean([segmentation_loss(*c) for c in cases])
    assert segmentation_loss(y, p, w) == pytest.approx(expected, abs=1e-14)


def test_shape_mismatch():
    with pytest.raises(DimensionError):
        weighted_ce(np.zeros((2, 2, 2)), np.zeros((2, 3, 2)))
    with pytest.raises(DimensionError):
        weighted_ce(np.zeros((2, 2, 2)), np.zeros((2, 2, 2)), np.zeros((3, 2)))


@given(st.integers(0, 10**6))
def test_pixel_permutation_invariance(seed):
    y, p, w = rand_case(seed, 4, 4)
    perm = make_rng(seed + 1).permutation(16)
    yp, pp, wp = (a.reshape(16, *a.shape[2:])[perm].reshape(a.shape) for a in (y, p, w))
    assert weighted_ce(yp, pp, wp) == pytest.approx(weighted_ce(y, p, w), abs=1e-12)
    assert weighted_dice(yp, pp, wp) == pytest.approx(weighted_dice(y, p, w), abs=1e-12)


@given(st.integers(0, 10**6))
def test_weight_locality(seed):
    y, p, w = rand_case(seed, 4, 4)
    m = (make_rng(seed + 2).random((4, 4)) < 0.5).astype(float)
    # zeroing weights outside m equals summing only over m's support
    keep = m.astype(bool)
    ce_support = -np.sum((w * m)[keep][:, None] * y[keep] * np.log(np.clip(p[keep], 1e-7, 1 - 1e-7))) / 16
    assert weighted_ce(y, p, w * m) == pytest.approx(ce_support, abs=1e-12)


def central_fd(f, p, h=1e-4):
    g = np.zeros_like(p)
    for idx in np.ndindex(p.shape):
        a, b = p.copy(), p.copy()
        a[idx] += h
        b[idx] -= h
        g[idx] = (f(a) - f(b)) / (2 * h)
    return g


@given(st.integers(0, 10**6))
def test_probability_gradient_matches_fd(seed):
    y, p, w = rand_case(seed, 4, 4, 3)
    p = 0.05 + 0.9 * p  # stay away from the clip boundaries
    g = weighted_ce_grad(y, p, w) + weighted_dice_grad(y, p, w)
    fd = central_fd(lambda q: segmentation_loss(y, q, w), p)
    assert np.linalg.norm(g - fd) <= 1e-4 * max(np.linalg.norm(fd), 1e-12)
    _, gp, gz = segmentation_loss_grad(y, p, w, fused=False)
    assert np.allclose(gp, g) and not np.any(gz)


@given(st.integers(0, 10**6))
def test_fused_logit_gradient(seed):
    rng = make_rng(seed)
    y, _, w = rand_case(seed, 3, 3, 3)
    z = rng.normal(size=(3, 3, 3))

    def softmax(v):
        e = np.exp(v - v.max(-1, keepdims=True))
        return e / e.sum(-1, keepdims=True)

    fd = central_fd(lambda v: weighted_ce(y, softmax(v), w), z, 1e-5)
    g = weighted_ce_logit_grad(y, softmax(z), w)
    assert np.allclose(g, fd, atol=1e-8)


def test_intermediate_losses_oracle():
    rng = make_rng(5)
    h, w, c = 2, 2, 2
    x_w, u_s = rng.uniform(-1, 1, size=(2, h, w, 1))
    y_w = one_hot(np.array([[1, 0], [0, 1]]), c)
    p_w = rng.dirichlet(np.ones(c), size=(h, w))
    p_hat = argmax_channels(p_w)
    wt = np.array([[1.0, 0.0], [1.0, 1.0]])
    m = np.array([[1.0, 0.0], [0.0, 1.0]])
    t = unified_copy_paste(x_w, y_w, u_s, p_w, p_hat, wt, m)
    ps_in, ps_out = rng.dirichlet(np.ones(c), size=(2, h, w))
    l_in, l_out = intermediate_losses(t, ps_in, ps_out)
    ones = [[1.0] * w for _ in range(h)]
    pin = oracles.mix(y_w.tolist(), p_hat.tolist(), m.tolist())
    pout = oracles.mix(p_hat.tolist(), y_w.tolist(), m.tolist())
    win = [[m[i][j] * ones[i][j] + (1 - m[i][j]) * wt[i][j] for j in range(w)] for i in range(h)]
    wout = [[m[i][j] * wt[i][j] + (1 - m[i][j]) * ones[i][j] for j in range(w)] for i in range(h)]
    assert abs(l_in - oracles.seg(pin, ps_in.tolist(), win)) <= 1e-12
    assert abs(l_out - oracles.seg(pout, ps_out.tolist(), wout)) <= 1e-12


def test_intermediate_degenerate():
    y, p, _ = rand_case(1, 2, 2, 2)
    t = unified_copy_paste(np.zeros((2, 2, 1)), y, np.zeros((2, 2, 1)), p, y, np.zeros((2, 2)), np.zeros((2, 2)))
    l_in, l_out = intermediate_losses(t, y, y)
    assert l_in < 1e-4 and l_out < 1e-4


def test_ensemble_weight():
    a = one_hot(np.array([[0, 1], [1, 0]]), 2)
    b = one_hot(np.array([[0, 0], [1, 1]]), 2)
    w = np.array([[1.0, 1.0], [0.0, 1.0]])
    w_mg = np.array([[1.0, 0.0], [1.0, 1.0]])
    assert ensemble_weight(a, b, w, w_mg).tolist() == [[1.0, 0.0], [0.0, 0.0]]
    assert np.array_equal(ensemble_weight(a, a, w, w_mg), w * w_mg)
    assert not ensemble_weight(a, 1 - a, w, w_mg).any()
    assert ensemble_weight(a, b, w, w_mg).tolist() == oracles.ensemble(a.tolist(), b.tolist(), w.tolist(), w_mg.tolist())


def test_ensemble_compares_labels_not_probabilities():
    p = np.array([[[0.4, 0.6]]])
    q = np.array([[[0.1, 0.9]]])
    assert ensemble_weight(argmax_channels(p), argmax_channels(q), np.ones((1, 1)), np.ones((1, 1)))[0, 0] == 1


def test_symmetric_and_supervised():
    y, p, w = rand_case(3, 2, 2, 2)
    assert symmetric_loss(y, p, np.zeros((2, 2))) == 0
    assert symmetric_loss(y, y, np.ones((2, 2))) < 1e-4
    assert symmetric_loss(y, p, w) == pytest.approx(oracles.seg(y.tolist(), p.tolist(), w.tolist()), abs=1e-12)
    assert supervised_loss(y, p) == weighted_ce(y, p) + weighted_dice(y, p)
    assert supervised_loss(y, y) < 1e-4


def test_lambda_values():
    assert lambda_schedule(100, 100) == 1.0
    assert lambda_schedule(0, 100) == pytest.approx(0.0067379, abs=1e-7)
    assert lambda_schedule(50, 100) == pytest.approx(0.082085, abs=1e-6)
    assert lambda_schedule(80, 100) == pytest.approx(0.36788, abs=1e-5)


def test_total_loss():
    b = total_loss(1, 2, 3, 4, 10, 10)
    assert b.l_total == 10 and b.lam == 1
    b0 = total_loss(1, 2, 3, 4, 0, 10)
    assert b0.l_total == pytest.approx(1 + math.exp(-5) * 5 + math.exp(-10) * 4, abs=1e-15)
    b8 = total_loss(1, 2, 3, 4, 8, 10)
    assert b8.l_total == pytest.approx(oracles.total(1, 2, 3, 4, 8, 10), abs=1e-14)


@pytest.mark.parametrize("term", ["l_s", "l_in", "l_out", "l_sym"])
def test_non_finite_term_named(term):
    vals = dict(l_s=1.0, l_in=1.0, l_out=1.0, l_sym=1.0)
    vals[term] = float("nan")
    with pytest.raises(TrainingIntegrityError) as e:
        total_loss(**vals, t=1, t_total=2)
    assert e.value.term == term
