"""Gradient baselines, prior scores and ablation configurations."""

import numpy as np
import pytest

from meed.core import BlackBoxModel, TrainConfig
from meed.baselines import (ABLATION_VARIANTS, ablation_config, grad_scores,
                            gradient_times_input_scores)


class SoftmaxLinear(BlackBoxModel):
    """y = softmax(W x); closed-form gradients for checking."""

    def __init__(self, w):
        self.w = np.asarray(w, dtype=np.float64)

    def evaluate(self, x):
        x = np.atleast_2d(x)
        logits = x @ self.w.T
        e = np.exp(logits - logits.max(axis=1, keepdims=True))
        return e / e.sum(axis=1, keepdims=True)

    def randomize(self, rng):
        self.w = rng.standard_normal(self.w.shape)


def analytic_gradient(model, x, cls):
    y = model.evaluate(x)[0]
    # d y_cls / d x = y_cls * (w_cls - sum_j y_j w_j)
    return y[cls] * (model.w[cls] - y @ model.w)


def test_grad_scores_match_analytic_softmax():
    w = np.array([[1.0, -2.0, 0.5], [-1.0, 2.0, -0.5]])
    model = SoftmaxLinear(w)
    x = np.array([0.3, -0.7, 1.2])
    cls = int(np.argmax(model.evaluate(x)[0]))
    expected = np.abs(analytic_gradient(model, x, cls))
    expected /= expected.sum()
    scores = grad_scores(model, x)
    assert np.allclose(scores.r, expected, atol=1e-3)
    assert scores.source_method == "grad"


def test_grad_scores_use_exact_gradient_when_available():
    w = np.array([[1.0, -2.0, 0.5], [-1.0, 2.0, -0.5]])

    class WithGradient(SoftmaxLinear):
        def gradient(self, x, class_index):
            return analytic_gradient(self, np.atleast_1d(x), class_index)

    fd_scores = grad_scores(SoftmaxLinear(w), np.array([0.3, -0.7, 1.2]))
    exact_scores = grad_scores(WithGradient(w), np.array([0.3, -0.7, 1.2]))
    assert np.allclose(fd_scores.r, exact_scores.r, atol=1e-4)


def test_grad_scores_explicit_class_index():
    w = np.array([[1.0, 0.0], [0.0, 1.0]])
    model = SoftmaxLinear(w)
    x = np.array([2.0, -2.0])
    s0 = grad_scores(model, x, class_index=0)
    s1 = grad_scores(model, x, class_index=1)
    assert np.allclose(s0.r.sum(), 1.0) and np.allclose(s1.r.sum(), 1.0)


def test_zero_gradient_falls_back_to_uniform():
    class Constant(BlackBoxModel):
        def evaluate(self, x):
            x = np.atleast_2d(x)
            return np.tile([0.5, 0.5], (len(x), 1))

        def randomize(self, rng):
            pass

    scores = grad_scores(Constant(), np.array([1.0, 2.0, 3.0, 4.0]))
    assert np.allclose(scores.r, 0.25)


def test_gradient_times_input_zero_input_uniform():
    w = np.array([[1.0, -2.0], [-1.0, 2.0]])
    scores = gradient_times_input_scores(SoftmaxLinear(w), np.zeros(2))
    assert np.allclose(scores.r, 0.5)


def test_gradient_times_input_weights_by_feature_value():
    w = np.array([[1.0, 1.0], [-1.0, -1.0]])
    model = SoftmaxLinear(w)
    x = np.array([2.0, 0.001])
    scores = gradient_times_input_scores(model, x)
    assert scores.r[0] > scores.r[1]


def test_ablation_variants_cover_table():
    base = TrainConfig(k=3, epochs=5, seed=0, lambda_u=0.7, lambda_e=0.01,
                       prior_method="grad")
    assert set(ABLATION_VARIANTS) == {"full", "w/o-Output", "w/o-AIL", "w/o-Prior"}

    full = ablation_config("full", base)
    assert full == base

    no_out = ablation_config("w/o-Output", base)
    assert not no_out.use_output_feedback
    assert no_out.lambda_u == base.lambda_u

    no_ail = ablation_config("w/o-AIL", base)
    assert no_ail.lambda_u == 0.0
    assert no_ail.use_output_feedback

    no_prior = ablation_config("w/o-Prior", base)
    assert no_prior.prior_method == "none"
    assert no_prior.lambda_e == 0.0

    with pytest.raises(ValueError):
        ablation_config("w/o-Gumbel", base)
